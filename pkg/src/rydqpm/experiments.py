"""Run configured experiments and write CSV outputs plus a run manifest."""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import ensemble as ens
from . import multiatom
from .config import ExperimentConfig, SequenceSpec
from .errors import NotApplicableError
from .pair import generalized_rabi
from .records import write_table
from .twolevel import PulseSequence, bloch_columns, bloch_trajectory, qpm_sequence, transfer_probability
from .units import LINEAR_FIELD_RANGE, CONSTANTS, field_from_detuning

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    """Summary of one run; the only place wall-clock values are recorded."""

    name: str
    experiment: str
    config_hash: str
    seed: int
    version: str
    wall_time_s: float
    finished_utc: str
    outputs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def write(self, path):
        """Write as JSON via a temporary file and an atomic rename."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


def build_sequence(spec: SequenceSpec, T, scale=1.0) -> PulseSequence:
    E = spec.detuning * scale
    if spec.zones == 1:
        return PulseSequence.constant(E, T)
    return qpm_sequence(E, T, spec.zones)


def time_grid(cfg: ExperimentConfig):
    return np.linspace(0.0, cfg.times.stop, cfg.times.num)


def _header(cfg: ExperimentConfig, **extra):
    head = {"experiment": cfg.experiment, "name": cfg.name, "seed": cfg.seed, "config_hash": cfg.hash()}
    head.update(extra)
    return head


def _stack(blocks):
    """Concatenate per-label column dicts into one long table."""
    out = {}
    for block in blocks:
        for k, v in block.items():
            out.setdefault(k, []).extend(list(v))
    return out


def _record_block(label, record, extra_cols=()):
    n = record.times.size
    block = {
        "label": [label] * n,
        "model": [record.model] * n,
        "time_us": record.times,
        "p_population": record.p_population,
        "p_stderr": record.p_stderr if record.p_stderr is not None else np.zeros(n),
    }
    for k in extra_cols:
        block[k] = record.extra[k]
    return block


# ---------------------------------------------------------------- experiments


def _run_lineshape(cfg, out, workers):
    ecfg = ens.EnsembleConfig(cfg.rho, cfg.n_samples, cfg.seed)
    E = np.linspace(cfg.detunings.start, cfg.detunings.stop, cfg.detunings.num)
    ls = ens.lineshape(ecfg, cfg.interaction_time, E, workers)
    fields = np.array([field_from_detuning(e) for e in E])
    cols = {"detuning_MHz": E, "field_V_per_cm": fields, "transfer": ls.transfer, "transfer_stderr": ls.stderr}
    head = _header(cfg, rho_per_cm3=cfg.rho, interaction_time_us=cfg.interaction_time, n_samples=cfg.n_samples)
    if cfg.percentiles:
        V = np.atleast_1d(ens.percentile_coupling(ecfg, cfg.percentiles, workers))
        for q, v in zip(cfg.percentiles, V):
            cols[f"lorentzian_p{q:g}"] = ens.lorentzian(v, E)
            head[f"coupling_p{q:g}_MHz"] = float(v)
    if 0.0 in E and E.max() > 0:
        try:
            head["hwhm_MHz"] = ls.hwhm()
        except NotApplicableError:
            pass
    if np.any(np.abs(fields - CONSTANTS.F0) > LINEAR_FIELD_RANGE):
        warnings.warn("detuning grid extends beyond the linear field-detuning range", stacklevel=2)
    path = out / f"{cfg.name}.csv"
    write_table(path, cols, head)
    return [path]


def _run_rabi(cfg, out, workers):
    ecfg = ens.EnsembleConfig(cfg.rho, cfg.n_samples, cfg.seed)
    t = time_grid(cfg)
    seq = PulseSequence.constant(0.0, cfg.times.stop)
    rec = ens.ensemble_evolution(ecfg, seq, t, "truncate", workers)
    cols = {
        "time_us": t,
        "p_population": rec.p_population,
        "p_stderr": rec.p_stderr,
        "transfer": 1.0 - rec.p_population,
    }
    head = _header(cfg, rho_per_cm3=cfg.rho, n_samples=cfg.n_samples, model=rec.model)
    if cfg.percentiles:
        V = np.atleast_1d(ens.percentile_coupling(ecfg, cfg.percentiles, workers))
        for q, v in zip(cfg.percentiles, V):
            cols[f"pair_transfer_p{q:g}"] = transfer_probability(0.0, v, t)
            head[f"coupling_p{q:g}_MHz"] = float(v)
    path = out / f"{cfg.name}.csv"
    write_table(path, cols, head)
    return [path]


def _run_qpm(cfg, out, workers):
    ecfg = ens.EnsembleConfig(cfg.rho, cfg.n_samples, cfg.seed)
    t = time_grid(cfg)
    blocks = []
    for spec in cfg.sequences:
        log.info("2-atom ensemble: %s", spec.label)
        rec = ens.ensemble_evolution(ecfg, build_sequence(spec, cfg.times.stop), t, cfg.protocol, workers)
        blocks.append(_record_block(spec.label, rec))
    path = out / f"{cfg.name}.csv"
    head = _header(cfg, rho_per_cm3=cfg.rho, n_samples=cfg.n_samples, protocol=cfg.protocol)
    write_table(path, _stack(blocks), head)
    return [path]


def _run_ordered(cfg, out, workers):
    o = cfg.ordered
    ocfg = ens.OrderedConfig(o.r_mean, o.r_sigma, o.theta, cfg.n_samples, cfg.seed, o.channel_weights())
    v_avg = ens.mean_abs_coupling(ocfg, workers)
    t = time_grid(cfg)
    blocks = []
    head = _header(cfg, n_samples=cfg.n_samples, protocol=cfg.protocol, v_avg_MHz=v_avg)
    for spec in cfg.sequences:
        scale = v_avg if spec.detuning_unit == "v_avg" else 1.0
        seq = build_sequence(spec, cfg.times.stop, scale)
        head[f"detuning_{spec.label}_MHz"] = spec.detuning * scale
        rec = ens.ordered_array_evolution(ocfg, seq, t, cfg.protocol, workers)
        blocks.append(_record_block(spec.label, rec))
    path = out / f"{cfg.name}.csv"
    write_table(path, _stack(blocks), head)
    return [path]


def _run_groups(cfg, out, workers, verbose=False):
    t = time_grid(cfg)
    blocks = []
    extra = ("s_population", "sprime_population")
    variants = [(4, cfg.exchange)]
    if cfg.two_atom_reference:
        variants.append((2, False))
    for spec in cfg.sequences:
        seq = build_sequence(spec, cfg.times.stop)
        for n_atoms, exchange in variants:
            log.info("%d-atom groups: %s", n_atoms, spec.label)
            rec = multiatom.ensemble_average_groups(
                cfg.rho, seq, cfg.n_groups, cfg.seed, t, cfg.protocol, exchange, n_atoms, workers
            )
            if n_atoms == 2:
                rec.metadata["model"] = "2-atom"
            blocks.append(_record_block(spec.label, rec, extra))
    head = _header(cfg, rho_per_cm3=cfg.rho, n_groups=cfg.n_groups, protocol=cfg.protocol, exchange=cfg.exchange)
    path = out / f"{cfg.name}.csv"
    write_table(path, _stack(blocks), head)
    paths = [path]
    if verbose:
        paths.append(_dump_groups(cfg, out))
    return paths


def _dump_groups(cfg, out):
    cols = {k: [] for k in ("group", "atom", "x_um", "y_um", "z_um", "mj_sign", "basis_size")}
    for k, g in multiatom.iter_groups(cfg.rho, cfg.n_groups, cfg.seed):
        dim = len(multiatom.enumerate_basis(g, cfg.exchange))
        for a in range(g.n_atoms):
            for key, val in zip(cols, (k, a, *g.positions[a], int(g.mj_signs[a]), dim)):
                cols[key].append(val)
    path = out / f"{cfg.name}_groups.csv"
    write_table(path, cols, _header(cfg, cube_edge_um=multiatom.cube_edge(cfg.rho)))
    return path


def _run_bloch(cfg, out, workers):
    b = cfg.bloch
    v_mid = float(np.mean(b.couplings))
    zone = b.zone_fraction / float(generalized_rabi(b.detuning, v_mid))
    seq = qpm_sequence(b.detuning, zone * b.zones, b.zones)
    dt = zone / b.samples_per_zone
    blocks = []
    for v in b.couplings:
        cols = bloch_columns(bloch_trajectory(seq, v, dt))
        n = len(cols["time_us"])
        blocks.append({"label": [f"V={v:g}"] * n, "coupling_MHz": [v] * n, **cols})
    head = _header(cfg, detuning_MHz=b.detuning, zones=b.zones, zone_duration_us=zone)
    path = out / f"{cfg.name}.csv"
    write_table(path, _stack(blocks), head)
    return [path]


_DISPATCH = {
    "lineshape": _run_lineshape,
    "rabi": _run_rabi,
    "qpm": _run_qpm,
    "ordered": _run_ordered,
    "groups": _run_groups,
    "bloch": _run_bloch,
}


def run(cfg: ExperimentConfig, out_dir, workers=1, verbose=False) -> RunManifest:
    """Run one experiment; outputs appear in ``out_dir`` only if it succeeds.

    Files are produced in a scratch directory next to ``out_dir`` and moved
    into place at the end, followed by the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    scratch = Path(tempfile.mkdtemp(dir=out_dir, prefix=".run-"))
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            func = _DISPATCH[cfg.experiment]
            if cfg.experiment == "groups":
                produced = func(cfg, scratch, workers, verbose)
            else:
                produced = func(cfg, scratch, workers)
        final = []
        for p in produced:
            dest = out_dir / p.name
            os.replace(p, dest)
            final.append(dest.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    manifest = RunManifest(
        name=cfg.name,
        experiment=cfg.experiment,
        config_hash=cfg.hash(),
        seed=cfg.seed,
        version=__version__,
        wall_time_s=round(time.perf_counter() - start, 3),
        finished_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        outputs=final,
        warnings=sorted({str(w.message) for w in caught}),
        config=cfg.canonical(),
    )
    manifest.write(out_dir / f"{cfg.name}.manifest.json")
    return manifest
