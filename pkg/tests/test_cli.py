import json
import subprocess
import sys

import pytest
import yaml

from rydqpm import cli
from rydqpm.config import load_preset, parse, preset_names, validate
from rydqpm.records import read_table

SMALL_GROUPS = {
    "experiment": "groups",
    "name": "tiny",
    "seed": 5,
    "rho": 1e9,
    "n_groups": 300,
    "times": {"stop": 0.4, "num": 21},
    "sequences": [
        {"label": "resonance", "detuning": 0.0},
        {"label": "qpm_n2", "detuning": 15.0, "zones": 2},
    ],
    "two_atom_reference": True,
}


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def _outputs(directory):
    return sorted(p.name for p in directory.iterdir() if not p.name.startswith("."))


# ---------------------------------------------------------------- validation


@pytest.mark.parametrize("name", preset_names())
def test_presets_validate(name):
    assert validate(load_preset(name)) == []
    assert cli.main(["validate", "--preset", name]) == 0


def test_expected_presets_exist():
    expected = {"fig1_lineshape", "fig1_inset", "fig2a", "fig2b", "fig3a", "fig3b", "fig3c", "sm_ordered"}
    assert expected <= set(preset_names())
    assert {"sm_bloch_qpm1", "sm_bloch_qpm2", "sm_bloch_qpm3"} <= set(preset_names())


def test_odd_zone_count_names_even():
    bad = {**SMALL_GROUPS, "sequences": [{"label": "q", "detuning": 15.0, "zones": 3}]}
    errors = validate(bad)
    assert len(errors) == 1
    assert errors[0].startswith("sequences.0.zones") and "even" in errors[0]


def test_every_error_is_listed():
    bad = {**SMALL_GROUPS, "rho": -1.0, "n_groups": 0, "times": {"stop": 0.4, "num": 1}}
    errors = validate(bad)
    locs = {e.split(":")[0] for e in errors}
    assert {"rho", "n_groups", "times.num"} <= locs


@pytest.mark.parametrize(
    "patch",
    [
        {"rho": 0.0},
        {"rho": float("nan")},
        {"times": {"stop": float("inf"), "num": 5}},
        {"sequences": []},
        {"name": ""},
        {"unknown_field": 1},
        {"experiment": "nonsense"},
    ],
)
def test_invalid_configs_exit_2_without_outputs(tmp_path, capsys, patch):
    cfg = _write(tmp_path, {**SMALL_GROUPS, **patch})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 2
    assert not out.exists() or _outputs(out) == []
    assert capsys.readouterr().err


def test_missing_section_reported():
    errors = validate({"experiment": "lineshape", "rho": 1e9})
    assert any("requires" in e and "n_samples" in e for e in errors)
    assert validate([1, 2]) == ["<root>: configuration must be a mapping"]


def test_v_avg_only_for_ordered():
    bad = {**SMALL_GROUPS, "sequences": [{"label": "a", "detuning": 2.0, "detuning_unit": "v_avg"}]}
    assert any("v_avg" in e for e in validate(bad))


def test_unknown_preset_and_missing_file(tmp_path, capsys):
    assert cli.main(["validate", "--preset", "nope"]) == 2
    assert cli.main(["validate", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_worker_count(tmp_path):
    cfg = _write(tmp_path, SMALL_GROUPS)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "0"]) == 2


def test_hash_is_canonical():
    a = parse(SMALL_GROUPS)
    b = parse(dict(reversed(list(SMALL_GROUPS.items()))))
    assert a.hash() == b.hash()
    assert a.hash() != parse({**SMALL_GROUPS, "seed": 6}).hash()


# ---------------------------------------------------------------- runs


def test_run_writes_csv_and_manifest(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_GROUPS)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--workers", "2"]) == 0
    assert _outputs(out) == ["tiny.csv", "tiny.manifest.json"]
    manifest = json.loads((out / "tiny.manifest.json").read_text())
    assert manifest["outputs"] == ["tiny.csv"]
    assert manifest["config_hash"] == parse(SMALL_GROUPS).hash()
    assert manifest["seed"] == 5 and manifest["warnings"] == []
    header, rows = read_table(out / "tiny.csv")
    assert header["config_hash"] == manifest["config_hash"]
    assert list(rows[0]) == ["label", "model", "time_us", "p_population", "p_stderr", "s_population", "sprime_population"]
    assert {(r["label"], r["model"]) for r in rows} == {
        ("resonance", "4-atom"),
        ("resonance", "2-atom"),
        ("qpm_n2", "4-atom"),
        ("qpm_n2", "2-atom"),
    }
    assert len(rows) == 4 * 21
    assert all(float(r["p_population"]) == 1.0 for r in rows if r["time_us"] == "0.0")


def test_seed_override_and_verbose_dump(tmp_path):
    cfg = _write(tmp_path, {**SMALL_GROUPS, "n_groups": 3})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "9", "-v", "--workers", "1"]) == 0
    manifest = json.loads((out / "tiny.manifest.json").read_text())
    assert manifest["seed"] == 9
    _, rows = read_table(out / "tiny_groups.csv")
    assert len(rows) == 12 and {r["basis_size"] for r in rows} == {"19"}


def test_runs_byte_identical_across_workers(tmp_path):
    cfg = _write(tmp_path, SMALL_GROUPS)
    paths = []
    for k, workers in enumerate(("1", "4", "4")):
        out = tmp_path / f"o{k}"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--workers", workers]) == 0
        paths.append((out / "tiny.csv").read_bytes())
    assert paths[0] == paths[1] == paths[2]


@pytest.mark.parametrize(
    "data",
    [
        {"experiment": "lineshape", "rho": 1e9, "n_samples": 2000, "interaction_time": 0.5,
         "detunings": {"start": -10, "stop": 10, "num": 21}, "percentiles": [50]},
        {"experiment": "rabi", "rho": 1e9, "n_samples": 2000, "times": {"stop": 0.5, "num": 11}, "percentiles": [20, 80]},
        {"experiment": "qpm", "rho": 1e9, "n_samples": 2000, "times": {"stop": 0.4, "num": 11},
         "sequences": [{"label": "n4", "detuning": 15, "zones": 4}]},
        {"experiment": "ordered", "n_samples": 500, "times": {"stop": 0.3, "num": 31},
         "ordered": {"r_mean": 3.0, "r_sigma": 0.05, "theta": 0.0, "channels": ["PlusMinus"]},
         "sequences": [{"label": "q", "detuning": 5.0, "zones": 4, "detuning_unit": "v_avg"}]},
        {"experiment": "bloch", "bloch": {"couplings": [0.1, 0.2], "detuning": 1.0, "zones": 2}},
    ],
    ids=["lineshape", "rabi", "qpm", "ordered", "bloch"],
)
def test_each_experiment_runs(tmp_path, data):
    cfg = _write(tmp_path, {**data, "name": "x"})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 0
    header, rows = read_table(out / "x.csv")
    assert header["experiment"] == data["experiment"] and rows


def test_lineshape_header_reports_widths(tmp_path):
    data = {"experiment": "lineshape", "name": "ls", "rho": 1e9, "n_samples": 5000, "interaction_time": 0.5,
            "detunings": {"start": -20, "stop": 20, "num": 81}, "percentiles": [50]}
    cli.main(["run", "--config", str(_write(tmp_path, data)), "--out", str(tmp_path), "--workers", "1"])
    header, rows = read_table(tmp_path / "ls.csv")
    assert float(header["hwhm_MHz"]) > 0 and float(header["coupling_p50_MHz"]) > 0
    assert set(rows[0]) >= {"detuning_MHz", "field_V_per_cm", "transfer", "transfer_stderr", "lorentzian_p50"}


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    import numpy as np

    def boom(H):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(np.linalg, "eigh", boom)
    cfg = _write(tmp_path, SMALL_GROUPS)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 3
    assert _outputs(out) == []


def test_presets_subcommand_and_help(capsys):
    assert cli.main(["presets"]) == 0
    assert "fig2a" in capsys.readouterr().out.split()
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    assert "exit status" in text and "sm_ordered" in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rydqpm", "presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "fig1_lineshape" in res.stdout
