"""Declarative experiment configuration and its validation."""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .pair import Channel
from .rng import config_hash

EXPERIMENTS = ("lineshape", "rabi", "qpm", "ordered", "groups", "bloch")
PRESET_PACKAGE = "rydqpm.configs"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


class TimeGrid(_Strict):
    """Uniform read-out grid ``linspace(0, stop, num)`` in us."""

    stop: float = Field(gt=0, le=100)
    num: int = Field(ge=2, le=100_000)


class DetuningGrid(_Strict):
    """Uniform detuning grid ``linspace(start, stop, num)`` in MHz."""

    start: float
    stop: float
    num: int = Field(ge=2, le=100_000)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.stop > self.start:
            raise ValueError("stop must exceed start")
        return self


class SequenceSpec(_Strict):
    """One control sequence: constant detuning (``zones = 1``) or QPM with ``zones = N``.

    ``detuning`` is in MHz unless ``detuning_unit`` is ``v_avg``, in which
    case it multiplies the ensemble's mean ``|V|``.
    """

    label: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.+-]+$")
    detuning: float
    zones: int = Field(default=1, ge=1, le=1000)
    detuning_unit: Literal["MHz", "v_avg"] = "MHz"

    @field_validator("zones")
    @classmethod
    def _even_or_one(cls, v):
        if v != 1 and v % 2:
            raise ValueError("QPM sequences need an even number of zones N (N >= 2); use 1 for constant detuning")
        return v


class OrderedSpec(_Strict):
    r_mean: float = Field(gt=0, le=1000)
    r_sigma: float = Field(ge=0, le=100)
    theta: float = Field(ge=0, le=math.pi)
    channels: list[str] = Field(default_factory=lambda: [c.name for c in Channel], min_length=1)

    @field_validator("channels")
    @classmethod
    def _known(cls, v):
        bad = [c for c in v if c not in Channel.__members__]
        if bad:
            raise ValueError(f"unknown channel(s) {bad}; choose from {list(Channel.__members__)}")
        return v

    def channel_weights(self):
        w = [0.0] * 4
        for c in self.channels:
            w[Channel[c]] += 1.0 / len(self.channels)
        return tuple(w)


class BlochSpec(_Strict):
    couplings: list[float] = Field(min_length=1)
    detuning: float = Field(gt=0)
    zones: int = Field(ge=2, le=1000)
    zone_fraction: float = Field(default=0.25, gt=0, le=10)
    samples_per_zone: int = Field(default=50, ge=1, le=100_000)

    @field_validator("zones")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("QPM sequences need an even number of zones N")
        return v


class ExperimentConfig(_Strict):
    """One experiment run.

    Which optional sections are required depends on ``experiment``; see
    :func:`validate`.
    """

    experiment: Literal["lineshape", "rabi", "qpm", "ordered", "groups", "bloch"]
    name: str = Field(default="run", pattern=r"^[A-Za-z0-9_.-]+$")
    seed: int = Field(default=0, ge=0, lt=2**63)
    rho: float | None = Field(default=None, gt=0, le=1e14)
    n_samples: int | None = Field(default=None, ge=1, le=100_000_000)
    n_groups: int | None = Field(default=None, ge=1, le=10_000_000)
    interaction_time: float | None = Field(default=None, gt=0, le=100)
    detunings: DetuningGrid | None = None
    percentiles: list[float] = Field(default_factory=list)
    times: TimeGrid | None = None
    protocol: Literal["truncate", "rescale"] = "rescale"
    sequences: list[SequenceSpec] = Field(default_factory=list)
    ordered: OrderedSpec | None = None
    exchange: bool = True
    two_atom_reference: bool = False
    bloch: BlochSpec | None = None

    @field_validator("percentiles")
    @classmethod
    def _pct(cls, v):
        for q in v:
            if not 0 < q < 100:
                raise ValueError(f"percentiles must lie strictly between 0 and 100, got {q}")
        return v

    @model_validator(mode="after")
    def _requirements(self):
        need = {
            "lineshape": ("rho", "n_samples", "interaction_time", "detunings"),
            "rabi": ("rho", "n_samples", "times"),
            "qpm": ("rho", "n_samples", "times", "sequences"),
            "ordered": ("ordered", "n_samples", "times", "sequences"),
            "groups": ("rho", "n_groups", "times", "sequences"),
            "bloch": ("bloch",),
        }[self.experiment]
        missing = [k for k in need if getattr(self, k) in (None, [])]
        if missing:
            raise ValueError(f"experiment '{self.experiment}' requires {', '.join(missing)}")
        labels = [s.label for s in self.sequences]
        if len(set(labels)) != len(labels):
            raise ValueError("sequence labels must be unique")
        if self.experiment != "ordered" and any(s.detuning_unit == "v_avg" for s in self.sequences):
            raise ValueError("detuning_unit 'v_avg' is only available for ordered experiments")
        return self

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def hash(self) -> str:
        return config_hash(self.canonical())


def _format_error(err) -> str:
    loc = ".".join(str(x) for x in err["loc"]) or "<root>"
    msg = err["msg"].removeprefix("Value error, ")
    return f"{loc}: {msg}"


def validate(data) -> list[str]:
    """Field-level error messages for a raw config mapping; empty when valid."""
    if not isinstance(data, dict):
        return ["<root>: configuration must be a mapping"]
    try:
        ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        return [_format_error(e) for e in exc.errors()]
    return []


def parse(data) -> ExperimentConfig:
    return ExperimentConfig.model_validate(data)


def load_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return {} if data is None else data


def preset_names() -> list[str]:
    root = resources.files(PRESET_PACKAGE)
    return sorted(Path(p.name).stem for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> dict:
    if name not in preset_names():
        raise KeyError(f"unknown preset '{name}'; available: {', '.join(preset_names())}")
    text = resources.files(PRESET_PACKAGE).joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text)
