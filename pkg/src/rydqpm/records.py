"""Time-evolution records and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import __version__

MODELS = ("2-atom", "4-atom", "ordered")


@dataclass(eq=False)
class EvolutionRecord:
    """Ensemble-averaged ``p`` population on a time grid.

    Attributes
    ----------
    times : ndarray
        Read-out times in us.
    p_population : ndarray
        Mean fraction of atoms (or pair amplitude) still in ``pp``.
    metadata : dict
        At least ``model``, ``seed`` and ``config_hash``.
    p_stderr : ndarray, optional
        Standard error of the mean at each time.
    extra : dict
        Additional named columns, e.g. ``s_population``.
    """

    times: np.ndarray
    p_population: np.ndarray
    metadata: dict = field(default_factory=dict)
    p_stderr: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.p_population = np.clip(np.asarray(self.p_population, dtype=float), 0.0, 1.0)
        if self.p_stderr is not None:
            self.p_stderr = np.asarray(self.p_stderr, dtype=float)
        if self.times.shape != self.p_population.shape:
            raise ValueError("times and p_population must have the same shape")

    @property
    def model(self):
        return self.metadata.get("model")

    def columns(self):
        cols = {"time_us": self.times, "p_population": self.p_population}
        if self.p_stderr is not None:
            cols["p_stderr"] = self.p_stderr
        cols.update(self.extra)
        return cols

    def to_csv(self, path, label=None):
        write_table(path, self.columns(), header=self.metadata, label=label)


def format_value(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def header_lines(header: dict):
    lines = [f"# rydqpm {__version__}"]
    for key in sorted(header):
        lines.append(f"# {key}: {header[key]}")
    return lines


def write_table(path, columns: dict, header: dict | None = None, label=None):
    """Write equal-length columns as CSV with a ``#`` comment header.

    No timestamps are written, so identical inputs give identical bytes.
    """
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        for line in header_lines(header or {}):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["label"] if label is not None else []) + names)
        for i in range(n):
            row = [format_value(columns[c][i]) for c in names]
            w.writerow(([label] if label is not None else []) + row)


def append_table(path, columns: dict, label):
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i in range(n):
            w.writerow([label] + [format_value(columns[c][i]) for c in names])


def read_table(path):
    """Inverse of :func:`write_table`: returns ``(header, rows)``."""
    header = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            if ": " in line:
                k, v = line[2:].split(": ", 1)
                header[k] = v
        else:
            body.append(line)
    rows = list(csv.DictReader(body))
    return header, rows
