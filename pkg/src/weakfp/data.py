"""Aggregate (trajectory-free) snapshot data: containers, CSV I/O, noise."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent aggregate data."""


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """The repo-wide generator: Philox (counter based) keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Snapshot:
    time: float
    samples: np.ndarray

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError(f"snapshot at t={self.time} has no samples")
        if not np.all(np.isfinite(x)):
            raise DataError(f"snapshot at t={self.time} contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class AggregateData:
    """Ordered snapshots sharing one state dimension; sample counts may differ."""

    dimension: int
    snapshots: tuple[Snapshot, ...]

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        object.__setattr__(self, "snapshots", snaps)
        if len(snaps) < 2:
            raise DataError("need at least 2 snapshots")
        times = np.array([s.time for s in snaps])
        if np.any(np.diff(times) <= 0):
            raise DataError("snapshot times must be strictly increasing")
        for s in snaps:
            if s.samples.shape[1] != self.dimension:
                raise DataError(
                    f"snapshot at t={s.time} has dimension {s.samples.shape[1]}, "
                    f"expected {self.dimension}"
                )

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def sample_counts(self) -> list[int]:
        return [s.n for s in self.snapshots]

    def __len__(self) -> int:
        return len(self.snapshots)


@dataclass(frozen=True)
class Hypercube:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have equal length")
        if np.any(lo > hi):
            raise ValueError("hypercube lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray) -> bool:
        x = np.atleast_2d(x)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))


def data_bounds(data: AggregateData, padding: float = 0.0) -> Hypercube:
    """Tight axis-aligned box around every sample; ``padding`` widens each side
    by that fraction of the axis extent."""
    allx = np.concatenate([s.samples for s in data.snapshots])
    lo, hi = allx.min(axis=0), allx.max(axis=0)
    if padding:
        ext = hi - lo
        lo, hi = lo - padding * ext, hi + padding * ext
    return Hypercube(lo, hi)


def add_multiplicative_noise(data: AggregateData, delta: float, rng: np.random.Generator) -> AggregateData:
    """Replace every scalar entry x by x * (1 + delta * u), u ~ U[-1, 1]."""
    if delta < 0:
        raise ValueError(f"noise level must be non-negative, got {delta}")
    if delta == 0:
        return data
    snaps = []
    for s in data.snapshots:
        u = rng.uniform(-1.0, 1.0, size=s.samples.shape)
        snaps.append(Snapshot(s.time, s.samples * (1.0 + delta * u)))
    return AggregateData(data.dimension, tuple(snaps))


def save_aggregate_csv(data: AggregateData, path: str | Path) -> None:
    """Write ``t,x1,...,xd`` rows, 17 significant digits, LF line endings."""
    path = Path(path)
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(data.dimension)])
    rows = np.concatenate(
        [np.column_stack([np.full(s.n, s.time), s.samples]) for s in data.snapshots]
    )
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            # %.17g round-trips every double and drops trailing zeros
            np.savetxt(fh, rows, fmt="%.17g", delimiter=",", header=header, comments="")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def load_aggregate_csv(path: str | Path) -> AggregateData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in first.strip().split(",")]
    d = len(header) - 1
    if d < 1 or header != ["t"] + [f"x{i + 1}" for i in range(d)]:
        raise DataError(f"{path}: line 1: malformed header {header!r}, expected t,x1,...,xd")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty body is reported below
            rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except ValueError:
        _locate_bad_cell(path, header)
        raise
    if rows.size == 0:
        raise DataError(f"{path}: empty data")
    if rows.shape[1] != d + 1:
        raise DataError(f"{path}: expected {d + 1} columns, got {rows.shape[1]}")
    if not np.all(np.isfinite(rows)):
        bad = np.argwhere(~np.isfinite(rows))[0]
        raise DataError(f"{path}: line {bad[0] + 2}, column {bad[1] + 1} ({header[bad[1]]}): non-finite value")
    times, inverse = np.unique(rows[:, 0], return_inverse=True)
    if times.size < 2:
        raise DataError(f"{path}: only a single distinct time value; need at least 2 snapshots")
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(times.size + 1))
    snaps = tuple(
        Snapshot(t, rows[order[bounds[k]:bounds[k + 1]], 1:]) for k, t in enumerate(times)
    )
    return AggregateData(d, snaps)


def _locate_bad_cell(path: Path, header: list[str]) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} columns, got {len(row)}"
                )
            for col, cell in enumerate(row):
                try:
                    float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, column {col + 1} ({header[col]}): non-numeric value {cell!r}"
                    ) from None
