"""Ground-truth aggregate data from a known SDE via Euler-Maruyama."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import AggregateData, Snapshot
from .dictionary import Basis, Term, eval_basis

BLOWUP_THRESHOLD = 1e12


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdeModel:
    """``dX = drift(X) dt + sigma(X) dW``.

    ``drift`` maps an ``(n, d)`` array of states to ``(n, d)``; ``sigma`` maps it
    to either a constant ``(d, w)`` matrix or a per-state ``(n, d, w)`` stack.
    """

    dimension: int
    drift: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    noise_dimension: Optional[int] = None

    @property
    def w(self) -> int:
        return self.noise_dimension or self.dimension


@dataclass(frozen=True)
class InitialSampler:
    kind: str
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "gaussian":
            mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
            std = np.broadcast_to(np.asarray(self.std, dtype=float), mean.shape).copy()
            if np.any(std <= 0):
                raise ValueError("initial std must be positive")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "std", std)
        elif self.kind == "point-set":
            object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        else:
            raise ValueError(f"unknown initial sampler {self.kind!r}")

    @classmethod
    def gaussian(cls, mean, std) -> "InitialSampler":
        return cls("gaussian", mean=mean, std=std)

    @classmethod
    def point_set(cls, points) -> "InitialSampler":
        return cls("point-set", points=points)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean + self.std * rng.standard_normal((n, self.mean.size))
        if self.points.shape[0] == n:
            return self.points.copy()
        return self.points[rng.integers(0, self.points.shape[0], size=n)]


@dataclass(frozen=True)
class PathEnsemble:
    """States of all paths at the recorded grid times, shape ``(T, n_paths, d)``."""

    dt: float
    times: np.ndarray
    states: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]


def euler_maruyama(model: SdeModel, init: InitialSampler, dt: float, t_end: float, n_paths: int,
                   rng: np.random.Generator, record_times=None) -> PathEnsemble:
    """Integrate ``n_paths`` independent paths on the grid ``0, dt, 2dt, ...``.

    Only the grid points listed in ``record_times`` are kept when given (each
    must lie on the grid); otherwise every step is stored.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < dt:
        raise ValueError("t_end must be at least dt")
    if n_paths < 1:
        raise ValueError("need at least one path")
    n_steps = int(round(t_end / dt))
    if record_times is None:
        keep = np.arange(n_steps + 1)
    else:
        keep = np.array([_grid_index(t, dt) for t in record_times])
        if keep.max() > n_steps:
            raise ValueError(f"record time beyond t_end={t_end}")
    keep_set = {int(k): pos for pos, k in enumerate(keep)}
    d, w = model.dimension, model.w
    x = init.sample(n_paths, rng)
    if x.shape != (n_paths, d):
        raise ValueError(f"initial states have shape {x.shape}, expected {(n_paths, d)}")
    out = np.empty((keep.size, n_paths, d))
    if 0 in keep_set:
        out[keep_set[0]] = x
    sq = np.sqrt(dt)
    for step in range(1, n_steps + 1):
        dw = rng.standard_normal((n_paths, w))
        sig = np.asarray(model.sigma(x), dtype=float)
        if sig.ndim == 2:
            noise = dw @ sig.T
        else:
            noise = np.einsum("nij,nj->ni", sig, dw)
        x = x + model.drift(x) * dt + sq * noise
        if not np.all(np.abs(x) <= BLOWUP_THRESHOLD):
            raise SimulationError(f"state blew up at step {step} (t={step * dt:g})")
        pos = keep_set.get(step)
        if pos is not None:
            out[pos] = x
    return PathEnsemble(dt, keep * dt, out)


def _grid_index(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if abs(t - k * dt) > 1e-12 * dt + 1e-15 * abs(t):
        raise ValueError(f"time {t} not on simulation grid (dt={dt})")
    return k


def extract_snapshots(paths: PathEnsemble, times, n_samples: int, rng: np.random.Generator) -> AggregateData:
    """Draw ``n_samples`` distinct paths per time, independently per time, so
    rows at different times carry no pairing."""
    if n_samples > paths.n_paths:
        raise ValueError(f"n_samples={n_samples} exceeds n_paths={paths.n_paths}")
    snaps = []
    for t in times:
        k = _grid_index(t, paths.dt)
        hits = np.nonzero(np.round(paths.times / paths.dt).astype(int) == k)[0]
        if hits.size == 0:
            raise ValueError(f"time {t} not on simulation grid (not recorded)")
        idx = rng.permutation(paths.n_paths)[:n_samples]
        snaps.append(Snapshot(float(t), paths.states[hits[0]][idx]))
    return AggregateData(paths.states.shape[2], tuple(snaps))


# -- models built from term expansions -------------------------------------------------

def _named_drift(name: str) -> Callable[[np.ndarray], np.ndarray]:
    if name == "gauss-bump":
        return lambda x: -2.0 * x * np.exp(-x**2)
    raise ValueError(f"unknown named drift {name!r}")


def _expansion(d: int, components) -> tuple[Basis, np.ndarray]:
    """Terms and coefficient matrix of shape ``(b, len(components))``."""
    terms: list[Term] = []
    for comp in components:
        for t in comp:
            term = Term.from_json(t)
            if term not in terms:
                terms.append(term)
    basis = Basis(d, tuple(terms))
    C = np.zeros((basis.size, len(components)))
    for c, comp in enumerate(components):
        for t in comp:
            C[basis.index(Term.from_json(t)), c] += float(t["coef"])
    return basis, C


def model_from_json(obj: dict) -> SdeModel:
    """Build a model from ``{"dimension", "drift", "sigma"}``.

    ``drift`` is either ``{"named": ...}`` or a list (one per component) of term
    lists, each term ``{"powers": [...], "trig"?: {...}, "coef": c}``.
    ``sigma`` is ``{"matrix": [[...]]}`` for a constant matrix or
    ``{"entries": [[terms, ...], ...]}`` for a state-dependent one.
    """
    d = int(obj["dimension"])
    drift_spec = obj["drift"]
    if isinstance(drift_spec, dict) and "named" in drift_spec:
        drift = _named_drift(drift_spec["named"])
    else:
        if len(drift_spec) != d:
            raise ValueError("drift needs one term list per dimension")
        basis, C = _expansion(d, drift_spec)
        drift = lambda x, basis=basis, C=C: eval_basis(basis, x) @ C
    sig = obj["sigma"]
    if "matrix" in sig:
        S = np.atleast_2d(np.asarray(sig["matrix"], dtype=float))
        if S.shape[0] != d:
            raise ValueError("sigma matrix must have d rows")
        sigma = lambda x, S=S: S
        w = S.shape[1]
    else:
        rows = sig["entries"]
        w = len(rows[0])
        flat = [entry for row in rows for entry in row]
        basis_s, Cs = _expansion(d, flat)

        def sigma(x, basis=basis_s, C=Cs, w=w):
            return (eval_basis(basis, x) @ C).reshape(x.shape[0], d, w)
    return SdeModel(d, drift, sigma, w)
