"""Error measures and parameter sweeps."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .data import Hypercube

log = logging.getLogger(__name__)


@dataclass
class ErrorReport:
    mre: float
    relative_errors: np.ndarray
    mre_drift: float
    mre_diffusion: float
    missed: list[int] = field(default_factory=list)
    spurious: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mre": self.mre,
            "mre_drift": self.mre_drift,
            "mre_diffusion": self.mre_diffusion,
            "relative_errors": [None if np.isnan(v) else float(v) for v in self.relative_errors],
            "missed": self.missed,
            "spurious": self.spurious,
        }


def mre(true_coeffs, learned, n_drift: int | None = None) -> ErrorReport:
    """Maximum relative error over the truly nonzero coefficients.

    Entries past ``n_drift`` count as diffusion parameters for the split
    drift/diffusion maxima.

    >>> round(mre([1, -1], [1.02, -0.98]).mre, 12)
    0.02
    """
    t = np.asarray(true_coeffs, dtype=float)
    v = np.asarray(learned, dtype=float)
    if t.shape != v.shape:
        raise ValueError(f"length mismatch: {t.shape} vs {v.shape}")
    nz = t != 0
    rel = np.full(t.shape, np.nan)
    rel[nz] = np.abs(v[nz] - t[nz]) / np.abs(t[nz])
    split = t.size if n_drift is None else n_drift

    def _max(sl):
        r = rel[sl]
        r = r[~np.isnan(r)]
        return float(r.max()) if r.size else 0.0

    return ErrorReport(
        mre=_max(slice(None)),
        relative_errors=rel,
        mre_drift=_max(slice(0, split)),
        mre_diffusion=_max(slice(split, None)),
        missed=[int(i) for i in np.flatnonzero(nz & (v == 0))],
        spurious=[int(i) for i in np.flatnonzero(~nz & (v != 0))],
    )


def l2_relative_error(f_true, f_learned, interval: Hypercube, grid_points: int = 2001) -> float:
    """``||f_true - f_learned|| / ||f_true||`` in L2 over a box, by the trapezoid
    rule on a uniform tensor grid with ``grid_points`` nodes per axis."""
    if grid_points < 2:
        raise ValueError("need at least 2 grid points")
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in zip(interval.lower, interval.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    shape = mesh[0].shape

    def sq_norm(vals):
        vals = np.asarray(vals, dtype=float).reshape(pts.shape[0], -1)
        g = np.sum(vals**2, axis=1).reshape(shape)
        for ax in reversed(axes):
            g = trapezoid(g, ax, axis=-1) if ax[-1] > ax[0] else g[..., 0]
        return float(g)

    ft = f_true(pts)
    denom = sq_norm(ft)
    if denom == 0:
        raise ValueError("reference function has zero L2 norm")
    return float(np.sqrt(sq_norm(np.asarray(ft) - np.asarray(f_learned(pts))) / denom))


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _set_path(cfg: dict, dotted: str, value):
    node = cfg
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def convergence_study(template: dict, sweep: dict, seeds) -> dict:
    """Run the full pipeline for every sweep value and seed.

    ``sweep`` maps one config key (dotted path, e.g. ``"observation.n_samples"``)
    to its list of values.  The result holds one row per value with the
    seed-averaged MRE, per-cell failures, and the log-log slope of MRE against
    the swept parameter.
    """
    from .experiment import run_experiment

    if len(sweep) != 1:
        raise ValueError("sweep exactly one parameter")
    (key, values), = sweep.items()
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    rows = []
    for v in values:
        mres, failures = [], []
        for s in seeds:
            cfg = copy.deepcopy(template)
            _set_path(cfg, key, v)
            try:
                res = run_experiment(cfg, seed=s)
                mres.append(res.errors.mre)
            except Exception as exc:  # cells fail independently
                log.warning("cell %s=%s seed=%s failed: %s", key, v, s, exc)
                failures.append({"seed": s, "error": f"{type(exc).__name__}: {exc}"})
        rows.append({
            "parameter": key,
            "value": v,
            "mean_mre": float(np.mean(mres)) if mres else float("nan"),
            "mres": mres,
            "failures": failures,
        })
    ok = [r for r in rows if np.isfinite(r["mean_mre"]) and r["mean_mre"] > 0]
    slope = loglog_slope([r["value"] for r in ok], [r["mean_mre"] for r in ok]) if len(ok) >= 2 else None
    return {"rows": rows, "slope": slope}
