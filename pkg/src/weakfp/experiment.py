"""Config-driven pipeline: simulate, fit, evaluate, report."""

from __future__ import annotations

import copy
import json
import subprocess
import time
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .assembly import (
    DiffusionStructure, DriftSpec, LinearSystem, LmmScheme, build_system, default_scheme,
    term_labels,
)
from .data import AggregateData, Hypercube, add_multiplicative_noise, data_bounds, make_rng
from .dictionary import Basis, Term, complete_polynomial_basis, tensor_product_basis
from .kernels import kernels_digest, sample_kernels_lhs
from .metrics import ErrorReport, l2_relative_error, mre
from .regression import LearnedSde, SparsityWarning, StridgeConfig, least_squares, reconstruct_model, stridge
from .simulate import InitialSampler, euler_maruyama, extract_snapshots, model_from_json

PRESETS = (
    "1d-cubic-a", "1d-cubic-b", "1d-vardiff", "1d-quintic", "1d-trig", "1d-gauss-drift",
    "2d-sombrero", "3d-cubic", "4d-cubic", "3d-linear-quality", "10d-cubic", "10d-coupled",
)

# independent generator streams derived from one seed
_SIM, _EXTRACT, _NOISE, _KERNELS = range(4)


class ConfigError(ValueError):
    pass


def load_preset(name: str) -> dict:
    try:
        text = resources.files("weakfp.configs").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
    return json.loads(text)


def load_config(ref: str) -> dict:
    """A preset name or a path to a JSON config file."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        try:
            return json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ref}: {exc}") from exc
    return load_preset(ref)


def streams(seed: int) -> list[np.random.Generator]:
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def observation_times(obs: dict) -> np.ndarray:
    t = obs.get("times")
    if isinstance(t, dict):
        k = int(round((t["stop"] - t["start"]) / t["step"]))
        return np.round(t["start"] + t["step"] * np.arange(k + 1), 12)
    if not t:
        raise ConfigError("observation.times missing")
    return np.asarray(t, dtype=float)


# -- method parsing -----------------------------------------------------------------


def drift_from_config(spec: dict, d: int) -> DriftSpec:
    kind = spec.get("kind", "complete")
    if kind == "complete":
        return DriftSpec.shared(complete_polynomial_basis(d, int(spec["order"])))
    if kind == "per-axis":
        return DriftSpec.per_axis(d, int(spec["order"]))
    if kind == "tensor-cos":
        return DriftSpec.shared(tensor_product_basis(int(spec["poly_degree"]), spec["frequencies"], d))
    if kind == "basis":
        return DriftSpec.shared(Basis.from_json(spec["basis"]))
    raise ConfigError(f"unknown drift basis kind {kind!r}")


def structure_from_config(spec: dict, d: int) -> DiffusionStructure:
    kind = spec.get("kind", "constant-diagonal")
    try:
        if kind in ("diagonal-polynomial", "full-polynomial"):
            return DiffusionStructure(kind, d, complete_polynomial_basis(d, int(spec["order"])))
        return DiffusionStructure(kind, d, width=int(spec.get("width", 0)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad diffusion structure {spec}: {exc}") from exc


def validate(cfg: dict) -> None:
    m = cfg.get("method", {})
    if int(m.get("n_kernels", 0)) < 1:
        raise ConfigError("method.n_kernels must be at least 1")
    if np.any(np.asarray(m.get("gamma", 1.0), dtype=float) <= 0):
        raise ConfigError("method.gamma must be positive")
    scheme = m.get("scheme", "auto")
    if scheme != "auto":
        try:
            LmmScheme(scheme)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if m.get("regression", "stridge") not in ("stridge", "least-squares"):
        raise ConfigError("method.regression must be 'stridge' or 'least-squares'")
    sim, obs = cfg.get("simulation"), cfg.get("observation")
    if sim is not None and obs is not None:
        n_paths = sim.get("n_paths") or obs.get("n_samples")
        if obs.get("n_samples", 0) > n_paths:
            raise ConfigError(
                f"observation.n_samples={obs['n_samples']} exceeds simulation.n_paths={n_paths}"
            )
        if float(obs.get("noise", 0.0)) < 0:
            raise ConfigError("observation.noise must be non-negative")


# -- pipeline -----------------------------------------------------------------------


def simulate(cfg: dict, seed: Optional[int] = None) -> AggregateData:
    validate(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    rs = streams(seed)
    sim, obs = cfg["simulation"], cfg["observation"]
    try:
        model = model_from_json(cfg["model"])
        ini = sim["initial"]
        if ini["kind"] == "gaussian":
            init = InitialSampler.gaussian(ini["mean"], ini["std"])
        else:
            init = InitialSampler.point_set(ini["points"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad model/simulation config: {exc}") from exc
    times = observation_times(obs)
    n_samples = int(obs["n_samples"])
    n_paths = int(sim.get("n_paths") or n_samples)
    paths = euler_maruyama(model, init, float(sim["dt"]), float(times[-1]), n_paths, rs[_SIM],
                           record_times=times)
    data = extract_snapshots(paths, times, n_samples, rs[_EXTRACT])
    return add_multiplicative_noise(data, float(obs.get("noise", 0.0)), rs[_NOISE])


@dataclass
class FitResult:
    learned: LearnedSde
    system: LinearSystem
    kernels: list
    bounds: Hypercube
    scheme: LmmScheme
    timing: dict
    empty_support: bool


def fit(data: AggregateData, cfg: dict, seed: Optional[int] = None) -> FitResult:
    """Kernels, assembly, regression and reconstruction for ``data``."""
    validate(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    m = cfg["method"]
    d = data.dimension
    t0 = time.perf_counter()
    drift = drift_from_config(m["drift"], d)
    structure = structure_from_config(m.get("diffusion", {}), d)
    bounds = data_bounds(data, float(m.get("bounds_padding", 0.0)))
    kernels = sample_kernels_lhs(int(m["n_kernels"]), bounds, m.get("gamma", 1.0), streams(seed)[_KERNELS])
    scheme_name = m.get("scheme", "auto")
    scheme = default_scheme(data.times) if scheme_name == "auto" else LmmScheme(scheme_name)
    system = build_system(data, kernels, drift, structure, scheme, bool(m.get("normalize_blocks", False)))
    t1 = time.perf_counter()
    empty = False
    if m.get("regression", "stridge") == "least-squares":
        zeta = least_squares(system)
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SparsityWarning)
            zeta = stridge(system, StridgeConfig(float(m.get("lam", 1e-5)), float(m.get("eta", 0.05))))
        empty = any(issubclass(w.category, SparsityWarning) for w in caught)
    t2 = time.perf_counter()
    learned = reconstruct_model(zeta, system.layout, drift, structure, int(m.get("sigma_degree", 1)))
    learned.diagnostics["residual_norm"] = float(np.linalg.norm(system.matrix @ zeta - system.rhs))
    t3 = time.perf_counter()
    timing = {"assembly_s": t1 - t0, "regression_s": t2 - t1, "total_s": t3 - t0}
    return FitResult(learned, system, kernels, bounds, scheme, timing, empty)


# -- comparison with a known model --------------------------------------------------


def true_drift_coeffs(model_cfg: dict, drift: DriftSpec) -> Optional[np.ndarray]:
    """True drift coefficients on the fit dictionary, or None if the true
    drift is not a finite expansion over it."""
    spec = model_cfg["drift"]
    if isinstance(spec, dict):
        return None
    out = np.zeros((drift.dimension, drift.size))
    for i, (comp, basis) in enumerate(zip(spec, drift.bases)):
        for t in comp:
            term = Term.from_json(t)
            if term not in basis.terms:
                return None
            out[i, basis.index(term)] += float(t["coef"])
    return out


def true_sigma_params(model_cfg: dict, learned: LearnedSde) -> Optional[np.ndarray]:
    sig = model_cfg["sigma"]
    kind = learned.sigma_kind
    if kind == "polynomial":
        if "entries" not in sig:
            S = np.atleast_2d(sig["matrix"])
            out = np.zeros(learned.sigma.size)
            out[0] = S[0, 0]
            return out
        out = np.zeros(learned.sigma.size)
        for t in sig["entries"][0][0]:
            p = t["powers"][0]
            if p >= out.size:
                return None
            out[p] += float(t["coef"])
        return out
    if "matrix" not in sig:
        return None
    S = np.atleast_2d(np.asarray(sig["matrix"], dtype=float))
    if kind == "diagonal":
        return np.sqrt(np.diag(S @ S.T))
    if kind == "lower-triangular":
        return np.linalg.cholesky(S @ S.T)[np.tril_indices(S.shape[0])]
    return None


def learned_sigma_params(learned: LearnedSde) -> np.ndarray:
    if learned.sigma_kind == "lower-triangular":
        return learned.sigma[np.tril_indices(learned.sigma.shape[0])]
    return np.asarray(learned.sigma, dtype=float).ravel()


@dataclass
class Evaluation:
    errors: Optional[ErrorReport]
    true_params: Optional[np.ndarray]
    learned_params: np.ndarray
    n_drift: int
    drift_l2: Optional[float]

    def to_json(self) -> dict:
        return {
            "errors": None if self.errors is None else self.errors.to_json(),
            "true_params": None if self.true_params is None else self.true_params.tolist(),
            "learned_params": self.learned_params.tolist(),
            "n_drift_params": self.n_drift,
            "drift_l2_relative_error": self.drift_l2,
        }


def evaluate(learned: LearnedSde, model_cfg: dict, l2_interval=None) -> Evaluation:
    td = true_drift_coeffs(model_cfg, learned.drift)
    ts = true_sigma_params(model_cfg, learned)
    lp = np.concatenate([learned.drift_coeffs.ravel(), learned_sigma_params(learned)])
    n_drift = learned.drift_coeffs.size
    errors, tp = None, None
    if td is not None and ts is not None:
        tp = np.concatenate([td.ravel(), ts])
        errors = mre(tp, lp, n_drift)
    l2 = None
    if l2_interval is not None:
        true_model = model_from_json(model_cfg)
        box = Hypercube(*l2_interval)
        l2 = l2_relative_error(true_model.drift, learned.drift_at, box)
    return Evaluation(errors, tp, lp, n_drift, l2)


# -- reports ------------------------------------------------------------------------


def version_string() -> str:
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def build_report(cfg: dict, seed: int, data: AggregateData, res: FitResult,
                 evaluation: Optional[Evaluation] = None) -> dict:
    lr = res.learned
    labels = term_labels(lr.drift, lr.structure)
    zeta = lr.zeta
    m = cfg["method"]
    report = {
        "version": version_string(),
        "seed": seed,
        "config": cfg,
        "data": {
            "dimension": data.dimension,
            "times": data.times.tolist(),
            "sample_counts": data.sample_counts,
            "bounds": {"lower": res.bounds.lower.tolist(), "upper": res.bounds.upper.tolist()},
        },
        "kernels": {
            "count": len(res.kernels),
            "gamma": res.kernels[0].std.tolist(),
            "means": [k.mean.tolist() for k in res.kernels],
            "digest": kernels_digest(res.kernels),
        },
        "basis": {"drift": lr.drift.to_json(), "diffusion": lr.structure.to_json()},
        "system": {
            "rows": int(res.system.matrix.shape[0]),
            "columns": int(res.system.matrix.shape[1]),
            "scheme": res.scheme.kind,
            "normalize_blocks": bool(m.get("normalize_blocks", False)),
            "residual_norm": lr.diagnostics["residual_norm"],
        },
        "regression": {
            "method": m.get("regression", "stridge"),
            "lam": float(m.get("lam", 1e-5)),
            "eta": float(m.get("eta", 0.05)),
            "empty_support": res.empty_support,
        },
        "coefficients": {
            "labels": labels,
            "zeta": zeta.tolist(),
            "support": [int(i) for i in lr.support],
            "nonzero": {labels[i]: float(zeta[i]) for i in lr.support},
        },
        "sigma": {
            "kind": lr.sigma_kind,
            "value": None if lr.sigma is None else np.asarray(lr.sigma).tolist(),
            "repaired": lr.repaired,
        },
        "timing": res.timing,
    }
    if evaluation is not None:
        report["evaluation"] = evaluation.to_json()
    return report


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def drift_plot_rows(learned: LearnedSde, bounds: Hypercube, model_cfg: Optional[dict], n: int = 201):
    """Rows for the drift comparison table: learned (and true, if known)
    drift along each coordinate axis through the origin."""
    true_drift = None
    if model_cfg is not None:
        true_drift = model_from_json(model_cfg).drift
    d = learned.drift.dimension
    header = ["x", "mu_true", "mu_learned"] if d == 1 else ["axis", "s", "mu_true", "mu_learned"]
    rows = []
    for axis in range(d):
        s = np.linspace(bounds.lower[axis], bounds.upper[axis], n)
        pts = np.zeros((n, d))
        pts[:, axis] = s
        ml = learned.drift_at(pts)[:, axis]
        mt = true_drift(pts)[:, axis] if true_drift is not None else np.full(n, np.nan)
        for k in range(n):
            row = [s[k], mt[k], ml[k]]
            rows.append(row if d == 1 else [axis + 1] + row)
    return header, rows


@dataclass
class ExperimentResult:
    data: AggregateData
    fit: FitResult
    evaluation: Evaluation
    report: dict

    @property
    def errors(self) -> Optional[ErrorReport]:
        return self.evaluation.errors


def run_experiment(cfg: dict, seed: Optional[int] = None) -> ExperimentResult:
    cfg = copy.deepcopy(cfg)
    seed = cfg.get("seed", 0) if seed is None else seed
    data = simulate(cfg, seed)
    res = fit(data, cfg, seed)
    ev = evaluate(res.learned, cfg["model"], cfg.get("evaluation", {}).get("l2_interval"))
    return ExperimentResult(data, res, ev, build_report(cfg, seed, data, res, ev))


def learned_from_report(report: dict) -> LearnedSde:
    """Rebuild the learned model stored in a fit report."""
    from .assembly import CoefficientLayout

    drift = DriftSpec.from_json(report["basis"]["drift"])
    structure = DiffusionStructure.from_json(report["basis"]["diffusion"])
    layout = CoefficientLayout.build(drift, structure)
    sigma_degree = int(report["config"]["method"].get("sigma_degree", 1))
    return reconstruct_model(report["coefficients"]["zeta"], layout, drift, structure, sigma_degree)


def evaluate_report(report: dict, cfg: Optional[dict] = None) -> Evaluation:
    cfg = report["config"] if cfg is None else cfg
    if "model" not in cfg:
        raise ConfigError("config has no true model to compare against")
    return evaluate(learned_from_report(report), cfg["model"], cfg.get("evaluation", {}).get("l2_interval"))


# -- timing -------------------------------------------------------------------------

BENCH_DEFAULTS = {"base": {"L": 11, "N": 4000, "M": 100, "d": 2},
                  "sweeps": {"M": [100, 200, 400], "N": [4000, 8000, 16000]},
                  "repeats": 5, "drift_order": 3}


def _bench_data(L: int, N: int, d: int, rng: np.random.Generator) -> AggregateData:
    from .data import Snapshot

    snaps = tuple(Snapshot(0.1 * i, rng.standard_normal((N, d)) * (1.0 + 0.05 * i)) for i in range(L))
    return AggregateData(d, snaps)


def bench_cell(L: int, N: int, M: int, d: int, repeats: int = 3, drift_order: int = 3, seed: int = 0) -> dict:
    """Best-of-``repeats`` assembly and regression wall time on synthetic
    snapshots with a per-axis polynomial drift dictionary of fixed size."""
    rs = streams(seed)
    data = _bench_data(L, N, d, rs[_SIM])
    drift = DriftSpec.per_axis(d, drift_order)
    structure = DiffusionStructure("constant-diagonal", d)
    kernels = sample_kernels_lhs(M, data_bounds(data), 1.0, rs[_KERNELS])
    scheme = default_scheme(data.times)
    t_asm, t_reg = np.inf, np.inf
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        system = build_system(data, kernels, drift, structure, scheme)
        t1 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SparsityWarning)
            stridge(system)
        t2 = time.perf_counter()
        t_asm, t_reg = min(t_asm, t1 - t0), min(t_reg, t2 - t1)
    total = t_asm + t_reg
    return {"L": L, "N": N, "M": M, "d": d, "assembly_s": t_asm, "regression_s": t_reg,
            "total_s": total, "stridge_pct": 100.0 * t_reg / total}


def run_bench(cfg: dict, seed: int = 0) -> list[dict]:
    """Vary one of L, N, M, d at a time around a base cell."""
    spec = {**BENCH_DEFAULTS, **cfg.get("bench", {})}
    base = {**BENCH_DEFAULTS["base"], **spec.get("base", {})}
    # untimed warm-up on the largest cell so later cells do not pay first-touch
    # page faults that the allocator has already absorbed for the big ones
    big = {k: max([int(base[k])] + [int(v) for v in spec["sweeps"].get(k, [])]) for k in base}
    bench_cell(big["L"], big["N"], big["M"], big["d"], 1, int(spec["drift_order"]), seed)
    rows = []
    for factor, values in spec["sweeps"].items():
        if factor not in base:
            raise ConfigError(f"unknown bench factor {factor!r}; choose from L, N, M, d")
        for v in values:
            cell = {**base, factor: int(v)}
            row = bench_cell(cell["L"], cell["N"], cell["M"], cell["d"], int(spec["repeats"]),
                             int(spec["drift_order"]), seed)
            rows.append({"factor": factor, **row})
    return rows
