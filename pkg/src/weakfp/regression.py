"""Solving the stacked system and turning coefficients back into an SDE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import CoefficientLayout, DiffusionStructure, DriftSpec, LinearSystem
from .dictionary import eval_basis


class RegressionError(np.linalg.LinAlgError):
    pass


class SparsityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StridgeConfig:
    lam: float = 1e-5
    eta: float = 0.05
    max_sweeps: Optional[int] = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("ridge lambda must be non-negative")
        if self.eta <= 0:
            raise ValueError("threshold eta must be positive")


def _matrix_rhs(system):
    if isinstance(system, LinearSystem):
        return system.matrix, system.rhs
    A, b = system
    return np.asarray(A, dtype=float), np.asarray(b, dtype=float)


def least_squares(system) -> np.ndarray:
    """Ordinary least squares; refuses rank-deficient systems.

    ``system`` is a :class:`LinearSystem` or an ``(A, b)`` pair.
    """
    A, b = _matrix_rhs(system)
    if A.shape[0] < A.shape[1]:
        raise RegressionError(f"underdetermined system: {A.shape[0]} rows < {A.shape[1]} columns")
    s = np.linalg.svd(A, compute_uv=False)
    tol = s[0] * max(A.shape) * np.finfo(float).eps
    if s[-1] <= tol:
        cond = np.inf if s[-1] == 0 else s[0] / s[-1]
        raise RegressionError(f"rank-deficient system (condition estimate {cond:.3e})")
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _ridge(A: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0:
        return np.linalg.lstsq(A, b, rcond=None)[0]
    G = A.T @ A
    G[np.diag_indices_from(G)] += lam
    try:
        return np.linalg.solve(G, A.T @ b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, A.T @ b, rcond=None)[0]


def stridge(system, config: StridgeConfig = StridgeConfig()) -> np.ndarray:
    """Sequential thresholded ridge regression.

    Alternates ridge solves on the retained columns with hard thresholding at
    ``|x| <= eta`` until the retained set stops shrinking (at most
    ``max_sweeps`` rounds, default the column count), then refits the survivors
    without regularisation.  Survivors that the refit pushes under the
    threshold are dropped and the refit repeated.
    """
    A, b = _matrix_rhs(system)
    n = A.shape[1]
    max_sweeps = config.max_sweeps or n
    x = _ridge(A, b, config.lam)
    keep = np.ones(n, dtype=bool)
    for _ in range(max_sweeps):
        big = keep & (np.abs(x) > config.eta)
        if big.sum() == keep.sum():
            break
        keep = big
        x[~keep] = 0.0
        if not keep.any():
            break
        x[keep] = _ridge(A[:, keep], b, config.lam)
    keep &= np.abs(x) > config.eta
    x[~keep] = 0.0
    while keep.any():
        x[keep] = np.linalg.lstsq(A[:, keep], b, rcond=None)[0]
        small = keep & (np.abs(x) <= config.eta)
        if not small.any():
            break
        keep &= ~small
        x[~keep] = 0.0
    if not keep.any():
        warnings.warn("STRidge removed every coefficient; returning zeros", SparsityWarning, stacklevel=2)
    return x


# -- reconstruction -----------------------------------------------------------------


@dataclass
class LearnedSde:
    drift: DriftSpec
    structure: DiffusionStructure
    drift_coeffs: np.ndarray  # (d, b_mu)
    diffusion_coeffs: np.ndarray  # (n_entries, b_D)
    sigma: Optional[np.ndarray] = None
    sigma_kind: str = "none"
    repaired: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def layout(self) -> CoefficientLayout:
        return CoefficientLayout.build(self.drift, self.structure)

    @property
    def zeta(self) -> np.ndarray:
        return np.concatenate([self.drift_coeffs.ravel(), self.diffusion_coeffs.ravel()])

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.zeta)

    def drift_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.column_stack(
            [eval_basis(b, x) @ c for b, c in zip(self.drift.bases, self.drift_coeffs)]
        )

    def diffusion_at(self, x) -> np.ndarray:
        """Learned ``D`` at each point, shape ``(n, d, d)``; inactive entries are 0."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vals = eval_basis(self.structure.basis, x) @ self.diffusion_coeffs.T
        D = np.zeros((x.shape[0], self.drift.dimension, self.drift.dimension))
        for e, (r, s) in enumerate(self.structure.entries()):
            D[:, r, s] = vals[:, e]
        return D

    def constant_diffusion(self) -> np.ndarray:
        """Matrix of the constant-term diffusion coefficients."""
        d = self.drift.dimension
        D = np.zeros((d, d))
        const = [k for k, t in enumerate(self.structure.basis.terms) if t.degree == 0 and t.trig is None]
        if not const:
            return D
        k0 = const[0]
        for e, (r, s) in enumerate(self.structure.entries()):
            D[r, s] = self.diffusion_coeffs[e, k0]
        return D


def reconstruct_model(zeta, layout: CoefficientLayout, drift: DriftSpec,
                      structure: DiffusionStructure, sigma_degree: int = 1) -> LearnedSde:
    """Split ``zeta`` into drift and diffusion coefficients and recover sigma.

    Sigma comes from ``sqrt(2 D_i)`` for constant-diagonal diffusion, from a
    Gauss-Newton fit of ``sigma(x)**2 / 2`` for 1d polynomial diffusion, and from
    a Cholesky factor of the symmetrised constant part otherwise.
    """
    zeta = np.asarray(zeta, dtype=float)
    if zeta.size != layout.n:
        raise ValueError(f"coefficient vector has length {zeta.size}, layout expects {layout.n}")
    dc = zeta[: layout.n_drift].reshape(layout.d, layout.drift_size).copy()
    fc = zeta[layout.n_drift:].reshape(len(layout.entries), layout.diffusion_size).copy()
    model = LearnedSde(drift, structure, dc, fc)
    if structure.kind == "constant-diagonal":
        model.sigma = np.sqrt(2.0 * np.clip(fc[:, 0], 0.0, None))
        model.sigma_kind = "diagonal"
        model.repaired = bool(np.any(fc[:, 0] < 0))
    elif structure.kind == "diagonal-polynomial" and layout.d == 1 and _is_power_basis(structure):
        degrees = [t.powers[0] for t in structure.basis.terms]
        D = np.zeros(max(degrees) + 1)
        D[degrees] = fc[0]
        if np.any(D):
            model.sigma = recover_sigma_poly(D, sigma_degree)
        else:
            model.sigma = np.zeros(sigma_degree + 1)
        model.sigma_kind = "polynomial"
    elif structure.kind in ("banded", "full-polynomial", "diagonal-polynomial"):
        model.sigma, model.repaired = recover_sigma_cholesky(model.constant_diffusion())
        model.sigma_kind = "lower-triangular"
    return model


def _is_power_basis(structure: DiffusionStructure) -> bool:
    return all(t.trig is None for t in structure.basis.terms)


def recover_sigma_poly(D_coeffs, sigma_degree: int, max_iter: int = 100, tol: float = 1e-13) -> np.ndarray:
    """Coefficients of ``sigma(x) = sum_j s_j x**j`` whose ``sigma**2 / 2`` best
    matches the ascending-power coefficients ``D_coeffs`` (Gauss-Newton).

    Starts from ``s_0 = sqrt(2 max(D_0, eps))`` and zeros elsewhere; the result is
    sign-normalised so that ``s_0 >= 0``.
    """
    D = np.asarray(D_coeffs, dtype=float)
    q = int(sigma_degree)
    K = max(D.size, 2 * q + 1)
    target = np.zeros(K)
    target[: D.size] = D
    s = np.zeros(q + 1)
    s[0] = np.sqrt(2.0 * max(D[0], 1e-8))
    for _ in range(max_iter):
        r = np.zeros(K)
        r[: 2 * q + 1] = 0.5 * np.convolve(s, s)
        r -= target
        J = np.zeros((K, q + 1))
        for j in range(q + 1):
            J[j:j + q + 1, j] = s
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        s = s + step
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(s))):
            return -s if s[0] < 0 else s
    raise RegressionError(f"sigma recovery did not converge in {max_iter} iterations")


def recover_sigma_cholesky(D, eps: float = 1e-10) -> tuple[np.ndarray, bool]:
    """Lower-triangular ``sigma`` with ``sigma sigma^T / 2 = (D + D^T) / 2``.

    Eigenvalues of the symmetrised matrix below ``eps`` are clipped to ``eps``;
    the second return value reports whether that repair happened.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    Dh = 0.5 * (D + D.T)
    M = 2.0 * Dh
    try:
        return np.linalg.cholesky(M), False
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, eps)
    M = (V * w) @ V.T
    return np.linalg.cholesky(0.5 * (M + M.T)), True
