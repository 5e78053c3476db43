"""Gaussian test functions and their Latin-hypercube placement."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .data import Hypercube

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianKernel:
    """Product of 1d normal densities with mean ``mean`` and per-axis std ``std``."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.broadcast_to(np.asarray(self.std, dtype=float), mean.shape).copy()
        if np.any(std <= 0):
            raise ValueError("kernel std must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dimension(self) -> int:
        return self.mean.size


def sample_kernels_lhs(m: int, bounds: Hypercube, gamma, rng: np.random.Generator) -> list[GaussianKernel]:
    """Place ``m`` kernel means by Latin hypercube sampling inside ``bounds``.

    Each axis is cut into ``m`` equal cells and every cell receives exactly one
    mean; all kernels share the std vector ``gamma``.
    """
    if m < 1:
        raise ValueError("need at least one kernel")
    d = bounds.dimension
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (d,))
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    u = qmc.LatinHypercube(d, rng=rng).random(m)
    means = bounds.lower + u * (bounds.upper - bounds.lower)
    return [GaussianKernel(mu, gamma) for mu in means]


def kernel_value(k: GaussianKernel, x) -> float:
    z = (np.asarray(x, dtype=float) - k.mean) / k.std
    return float(np.exp(-0.5 * np.dot(z, z)) / np.prod(k.std * _SQRT_2PI))


def kernel_grad(k: GaussianKernel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -kernel_value(k, x) * (x - k.mean) / k.std**2


def kernel_hess(k: GaussianKernel, x) -> np.ndarray:
    # d2/dxi dxj phi = phi * (u_i u_j - delta_ij / std_i^2), u = (x - mean) / std^2
    x = np.asarray(x, dtype=float)
    u = (x - k.mean) / k.std**2
    return kernel_value(k, x) * (np.outer(u, u) - np.diag(1.0 / k.std**2))


def kernel_arrays(means: np.ndarray, std: np.ndarray, x: np.ndarray):
    """Batched values and scaled offsets for many kernels at many points.

    Returns ``phi`` of shape ``(m, n)`` and ``u`` of shape ``(d, m, n)`` with
    ``u[i] = (x_i - mean_i) / std_i**2``, so the gradient is ``-phi * u[i]``
    and the Hessian entry ``(r, s)`` is ``phi * (u[r] u[s] - [r == s] / std_r**2)``.
    """
    means = np.atleast_2d(means)
    d = means.shape[1]
    u = np.empty((d, means.shape[0], x.shape[0]))
    expo = np.zeros((means.shape[0], x.shape[0]))
    for i in range(d):
        diff = x[None, :, i] - means[:, i, None]
        u[i] = diff / std[i] ** 2
        expo -= 0.5 * diff * u[i]
    phi = np.exp(expo) / np.prod(std * _SQRT_2PI)
    return phi, u


def kernels_digest(kernels: list[GaussianKernel]) -> str:
    h = hashlib.sha256()
    for k in kernels:
        h.update(np.ascontiguousarray(k.mean, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(k.std, dtype="<f8").tobytes())
    return h.hexdigest()
