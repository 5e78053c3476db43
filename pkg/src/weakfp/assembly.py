"""Weak-form linear system assembly.

For a Gaussian test function phi and snapshot samples x^1..x^N at time t the
observable ``y(t) = mean(phi(x))`` obeys

    dy/dt = mean(mu(x) . grad phi(x)) + mean(sum_rs D_rs(x) d2phi/dx_r dx_s)

Expanding every drift component and every active diffusion entry over a term
dictionary makes the right-hand side linear in the coefficient vector, one row
``B[l]`` per snapshot.  A linear multistep scheme turns ``dy/dt = B zeta``
into ``A zeta = y_hat``; one such block per kernel is stacked into the final
least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import AggregateData
from .dictionary import Basis, axis_polynomial_basis, complete_polynomial_basis, eval_basis
from .kernels import GaussianKernel, kernel_arrays

SCHEMES = ("trapezoidal-variable", "milne", "bdf2-variable")
_ORDER = {"trapezoidal-variable": 2, "milne": 4, "bdf2-variable": 2}
_STEPS = {"trapezoidal-variable": 1, "milne": 2, "bdf2-variable": 2}
MILNE_SPACING_RTOL = 1e-9


class AssemblyError(ValueError):
    pass


# -- drift and diffusion structure ---------------------------------------------------


@dataclass(frozen=True)
class DriftSpec:
    """One basis per state component; all must have the same size."""

    bases: tuple[Basis, ...]

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        sizes = {b.size for b in self.bases}
        if len(sizes) != 1:
            raise ValueError("all drift bases must have the same size")
        dims = {b.dimension for b in self.bases}
        if dims != {len(self.bases)}:
            raise ValueError("drift needs one basis per dimension, each of that dimension")

    @property
    def dimension(self) -> int:
        return len(self.bases)

    @property
    def size(self) -> int:
        return self.bases[0].size

    @classmethod
    def shared(cls, basis: Basis) -> "DriftSpec":
        return cls((basis,) * basis.dimension)

    @classmethod
    def per_axis(cls, d: int, p: int) -> "DriftSpec":
        return cls(tuple(axis_polynomial_basis(d, p, i) for i in range(d)))

    def to_json(self) -> dict:
        if all(b == self.bases[0] for b in self.bases):
            return {"kind": "shared", "basis": self.bases[0].to_json()}
        return {"kind": "per-component", "bases": [b.to_json() for b in self.bases]}

    @classmethod
    def from_json(cls, obj: dict) -> "DriftSpec":
        if obj["kind"] == "shared":
            return cls.shared(Basis.from_json(obj["basis"]))
        return cls(tuple(Basis.from_json(b) for b in obj["bases"]))


DIFFUSION_KINDS = ("constant-diagonal", "diagonal-polynomial", "banded", "full-polynomial")


@dataclass(frozen=True)
class DiffusionStructure:
    """Which entries of D get coefficients and over which basis.

    ``banded`` keeps the diagonal and ``width`` sub-diagonals (r >= s); since
    the weak form only sees ``D_rs + D_sr`` for r != s the upper band would
    duplicate columns.
    """

    kind: str
    dimension: int
    basis: Basis | None = None
    width: int = 0

    def __post_init__(self):
        if self.kind not in DIFFUSION_KINDS:
            raise ValueError(f"unknown diffusion structure {self.kind!r}")
        if self.kind in ("constant-diagonal", "banded"):
            object.__setattr__(self, "basis", complete_polynomial_basis(self.dimension, 0))
        elif self.basis is None:
            raise ValueError(f"{self.kind} diffusion needs a basis")
        if self.basis.dimension != self.dimension:
            raise ValueError("diffusion basis dimension mismatch")
        if self.kind == "banded" and not 0 <= self.width < self.dimension:
            raise ValueError("band width must satisfy 0 <= width < d")

    def entries(self) -> list[tuple[int, int]]:
        d = self.dimension
        if self.kind in ("constant-diagonal", "diagonal-polynomial"):
            return [(i, i) for i in range(d)]
        if self.kind == "banded":
            return [(r, s) for r in range(d) for s in range(d) if 0 <= r - s <= self.width]
        return [(r, s) for r in range(d) for s in range(d)]

    def to_json(self) -> dict:
        out = {"kind": self.kind, "dimension": self.dimension}
        if self.kind in ("diagonal-polynomial", "full-polynomial"):
            out["basis"] = self.basis.to_json()
        if self.kind == "banded":
            out["width"] = self.width
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DiffusionStructure":
        basis = Basis.from_json(obj["basis"]) if "basis" in obj else None
        return cls(obj["kind"], int(obj["dimension"]), basis, int(obj.get("width", 0)))


@dataclass(frozen=True)
class CoefficientLayout:
    """Column map of the flattened unknown: drift block (component-major, then
    basis index) followed by the diffusion block (entry-major, then basis index)."""

    d: int
    drift_size: int
    entries: tuple[tuple[int, int], ...]
    diffusion_size: int

    @classmethod
    def build(cls, drift: DriftSpec, structure: DiffusionStructure) -> "CoefficientLayout":
        if drift.dimension != structure.dimension:
            raise ValueError("drift and diffusion dimensions differ")
        return cls(drift.dimension, drift.size, tuple(structure.entries()), structure.basis.size)

    @property
    def n_drift(self) -> int:
        return self.d * self.drift_size

    @property
    def n(self) -> int:
        return self.n_drift + len(self.entries) * self.diffusion_size


def flatten_index_drift(i: int, j: int, layout: CoefficientLayout) -> int:
    """Column of drift component ``i`` and basis term ``j`` (both 0-based)."""
    if not (0 <= i < layout.d and 0 <= j < layout.drift_size):
        raise IndexError(f"drift index ({i}, {j}) out of range")
    return i * layout.drift_size + j


def flatten_index_diffusion(r: int, s: int, k: int, layout: CoefficientLayout) -> int:
    """Column of diffusion entry ``(r, s)`` and basis term ``k`` (0-based)."""
    try:
        pos = layout.entries.index((r, s))
    except ValueError:
        raise IndexError(f"diffusion entry ({r}, {s}) is not active in this structure") from None
    if not 0 <= k < layout.diffusion_size:
        raise IndexError(f"diffusion basis index {k} out of range")
    return layout.n_drift + pos * layout.diffusion_size + k


# -- weak-form features ---------------------------------------------------------------

_CHUNK_ELEMS = 2_000_000


def weak_features_batch(data: AggregateData, means: np.ndarray, std: np.ndarray,
                        drift: DriftSpec, structure: DiffusionStructure):
    """Features for many kernels sharing one std vector.

    Returns ``Y`` of shape ``(m, L)`` and ``B`` of shape ``(m, L, n)``.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    std = np.broadcast_to(np.asarray(std, dtype=float), (data.dimension,))
    layout = CoefficientLayout.build(drift, structure)
    m, L, d = means.shape[0], len(data), data.dimension
    bd = layout.diffusion_size
    Y = np.empty((m, L))
    B = np.empty((m, L, layout.n))
    for l, snap in enumerate(data.snapshots):
        x = snap.samples
        n = x.shape[0]
        lam = [eval_basis(b, x) for b in drift.bases]
        lam_d = eval_basis(structure.basis, x)
        step = max(1, _CHUNK_ELEMS // (n * (d + 2)))
        for c0 in range(0, m, step):
            c1 = min(m, c0 + step)
            phi, u = kernel_arrays(means[c0:c1], std, x)
            Y[c0:c1, l] = phi.mean(axis=1)
            for i in range(d):
                g = -phi * u[i]
                B[c0:c1, l, i * layout.drift_size:(i + 1) * layout.drift_size] = g @ lam[i] / n
            col = layout.n_drift
            for r, s in layout.entries:
                h = u[r] * u[s]
                if r == s:
                    h -= 1.0 / std[r] ** 2
                h *= phi
                B[c0:c1, l, col:col + bd] = h @ lam_d / n
                col += bd
    return Y, B


def weak_features(data: AggregateData, kernel: GaussianKernel, drift: DriftSpec,
                  structure: DiffusionStructure):
    """``(y, B)`` for a single kernel: ``y`` has length L, ``B`` is L x n."""
    Y, B = weak_features_batch(data, kernel.mean[None, :], kernel.std, drift, structure)
    return Y[0], B[0]


# -- linear multistep schemes ---------------------------------------------------------


@dataclass(frozen=True)
class LmmScheme:
    kind: str

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown LMM scheme {self.kind!r}; choose from {SCHEMES}")

    @property
    def steps(self) -> int:
        return _STEPS[self.kind]

    @property
    def order(self) -> int:
        return _ORDER[self.kind]


def is_equally_spaced(times, rtol: float = MILNE_SPACING_RTOL) -> bool:
    h = np.diff(np.asarray(times, dtype=float))
    return bool(h.size > 0 and np.all(np.abs(h - h[0]) <= rtol * h[0]))


def default_scheme(times) -> LmmScheme:
    if len(times) >= 3 and is_equally_spaced(times):
        return LmmScheme("milne")
    return LmmScheme("trapezoidal-variable")


def apply_lmm(scheme: LmmScheme, y: np.ndarray, B: np.ndarray, times):
    """Discretise ``dy/dt = B zeta`` into ``A zeta = y_hat``.

    The time axis is the last axis of ``y`` and the second-to-last of ``B``, so
    a leading kernel axis is carried through unchanged.
    """
    t = np.asarray(times, dtype=float)
    L = t.size
    y = np.asarray(y, dtype=float)
    B = np.asarray(B, dtype=float)
    if y.shape[-1] != L or B.shape[-2] != L:
        raise AssemblyError("y, B and times disagree on the number of snapshots")
    if L < scheme.steps + 1:
        raise AssemblyError(f"{scheme.kind} needs at least {scheme.steps + 1} snapshots, got {L}")
    h = np.diff(t)
    if scheme.kind == "trapezoidal-variable":
        w = (h / 2.0)[:, None]
        A = w * (B[..., 1:, :] + B[..., :-1, :])
        yh = y[..., 1:] - y[..., :-1]
    elif scheme.kind == "milne":
        if not is_equally_spaced(t):
            raise AssemblyError("milne requires equally spaced snapshots")
        hh = h[0]
        A = hh / 3.0 * (B[..., 2:, :] + 4.0 * B[..., 1:-1, :] + B[..., :-2, :])
        yh = y[..., 2:] - y[..., :-2]
    else:
        hn, hp = h[1:], h[:-1]
        om = hn / hp
        a1 = (1.0 + om) ** 2 / (1.0 + 2.0 * om)
        a0 = om**2 / (1.0 + 2.0 * om)
        beta = hn * (1.0 + om) / (1.0 + 2.0 * om)
        A = beta[:, None] * B[..., 2:, :]
        yh = y[..., 2:] - a1 * y[..., 1:-1] + a0 * y[..., :-2]
    return A, yh


# -- stacking -----------------------------------------------------------------------


@dataclass
class LinearSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    layout: CoefficientLayout
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.rhs.shape[0]:
            raise AssemblyError("matrix and rhs row counts differ")
        if self.matrix.shape[1] != self.layout.n:
            raise AssemblyError("matrix column count does not match layout")
        if not np.all(np.isfinite(self.matrix)):
            raise AssemblyError("assembled matrix contains non-finite entries")

    def save_csv(self, matrix_path, rhs_path) -> None:
        np.savetxt(matrix_path, self.matrix, fmt="%.17g", delimiter=",")
        np.savetxt(rhs_path, self.rhs, fmt="%.17g")


def stack_systems(blocks: Sequence[tuple[np.ndarray, np.ndarray]], layout: CoefficientLayout,
                  provenance: dict | None = None) -> LinearSystem:
    """Concatenate per-kernel ``(A_m, y_m)`` blocks in the given order."""
    if not blocks:
        raise AssemblyError("no blocks to stack")
    for A, yh in blocks:
        if A.ndim != 2 or A.shape[1] != layout.n or A.shape[0] != yh.shape[0]:
            raise AssemblyError(f"block of shape {A.shape} does not fit layout with {layout.n} columns")
    A = np.concatenate([b[0] for b in blocks], axis=0)
    yh = np.concatenate([b[1] for b in blocks], axis=0)
    return LinearSystem(A, yh, layout, dict(provenance or {}))


def build_system(data: AggregateData, kernels: Sequence[GaussianKernel], drift: DriftSpec,
                 structure: DiffusionStructure, scheme: LmmScheme | None = None,
                 normalize_blocks: bool = False) -> LinearSystem:
    """Features, LMM and stacking for all kernels in one go."""
    if not kernels:
        raise AssemblyError("need at least one kernel")
    scheme = scheme or default_scheme(data.times)
    layout = CoefficientLayout.build(drift, structure)
    std = kernels[0].std
    if any(not np.array_equal(k.std, std) for k in kernels):
        # kernels with differing widths are assembled one at a time
        feats = [weak_features(data, k, drift, structure) for k in kernels]
        Y = np.stack([f[0] for f in feats])
        B = np.stack([f[1] for f in feats])
    else:
        means = np.stack([k.mean for k in kernels])
        Y, B = weak_features_batch(data, means, std, drift, structure)
    A, yh = apply_lmm(scheme, Y, B, data.times)
    if normalize_blocks:
        rms = np.sqrt(np.mean(A**2, axis=(1, 2)))
        rms[rms == 0] = 1.0
        A = A / rms[:, None, None]
        yh = yh / rms[:, None]
    blocks = list(zip(A, yh))
    return stack_systems(blocks, layout, {"scheme": scheme.kind, "n_kernels": len(kernels)})


def term_labels(drift: DriftSpec, structure: DiffusionStructure) -> list[str]:
    """Human-readable label for every column."""
    labels = []
    for i, b in enumerate(drift.bases):
        labels += [f"mu{i + 1}:{nm}" for nm in b.names()]
    for r, s in structure.entries():
        labels += [f"D{r + 1}{s + 1}:{nm}" for nm in structure.basis.names()]
    return labels

