"""Ordered term dictionaries for expanding drift and diffusion entries."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Trig:
    kind: str  # "cos" or "sin"
    freq: int
    coord: int = 0

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ValueError(f"unknown trig kind {self.kind!r}")
        if self.freq < 0:
            raise ValueError("trig frequency must be non-negative")


@dataclass(frozen=True)
class Term:
    """Monomial ``prod x_i**powers[i]``, optionally times ``cos/sin(freq * x_coord)``."""

    powers: tuple[int, ...]
    trig: Optional[Trig] = None

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(int(p) for p in self.powers))
        if any(p < 0 for p in self.powers):
            raise ValueError("term powers must be non-negative")
        # cos(0 x) == 1: normalise so equal functions compare equal
        if self.trig is not None and self.trig.kind == "cos" and self.trig.freq == 0:
            object.__setattr__(self, "trig", None)

    @property
    def degree(self) -> int:
        return sum(self.powers)

    def name(self) -> str:
        d = len(self.powers)
        var = (lambda i: "x") if d == 1 else (lambda i: f"x{i + 1}")
        parts = []
        for i, p in enumerate(self.powers):
            if p == 1:
                parts.append(var(i))
            elif p > 1:
                parts.append(f"{var(i)}^{p}")
        if self.trig is not None:
            f = "" if self.trig.freq == 1 else str(self.trig.freq)
            parts.append(f"{self.trig.kind}({f}{var(self.trig.coord)})")
        return "*".join(parts) if parts else "1"

    def to_json(self) -> dict:
        out = {"powers": list(self.powers)}
        if self.trig is not None:
            out["trig"] = {"kind": self.trig.kind, "freq": self.trig.freq, "coord": self.trig.coord}
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Term":
        trig = obj.get("trig")
        return cls(tuple(obj["powers"]), Trig(**trig) if trig else None)


@dataclass(frozen=True)
class Basis:
    dimension: int
    terms: tuple[Term, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if len(t.powers) != self.dimension:
                raise ValueError(f"term {t} does not match dimension {self.dimension}")
            if t.trig is not None and not 0 <= t.trig.coord < self.dimension:
                raise ValueError(f"trig coordinate out of range in {t}")

    @property
    def size(self) -> int:
        return len(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def names(self) -> list[str]:
        return [t.name() for t in self.terms]

    def index(self, term: Term) -> int:
        return self.terms.index(term)

    def to_json(self) -> dict:
        return {"dimension": self.dimension, "terms": [t.to_json() for t in self.terms]}

    @classmethod
    def from_json(cls, obj: dict) -> "Basis":
        return cls(int(obj["dimension"]), tuple(Term.from_json(t) for t in obj["terms"]))


def _graded_lex(d: int, p: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(p + 1):
        exps = set()
        for combo in combinations_with_replacement(range(d), deg):
            e = [0] * d
            for i in combo:
                e[i] += 1
            exps.add(tuple(e))
        out.extend(sorted(exps, reverse=True))
    return out


def complete_polynomial_basis(d: int, p: int) -> Basis:
    """All monomials of total degree <= p in graded-lex order, C(p+d, p) terms.

    >>> complete_polynomial_basis(2, 2).names()
    ['1', 'x1', 'x2', 'x1^2', 'x1*x2', 'x2^2']
    """
    if d < 1 or p < 0:
        raise ValueError("need d >= 1 and p >= 0")
    return Basis(d, tuple(Term(e) for e in _graded_lex(d, p)))


def axis_polynomial_basis(d: int, p: int, axis: int) -> Basis:
    """Powers ``1, x_axis, ..., x_axis**p`` of a single coordinate."""
    if not 0 <= axis < d:
        raise ValueError(f"axis {axis} out of range for d={d}")
    terms = []
    for k in range(p + 1):
        e = [0] * d
        e[axis] = k
        terms.append(Term(tuple(e)))
    return Basis(d, tuple(terms))


def tensor_product_basis(poly_max_degree: int, cos_frequencies, d: int = 1) -> Basis:
    """Flattened product of ``(1, x, .., x^P)`` with ``(cos(f x) for f in freqs)``,
    polynomial-major."""
    if d != 1:
        raise NotImplementedError("tensor product basis is only supported for d=1")
    freqs = [int(f) for f in cos_frequencies]
    if any(f < 0 for f in freqs):
        raise ValueError("frequencies must be non-negative")
    terms = [
        Term((k,), Trig("cos", f, 0))
        for k in range(poly_max_degree + 1)
        for f in freqs
    ]
    return Basis(1, tuple(terms))


def eval_basis(basis: Basis, x: np.ndarray) -> np.ndarray:
    """Evaluate every term at ``x``.

    ``x`` of shape ``(d,)`` gives a ``(b,)`` vector, ``(n, d)`` gives ``(n, b)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != basis.dimension:
        raise ValueError(f"expected points of dimension {basis.dimension}, got {X.shape[1]}")
    P = np.array([t.powers for t in basis.terms], dtype=int).reshape(basis.size, basis.dimension)
    out = np.ones((X.shape[0], basis.size))
    for axis in range(basis.dimension):
        col = P[:, axis]
        top = int(col.max()) if col.size else 0
        if top == 0:
            continue
        pw = X[:, axis, None] ** np.arange(top + 1)
        out *= pw[:, col]
    for j, t in enumerate(basis.terms):
        if t.trig is not None:
            fn = np.cos if t.trig.kind == "cos" else np.sin
            out[:, j] *= fn(t.trig.freq * X[:, t.trig.coord])
    return out[0] if single else out
