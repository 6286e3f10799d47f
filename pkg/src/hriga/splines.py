"""Univariate and tensor-product B-spline bases.

Knot vectors are always open (first/last knot repeated ``p + 1`` times) and
live on ``[0, 1]``.  Evaluation is right-closed at ``1`` so that the last basis
function interpolates the end point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

_KNOT_TOL = 1e-12


class SplineDomainError(ValueError):
    """Raised when a parameter value lies outside the spline domain."""


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector of degree ``degree`` on ``[0, 1]``."""

    degree: int
    knots: tuple[float, ...]

    def __post_init__(self):
        p = self.degree
        kv = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", tuple(float(k) for k in kv))
        if p < 0:
            raise ValueError(f"degree must be nonnegative, got {p}")
        if kv.ndim != 1 or kv.size < 2 * p + 2:
            raise ValueError("knot vector needs at least 2p+2 entries")
        if np.any(np.diff(kv) < 0):
            raise ValueError("knots must be nondecreasing")
        if np.any(kv[: p + 1] != 0.0) or np.any(kv[-p - 1 :] != 1.0):
            raise ValueError("knot vector must be p-open on [0, 1]")
        mult = self.multiplicities[1:-1]
        if mult.size and mult.max() > p + 1:
            raise ValueError("interior multiplicity exceeds p+1")

    @classmethod
    def uniform(cls, n_elements: int, degree: int, regularity: int) -> "KnotVector":
        """Uniform open knot vector with ``C^regularity`` interior continuity.

        ``regularity = -1`` gives a discontinuous space (multiplicity p+1).
        """
        if n_elements < 1:
            raise ValueError("need at least one element")
        if not -1 <= regularity < max(degree, 0) or (degree == 0 and regularity != -1):
            raise ValueError(f"regularity {regularity} invalid for degree {degree}")
        m = degree - regularity
        interior = np.repeat(np.arange(1, n_elements) / n_elements, m)
        knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
        return cls(degree, tuple(knots))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.knots)

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.array)

    @cached_property
    def multiplicities(self) -> np.ndarray:
        kv = self.array
        return np.array([np.count_nonzero(kv == b) for b in np.unique(kv)])

    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def regularity(self) -> int:
        """Minimal interior continuity ``p - max multiplicity`` (``p`` if no interior knots)."""
        inner = self.multiplicities[1:-1]
        return self.degree - int(inner.max()) if inner.size else self.degree

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    def find_span(self, x) -> np.ndarray:
        """Knot span index ``s`` with ``knots[s] <= x < knots[s+1]`` (right-closed at 1)."""
        x = np.asarray(x, dtype=float)
        if np.any(x < -_KNOT_TOL) or np.any(x > 1 + _KNOT_TOL):
            raise SplineDomainError("parameter outside [0, 1]")
        s = np.searchsorted(self.array, x, side="right") - 1
        return np.clip(s, self.degree, self.n_basis - 1)

    def element_spans(self) -> np.ndarray:
        """Span index of every (nondegenerate) element, left to right."""
        bp = self.breakpoints
        return self.find_span(0.5 * (bp[:-1] + bp[1:]))


def _basis_tables(kv: np.ndarray, p: int, spans: np.ndarray, x: np.ndarray) -> list[np.ndarray]:
    """Nonzero basis values of every degree ``0..p`` on the given spans.

    Cox-de Boor recursion in triangular form; ``tables[j][:, a]`` is the value of
    the degree-``j`` function with index ``span - j + a``.
    """
    n = x.shape[0]
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    tables = [N[:, :1].copy()]
    for j in range(1, p + 1):
        left[:, j] = x - kv[spans + 1 - j]
        right[:, j] = kv[spans + j] - x
        saved = np.zeros(n)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            temp = np.divide(N[:, r], den, out=np.zeros(n), where=den != 0)
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
        tables.append(N[:, : j + 1].copy())
    return tables


def _lowered_derivative(kv, p, spans, tables, order) -> np.ndarray:
    """``order``-th derivative of the degree-``p`` functions by repeated degree lowering."""
    n = spans.shape[0]
    if order > p:
        return np.zeros((n, p + 1))
    cur = tables[p - order]
    for q in range(p - order + 1, p + 1):
        new = np.zeros((n, q + 1))
        for a in range(q + 1):
            i = spans - q + a
            if a >= 1:
                den = kv[i + q] - kv[i]
                new[:, a] += q * np.divide(cur[:, a - 1], den, out=np.zeros(n), where=den > 0)
            if a <= q - 1:
                den = kv[i + q + 1] - kv[i + 1]
                new[:, a] -= q * np.divide(cur[:, a], den, out=np.zeros(n), where=den > 0)
        cur = new
    return cur


@dataclass(frozen=True)
class SplineSpace1D:
    """The span of all B-splines of a knot vector."""

    knot_vector: KnotVector

    @classmethod
    def uniform(cls, n_elements: int, degree: int, regularity: int) -> "SplineSpace1D":
        return cls(KnotVector.uniform(n_elements, degree, regularity))

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def dim(self) -> int:
        return self.knot_vector.n_basis

    @property
    def regularity(self) -> int:
        return self.knot_vector.regularity

    @property
    def n_elements(self) -> int:
        return self.knot_vector.n_elements

    def local_basis(self, x, nders: int = 0, spans=None):
        """Nonzero basis functions and derivatives at many points.

        Args:
            x: parameter values, shape ``(m,)``.
            nders: highest derivative order requested.
            spans: optional span indices (defaults to ``find_span(x)``); passing the
                element span evaluates the element polynomial, including at its ends.

        Returns:
            ``(first, values)`` where ``first[m]`` is the index of the first nonzero
            function and ``values[k, m, a]`` is the ``k``-th derivative of function
            ``first[m] + a``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        kvo = self.knot_vector
        spans = kvo.find_span(x) if spans is None else np.asarray(spans)
        p = self.degree
        kv = kvo.array
        tables = _basis_tables(kv, p, spans, x)
        out = np.empty((nders + 1, x.shape[0], p + 1))
        out[0] = tables[p]
        for k in range(1, nders + 1):
            out[k] = _lowered_derivative(kv, p, spans, tables, k)
        return spans - p, out

    def eval_basis(self, zeta: float) -> list[tuple[int, float]]:
        """Pairs ``(index, value)`` of the basis functions that may be nonzero at ``zeta``."""
        first, vals = self.local_basis([zeta])
        return [(int(first[0]) + a, float(v)) for a, v in enumerate(vals[0, 0])]

    def eval_basis_derivative(self, zeta: float, order: int = 1) -> list[tuple[int, float]]:
        if order != 1:
            raise ValueError("only first derivatives here; chain derivative_space for more")
        if self.degree < 1:
            raise ValueError("derivative needs degree >= 1")
        first, vals = self.local_basis([zeta], nders=1)
        return [(int(first[0]) + a, float(v)) for a, v in enumerate(vals[1, 0])]

    def collocation_matrix(self, x, der: int = 0) -> sp.csr_matrix:
        """Sparse ``(len(x), dim)`` matrix of basis values (or derivatives)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        first, vals = self.local_basis(x, nders=der)
        p = self.degree
        rows = np.repeat(np.arange(x.size), p + 1)
        cols = (first[:, None] + np.arange(p + 1)).ravel()
        return sp.csr_matrix((vals[der].ravel(), (rows, cols)), shape=(x.size, self.dim))

    def evaluate(self, coeffs, x, der: int = 0) -> np.ndarray:
        return self.collocation_matrix(x, der) @ np.asarray(coeffs, dtype=float)

    def greville(self) -> np.ndarray:
        kv, p = self.knot_vector.array, self.degree
        if p == 0:
            return 0.5 * (kv[:-1] + kv[1:])
        return np.array([kv[i + 1 : i + p + 1].mean() for i in range(self.dim)])


def insert_knot(space: SplineSpace1D, x: float) -> tuple[SplineSpace1D, np.ndarray]:
    """Insert ``x`` once.

    Returns the refined space and the transfer matrix ``T`` (``new_dim x old_dim``)
    such that ``T @ c`` represents the same function in the refined basis.
    """
    if not 0.0 < x < 1.0:
        raise SplineDomainError("can only insert knots strictly inside (0, 1)")
    kvo = space.knot_vector
    p, kv, n = kvo.degree, kvo.array, kvo.n_basis
    if np.count_nonzero(np.abs(kv - x) <= _KNOT_TOL) >= p + 1:
        raise ValueError("knot already has full multiplicity")
    k = int(np.searchsorted(kv, x, side="right") - 1)
    T = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            T[i, i] = 1.0
        elif i >= k + 1:
            T[i, i - 1] = 1.0
        else:
            alpha = (x - kv[i]) / (kv[i + p] - kv[i])
            T[i, i] = alpha
            T[i, i - 1] = 1.0 - alpha
    new_kv = np.insert(kv, k + 1, x)
    return SplineSpace1D(KnotVector(p, tuple(new_kv))), T


def derivative_space(space: SplineSpace1D) -> tuple[SplineSpace1D, np.ndarray]:
    """Target space ``S_{p-1}^{r-1}`` and the exact coefficient map of ``d/dzeta``.

    The map ``D`` has shape ``(dim - 1, dim)``.
    """
    kvo = space.knot_vector
    p, kv, n = kvo.degree, kvo.array, kvo.n_basis
    if p < 1:
        raise ValueError("derivative_space needs degree >= 1")
    if kvo.regularity < 0:
        raise ValueError("derivative of a discontinuous spline is not a spline")
    D = np.zeros((n - 1, n))
    for m in range(n - 1):
        c = p / (kv[m + p + 1] - kv[m + 1])
        D[m, m] = -c
        D[m, m + 1] = c
    return SplineSpace1D(KnotVector(p - 1, tuple(kv[1:-1]))), D


@dataclass(frozen=True)
class TensorSplineSpace:
    """Tensor product of univariate spaces; DOFs are numbered in C order."""

    spaces: tuple[SplineSpace1D, ...]

    @classmethod
    def uniform(cls, n_elements: Sequence[int], degrees: Sequence[int], regularities: Sequence[int]):
        return cls(tuple(SplineSpace1D.uniform(n, p, r) for n, p, r in zip(n_elements, degrees, regularities)))

    @property
    def ndim(self) -> int:
        return len(self.spaces)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.spaces)

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(s.degree for s in self.spaces)

    @property
    def regularities(self) -> tuple[int, ...]:
        return tuple(s.regularity for s in self.spaces)

    def index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(m) for m in multi), self.shape)

    def basis_matrix(self, points, derivative: Sequence[int] | None = None) -> sp.csr_matrix:
        """Sparse ``(npts, dim)`` matrix of (partial derivatives of) basis values.

        ``derivative`` gives the derivative order per direction, e.g. ``(1, 0)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        npts, d = pts.shape
        derivative = (0,) * d if derivative is None else tuple(derivative)
        vals = np.ones((npts, 1))
        cols = np.zeros((npts, 1), dtype=np.int64)
        for ax, s in enumerate(self.spaces):
            first, v = s.local_basis(pts[:, ax], nders=derivative[ax])
            idx = first[:, None] + np.arange(s.degree + 1)
            vals = (vals[:, :, None] * v[derivative[ax]][:, None, :]).reshape(npts, -1)
            cols = (cols[:, :, None] * s.dim + idx[:, None, :]).reshape(npts, -1)
        rows = np.repeat(np.arange(npts), cols.shape[1])
        return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(npts, self.dim))

    def evaluate(self, coeffs, points, derivative=None) -> np.ndarray:
        return self.basis_matrix(points, derivative) @ np.asarray(coeffs, dtype=float)
