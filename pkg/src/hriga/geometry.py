"""Patch parametrizations, meshes and the catalog of test domains."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._jax import jax, jnp
from .splines import KnotVector, SplineSpace1D, TensorSplineSpace

FACE_NAMES = {
    "left": (0, 0), "right": (0, 1),
    "bottom": (1, 0), "top": (1, 1),
    "front": (2, 0), "back": (2, 1),
}


class DegenerateGeometryError(ValueError):
    """det J <= 0 somewhere it was evaluated."""


class PointOutsideError(ValueError):
    """A physical point could not be pulled back into the parameter domain."""


def face_key(face) -> tuple[int, int]:
    """Normalize a face given by name or ``(axis, side)``."""
    if isinstance(face, str):
        try:
            return FACE_NAMES[face]
        except KeyError:
            raise ValueError(f"unknown face {face!r}") from None
    axis, side = face
    return int(axis), int(side)


def adjugate(J: np.ndarray) -> np.ndarray:
    """Adjugate of a stack of 2x2 or 3x3 matrices, ``adj(J) J = det(J) I``."""
    n = J.shape[-1]
    if n == 2:
        adj = np.empty_like(J)
        adj[..., 0, 0] = J[..., 1, 1]
        adj[..., 1, 1] = J[..., 0, 0]
        adj[..., 0, 1] = -J[..., 0, 1]
        adj[..., 1, 0] = -J[..., 1, 0]
        return adj
    if n == 3:
        # rows of adj are cross products of columns of J
        c0, c1, c2 = J[..., :, 0], J[..., :, 1], J[..., :, 2]
        return np.stack([np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)], axis=-2)
    raise ValueError("only 2x2 and 3x3 supported")


def determinant(J: np.ndarray) -> np.ndarray:
    if J.shape[-1] == 2:
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    return np.einsum("...i,...i->...", J[..., :, 0], np.cross(J[..., :, 1], J[..., :, 2]))


@dataclass(frozen=True, eq=False)
class GeometryMap:
    """Smooth map ``F: [0,1]^n -> R^n`` given as a jax-traceable point function.

    ``degree``/``regularity`` describe the map as a spline (``regularity=None``
    means no interior knots); they feed the identity-in-stress-space predicate.
    """

    dim: int
    func: Callable | None
    name: str = "map"
    degree: int | None = None
    regularity: int | None = None
    inverse: Callable | None = None
    rational: bool = False

    @cached_property
    def _f(self):
        return jax.jit(jax.vmap(self.func))

    @cached_property
    def _jac(self):
        return jax.jit(jax.vmap(jax.jacfwd(self.func)))

    @cached_property
    def _hess(self):
        return jax.jit(jax.vmap(jax.jacfwd(jax.jacfwd(self.func))))

    @staticmethod
    def _points(zeta, n):
        z = np.asarray(zeta, dtype=float)
        return z.reshape(-1, n)

    def __call__(self, zeta) -> np.ndarray:
        return np.asarray(self._f(self._points(zeta, self.dim)))

    def jacobian(self, zeta) -> np.ndarray:
        return np.asarray(self._jac(self._points(zeta, self.dim)))

    def hessian(self, zeta) -> np.ndarray:
        """``H[m, a, b, c] = d^2 F_a / d zeta_b d zeta_c``."""
        return np.asarray(self._hess(self._points(zeta, self.dim)))

    def jacobian_pack(self, zeta):
        """``(J, det J, adj J)`` at the given points; rejects nonpositive determinants."""
        J = self.jacobian(zeta)
        det = determinant(J)
        if np.any(det <= 0):
            raise DegenerateGeometryError(f"{self.name}: det J <= 0 at {int(np.sum(det <= 0))} points")
        return J, det, adjugate(J)

    def invert(self, x, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Parametric preimages of physical points (closed form or Newton)."""
        x = self._points(x, self.dim)
        if self.inverse is not None:
            z = np.asarray(self.inverse(x), dtype=float).reshape(-1, self.dim)
        else:
            z = self._newton(x, tol, max_iter)
        if np.any(z < -1e-9) or np.any(z > 1 + 1e-9):
            raise PointOutsideError("point lies outside the patch")
        return np.clip(z, 0.0, 1.0)

    def _newton(self, x, tol, max_iter):
        grid = np.stack(np.meshgrid(*[np.linspace(0, 1, 9)] * self.dim, indexing="ij"), -1).reshape(-1, self.dim)
        gx = self(grid)
        z = grid[np.argmin(((x[:, None, :] - gx[None]) ** 2).sum(-1), axis=1)].copy()
        scale = max(1.0, float(np.abs(gx).max()))
        for _ in range(max_iter):
            r = self(z) - x
            if np.max(np.abs(r)) <= tol * scale:
                return z
            step = np.linalg.solve(self.jacobian(z), r[..., None])[..., 0]
            z = np.clip(z - step, -0.5, 1.5)
        if np.max(np.abs(self(z) - x)) > 1e3 * tol * scale:
            raise PointOutsideError("Newton inversion did not converge")
        return z

    def face_points(self, face, s) -> np.ndarray:
        """Parametric points on a face from tangential coordinates ``s`` (m, n-1)."""
        axis, side = face_key(face)
        s = np.asarray(s, dtype=float).reshape(-1, self.dim - 1)
        return np.insert(s, axis, float(side), axis=1)


@dataclass(frozen=True, eq=False)
class SplineMap(GeometryMap):
    """Tensor-product B-spline or NURBS map evaluated from exact basis derivatives."""

    space: TensorSplineSpace | None = None
    control_points: np.ndarray | None = None
    weights: np.ndarray | None = None

    def _derivs(self, zeta, order):
        """Weighted numerator/denominator derivatives keyed by multi-index."""
        z = self._points(zeta, self.dim)
        n = self.dim
        out = {}
        for k in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(n), k):
                mi = tuple(combo.count(d) for d in range(n))
                B = self.space.basis_matrix(z, mi)
                out[combo] = (B @ (self.control_points * self.weights[:, None]), B @ self.weights)
        return out

    def __call__(self, zeta):
        A, W = self._derivs(zeta, 0)[()]
        return A / W[:, None]

    def jacobian(self, zeta):
        d = self._derivs(zeta, 1)
        A, W = d[()]
        F = A / W[:, None]
        cols = [(d[(b,)][0] - F * d[(b,)][1][:, None]) / W[:, None] for b in range(self.dim)]
        return np.stack(cols, axis=-1)

    def hessian(self, zeta):
        d = self._derivs(zeta, 2)
        n = self.dim
        A, W = d[()]
        F = A / W[:, None]
        dF = [(d[(b,)][0] - F * d[(b,)][1][:, None]) / W[:, None] for b in range(n)]
        H = np.empty((len(W), n, n, n))
        for b in range(n):
            for c in range(b, n):
                A2, W2 = d[(b, c)]
                val = (A2 - dF[b] * d[(c,)][1][:, None] - dF[c] * d[(b,)][1][:, None]
                       - F * W2[:, None]) / W[:, None]
                H[:, :, b, c] = val
                H[:, :, c, b] = val
        return H


def spline_map(degrees, knots, control_points, weights=None, name="spline") -> SplineMap:
    """Tensor-product B-spline or NURBS map; control points in C order."""
    degrees = tuple(int(p) for p in degrees)
    space = TensorSplineSpace(tuple(SplineSpace1D(KnotVector(p, tuple(k))) for p, k in zip(degrees, knots)))
    n = len(degrees)
    P = np.asarray(control_points, dtype=float).reshape(space.dim, -1)
    if P.shape[-1] != n:
        raise ValueError("control point dimension must match parametric dimension")
    w = np.ones(space.dim) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != (space.dim,) or np.any(w <= 0):
        raise ValueError("need one positive weight per control point")
    regs = [s.regularity for s in space.spaces if s.n_elements > 1]
    return SplineMap(n, None, name=name, degree=max(degrees), regularity=min(regs) if regs else None,
                     rational=not np.allclose(w, w[0]), space=space, control_points=P, weights=w)


def load_spline_map(path) -> GeometryMap:
    """Load a map from a JSON control-net file.

    Schema: ``{"degrees": [..], "knots": [[..], ..], "control_points": [[x, y(, z)], ..],
    "weights": [..] (optional)}`` with control points in C order.
    """
    data = json.loads(Path(path).read_text())
    return spline_map(data["degrees"], data["knots"], data["control_points"], data.get("weights"),
                      name=Path(path).stem)


def fit_patch(func: Callable, degrees: Sequence[int], lower, upper, name="fit") -> GeometryMap:
    """Single-element B-spline interpolant of ``func`` on the box ``[lower, upper]``.

    Interpolation points are the Greville abscissae, so maps of matching degree are
    reproduced exactly.
    """
    n = len(degrees)
    spaces = TensorSplineSpace(tuple(SplineSpace1D.uniform(1, p, p - 1) for p in degrees))
    gr = [s.greville() for s in spaces.spaces]
    eta = np.stack(np.meshgrid(*gr, indexing="ij"), -1).reshape(-1, n)
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    vals = np.asarray(jax.vmap(func)(lower + eta * (upper - lower)))
    B = spaces.basis_matrix(eta).toarray()
    ctrl = np.linalg.solve(B, vals)
    knots = [s.knot_vector.knots for s in spaces.spaces]
    return spline_map(degrees, knots, ctrl, name=name)


@dataclass(frozen=True)
class Interface:
    """Shared face between two patches.

    Tangential coordinates (remaining axes in increasing order) relate through
    ``s_b[perm[j]] = s_a[j]`` (or ``1 - s_a[j]`` where ``flips[j]``).
    """

    patch_a: int
    face_a: tuple[int, int]
    patch_b: int
    face_b: tuple[int, int]
    perm: tuple[int, ...]
    flips: tuple[bool, ...]

    def map_tangential(self, s_a: np.ndarray) -> np.ndarray:
        s_a = np.atleast_2d(s_a)
        s_b = np.empty_like(s_a)
        for j, (k, f) in enumerate(zip(self.perm, self.flips)):
            s_b[:, k] = 1.0 - s_a[:, j] if f else s_a[:, j]
        return s_b


@dataclass(frozen=True, eq=False)
class MultiPatchGeometry:
    patches: tuple[GeometryMap, ...]
    interfaces: tuple[Interface, ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.patches[0].dim

    @classmethod
    def from_patches(cls, patches: Sequence[GeometryMap], tol: float = 1e-10) -> "MultiPatchGeometry":
        return cls(tuple(patches), tuple(detect_interfaces(patches, tol)))

    def boundary_faces(self) -> list[tuple[int, tuple[int, int]]]:
        inner = {(i.patch_a, i.face_a) for i in self.interfaces} | {(i.patch_b, i.face_b) for i in self.interfaces}
        return [(k, f) for k in range(len(self.patches)) for f in _faces(self.dim) if (k, f) not in inner]

    def interface_mismatch(self, n_samples: int = 20, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for itf in self.interfaces:
            s = rng.random((n_samples, self.dim - 1))
            xa = self.patches[itf.patch_a](self.patches[itf.patch_a].face_points(itf.face_a, s))
            xb = self.patches[itf.patch_b](self.patches[itf.patch_b].face_points(itf.face_b, itf.map_tangential(s)))
            worst = max(worst, float(np.abs(xa - xb).max()))
        return worst


def _faces(n):
    return [(a, s) for a in range(n) for s in (0, 1)]


def detect_interfaces(patches: Sequence[GeometryMap], tol: float = 1e-10) -> list[Interface]:
    """Find conforming shared faces by matching sampled face images."""
    n = patches[0].dim
    probe = np.array(list(itertools.product([0.0, 0.37, 1.0], repeat=n - 1)))
    scale = max(1.0, max(float(np.abs(p(np.full((1, n), 0.5))).max()) for p in patches))
    found = []
    for a, b in itertools.combinations(range(len(patches)), 2):
        for fa in _faces(n):
            xa = patches[a](patches[a].face_points(fa, probe))
            for fb in _faces(n):
                for perm in itertools.permutations(range(n - 1)):
                    for flips in itertools.product([False, True], repeat=n - 1):
                        itf = Interface(a, fa, b, fb, perm, flips)
                        xb = patches[b](patches[b].face_points(fb, itf.map_tangential(probe)))
                        if np.abs(xa - xb).max() <= tol * scale:
                            found.append(itf)
                            break
                    else:
                        continue
                    break
    return found


@dataclass(frozen=True)
class Mesh:
    """Tensor-product element partition of the parameter domain."""

    breakpoints: tuple[np.ndarray, ...]

    @classmethod
    def uniform(cls, n_elements: Sequence[int]) -> "Mesh":
        return cls(tuple(np.linspace(0.0, 1.0, k + 1) for k in n_elements))

    @classmethod
    def from_space(cls, space: TensorSplineSpace) -> "Mesh":
        return cls(tuple(s.knot_vector.breakpoints for s in space.spaces))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(b) - 1 for b in self.breakpoints)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.shape))

    def element_bounds(self) -> np.ndarray:
        """``(n_el, dim, 2)`` parametric boxes in C order."""
        lo = np.stack(np.meshgrid(*[b[:-1] for b in self.breakpoints], indexing="ij"), -1)
        hi = np.stack(np.meshgrid(*[b[1:] for b in self.breakpoints], indexing="ij"), -1)
        d = len(self.breakpoints)
        return np.stack([lo.reshape(-1, d), hi.reshape(-1, d)], axis=-1)

    def diameter(self, geometry: GeometryMap) -> float:
        """Largest physical element diameter, measured over element corners."""
        boxes = self.element_bounds()
        d = boxes.shape[1]
        corners = np.array(list(itertools.product([0, 1], repeat=d)))
        pts = np.take_along_axis(boxes[:, None, :, :], corners[None, :, :, None], axis=-1)[..., 0]
        x = geometry(pts.reshape(-1, d)).reshape(len(boxes), len(corners), d)
        diff = x[:, :, None, :] - x[:, None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())


# --- catalog -----------------------------------------------------------------

def _identity(n):
    return GeometryMap(n, lambda z: z, name="identity", degree=1, inverse=lambda x: x)


def _deformed_square_func(z):
    return jnp.stack([z[0], z[1] - z[0] ** 2 + z[0]])


def _deformed_square_inverse(x):
    x = np.asarray(x)
    return np.stack([x[:, 0], x[:, 1] + x[:, 0] ** 2 - x[:, 0]], axis=1)


def deformed_square() -> GeometryMap:
    return GeometryMap(2, _deformed_square_func, name="deformed_square", degree=2,
                       inverse=_deformed_square_inverse)


COOK_CORNERS = np.array([[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]])


def cook() -> GeometryMap:
    c = COOK_CORNERS

    def func(z):
        a, b = z[0], z[1]
        return (1 - a) * (1 - b) * c[0] + a * (1 - b) * c[1] + a * b * c[2] + (1 - a) * b * c[3]

    return GeometryMap(2, func, name="cook", degree=1)


def ring3d(inner: float = 1.0, outer: float = 2.0, height: float = 1.0) -> GeometryMap:
    """Quarter annular prism: radial, angular (exact quadratic NURBS arc), axial."""
    w = np.sqrt(0.5)
    arc = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    ctrl = np.zeros((2, 3, 2, 3))
    weights = np.zeros((2, 3, 2))
    for i, rad in enumerate((inner, outer)):
        for j in range(3):
            for k, z in enumerate((0.0, height)):
                ctrl[i, j, k] = [rad * arc[j, 0], rad * arc[j, 1], z]
                weights[i, j, k] = w if j == 1 else 1.0
    knots = [(0, 0, 1, 1), (0, 0, 0, 1, 1, 1), (0, 0, 1, 1)]
    g = spline_map((1, 2, 1), knots, ctrl.reshape(-1, 3), weights.ravel(), name="ring3d")
    return g


NINE_PATCH_BREAKS = (0.0, 0.25, 0.6, 1.0)


def deformed_square_9patch(breaks: Sequence[float] = NINE_PATCH_BREAKS) -> MultiPatchGeometry:
    """3x3 split of the deformed square, each cell refit as a biquadratic patch.

    Unequal cells make the glued parametrization continuous but not C^1.
    """
    patches = []
    for i in range(3):
        for j in range(3):
            lo = (breaks[i], breaks[j])
            hi = (breaks[i + 1], breaks[j + 1])
            patches.append(fit_patch(_deformed_square_func, (2, 2), lo, hi, name=f"cell{i}{j}"))
    return MultiPatchGeometry.from_patches(patches)


def cube_2patch(dim: int = 3) -> MultiPatchGeometry:
    """Unit square/cube split at x = 1/2 into two affine patches."""
    def make(offset):
        def func(z):
            return z.at[0].set(offset + 0.5 * z[0])
        return GeometryMap(dim, func, name=f"half{offset}", degree=1)
    return MultiPatchGeometry.from_patches([make(0.0), make(0.5)])


CATALOG = {
    "unit_square": lambda **kw: _identity(2),
    "unit_cube": lambda **kw: _identity(3),
    "deformed_square": lambda **kw: deformed_square(),
    "cook": lambda **kw: cook(),
    "ring3d": lambda **kw: ring3d(**kw),
    "deformed_square_9patch": lambda **kw: deformed_square_9patch(**kw),
    "cube_2patch": lambda **kw: cube_2patch(**kw),
}


def catalog(name: str, **params) -> GeometryMap | MultiPatchGeometry:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown geometry {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


def as_multipatch(geometry) -> MultiPatchGeometry:
    if isinstance(geometry, MultiPatchGeometry):
        return geometry
    return MultiPatchGeometry((geometry,), ())
