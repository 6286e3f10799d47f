"""Quadrature and assembly of the mixed saddle-point system.

Per patch, every block is assembled element-batched: basis tables of shape
``(elements, quad points, local functions)`` are contracted with pointwise
pullback factors by ``einsum``; patch matrices are then merged through the
signed coupling matrices of the spaces.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .derham import (
    DiscreteSpace,
    ElasticitySpaces,
    FieldBlock,
    boundary_face_dofs,
    is_vector_block,
    value_vector,
    div_weights,
    scalar_scale,
)
from .geometry import DegenerateGeometryError, GeometryMap, adjugate, as_multipatch, determinant, face_key
from .operators import MaterialParams, skew
from .splines import TensorSplineSpace


def gauss_legendre(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on ``[0, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule with ``n_points`` per direction on every element."""

    n_points: int

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("need at least one quadrature point")

    @property
    def exact_degree(self) -> int:
        return 2 * self.n_points - 1

    def on_elements(self, breakpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights ``(n_el, n_points)`` on consecutive breakpoint intervals."""
        x, w = gauss_legendre(self.n_points)
        lo, hi = breakpoints[:-1, None], breakpoints[1:, None]
        return lo + (hi - lo) * x, (hi - lo) * w


def _outer(arrs):
    """Tensor product over directions of ``(n_el_d, n_q, n_a)`` arrays in C order."""
    out = np.ones((1, 1, 1))
    for a in arrs:
        E, Q, A = out.shape
        e, q, k = a.shape
        out = (out[:, None, :, None, :, None] * a[None, :, None, :, None, :]).reshape(E * e, Q * q, A * k)
    return out


class PatchQuadrature:
    """Quadrature points, weights and geometry factors on all elements of one patch."""

    def __init__(self, geometry: GeometryMap, breakpoints: Sequence[np.ndarray], rule: QuadratureRule):
        self.geometry = geometry
        self.rule = rule
        self.breakpoints = tuple(np.asarray(b, dtype=float) for b in breakpoints)
        self.n = len(self.breakpoints)
        per_dir = [rule.on_elements(b) for b in self.breakpoints]
        self.points_1d = [p for p, _ in per_dir]
        self.weights_1d = [w for _, w in per_dir]
        coords = []
        for d in range(self.n):
            arrs = [np.ones((len(b) - 1, rule.n_points, 1)) for b in self.breakpoints]
            arrs[d] = self.points_1d[d][:, :, None]
            coords.append(_outer(arrs)[:, :, 0])
        self.zeta = np.stack(coords, axis=-1)
        self.weights = _outer([w[:, :, None] for w in self.weights_1d])[:, :, 0]
        E, Q = self.weights.shape
        flat = self.zeta.reshape(-1, self.n)
        J = geometry.jacobian(flat)
        det = determinant(J)
        if np.any(det <= 0):
            raise DegenerateGeometryError(f"{geometry.name}: det J <= 0 at a quadrature point")
        self.J = J.reshape(E, Q, self.n, self.n)
        self.det = det.reshape(E, Q)
        self.G = np.linalg.inv(self.J)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @cached_property
    def x(self) -> np.ndarray:
        return self.geometry(self.zeta.reshape(-1, self.n)).reshape(*self.shape, self.n)

    @property
    def dx(self) -> np.ndarray:
        """Physical integration weights ``w det J``."""
        return self.weights * self.det


class ElementBasis:
    """Values, parametric gradients and global indices of a tensor space on all elements."""

    def __init__(self, space: TensorSplineSpace, quad: PatchQuadrature):
        vals, ders, idx = [], [], []
        for d, s in enumerate(space.spaces):
            pts = quad.points_1d[d]
            spans = s.knot_vector.element_spans()
            if len(spans) != pts.shape[0]:
                raise ValueError("space and quadrature meshes differ")
            first, v = s.local_basis(pts.ravel(), nders=1, spans=np.repeat(spans, pts.shape[1]))
            vals.append(v[0].reshape(pts.shape[0], pts.shape[1], -1))
            ders.append(v[1].reshape(pts.shape[0], pts.shape[1], -1))
            idx.append(first.reshape(pts.shape)[:, 0, None] + np.arange(s.degree + 1))
        self.values = _outer(vals)
        self.grads = np.stack([_outer([ders[k] if k == d else vals[k] for k in range(len(vals))])
                               for d in range(len(vals))], axis=-1)
        dofs = np.zeros((1, 1), dtype=np.int64)
        for d, s in enumerate(space.spaces):
            dofs = (dofs[:, None, :, None] * s.dim + idx[d][None, :, None, :]).reshape(
                dofs.shape[0] * idx[d].shape[0], -1)
        self.dofs = dofs
        self.dim = space.dim


def _triplets(rows, cols, local):
    """COO data from per-element dense blocks ``local[e, a, b]``."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    return r, c, local.ravel()


def _sparse(rows, cols, vals, shape):
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


class PatchFieldTables:
    """Element tables of every component of a field block on one patch."""

    def __init__(self, block: FieldBlock, quad: PatchQuadrature):
        self.block = block
        self.quad = quad
        self.bases = [ElementBasis(S, quad) for S in block.components]
        self.vector = is_vector_block(block, quad.n)

    def value_vec(self, k):
        q = self.quad
        return value_vector(self.block.kind, k, q.J, q.det, q.G)

    def div_vec(self, k):
        q = self.quad
        return np.broadcast_to(div_weights(self.block.kind, k, q.J, q.det, q.G), q.J.shape[:-1])

    def scale(self):
        return scalar_scale(self.block.kind, self.quad.det)

    def dofs(self, copy, k):
        return self.bases[k].dofs + self.block.offset(copy, k)

    def evaluate(self, local_coeffs) -> dict:
        """Field values (and divergence for row fields) at all quadrature points."""
        c = np.asarray(local_coeffs, dtype=float)
        q = self.quad
        E, Q = q.shape
        n = q.n
        if self.vector:
            val = np.zeros((E, Q, self.block.copies, n))
            div = np.zeros((E, Q, self.block.copies))
            for i in range(self.block.copies):
                for k, B in enumerate(self.bases):
                    loc = c[self.dofs(i, k)]
                    s = np.einsum("eqa,ea->eq", B.values, loc)
                    val[:, :, i, :] += s[..., None] * self.value_vec(k)
                    g = np.einsum("eqad,ea->eqd", B.grads, loc)
                    div[:, :, i] += np.einsum("eqd,eqd->eq", g, self.div_vec(k))
            return {"value": val, "div": div}
        val = np.zeros((E, Q, self.block.copies))
        grad = np.zeros((E, Q, self.block.copies, n))
        B = self.bases[0]
        for i in range(self.block.copies):
            loc = c[self.dofs(i, 0)]
            val[:, :, i] = np.einsum("eqa,ea->eq", B.values, loc) * self.scale()
            if self.block.kind == "Y0":
                g = np.einsum("eqad,ea->eqd", B.grads, loc)
                grad[:, :, i] = np.einsum("eqd,eqdk->eqk", g, q.G)
        return {"value": val, "grad": grad}


# --- patch-level block kernels --------------------------------------------------------

def _patch_compliance(sig: PatchFieldTables, params: MaterialParams) -> sp.csr_matrix:
    q = sig.quad
    n = q.n
    kappa = params.trace_coefficient
    N = sig.block.dim
    out = sp.csr_matrix((N, N))
    eye = np.eye(n)
    for k in range(n):
        ck = sig.value_vec(k)
        for l in range(k, n):
            cl = sig.value_vec(l)
            dot = np.einsum("eqd,eqd->eq", ck, cl)
            coef = (eye[None, None] * dot[..., None, None]
                    - kappa * ck[..., :, None] * cl[..., None, :]) * (q.dx / (2 * params.mu))[..., None, None]
            local = np.einsum("eqa,eqb,eqij->eijab", sig.bases[k].values, sig.bases[l].values, coef)
            rows, cols, vals = [], [], []
            for i in range(n):
                for j in range(n):
                    if not np.any(local[:, i, j]):
                        continue
                    r, c, v = _triplets(sig.dofs(i, k), sig.dofs(j, l), local[:, i, j])
                    rows.append(r), cols.append(c), vals.append(v)
            if not rows:
                continue
            block = _sparse(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (N, N))
            out = out + block if k == l else out + block + block.T
    return out.tocsr()


def _patch_divergence(u: PatchFieldTables, sig: PatchFieldTables) -> sp.csr_matrix:
    q = sig.quad
    rows, cols, vals = [], [], []
    ub = u.bases[0]
    wscale = q.dx * u.scale()
    for i in range(sig.block.copies):
        for k, B in enumerate(sig.bases):
            dphi = np.einsum("eqad,eqd->eqa", B.grads, sig.div_vec(k))
            local = np.einsum("eqb,eqa,eq->eba", ub.values, dphi, wscale)
            r, c, v = _triplets(u.dofs(i, 0), sig.dofs(i, k), local)
            rows.append(r), cols.append(c), vals.append(v)
    return _sparse(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (u.block.dim, sig.block.dim))


def _skew_of_row(i, vec, n):
    """Skew(e_i (x) vec) at every point."""
    M = np.zeros(vec.shape[:-1] + (n, n))
    M[..., i, :] = vec
    s = skew(M)
    return s[..., None] if n == 2 else s


def _patch_skew(pp: PatchFieldTables, sig: PatchFieldTables) -> sp.csr_matrix:
    q = sig.quad
    n = q.n
    rows, cols, vals = [], [], []
    pb = pp.bases[0]
    for i in range(sig.block.copies):
        for k, B in enumerate(sig.bases):
            sk = _skew_of_row(i, sig.value_vec(k), n)
            for c in range(pp.block.copies):
                coef = sk[..., c] * q.dx
                if not np.any(coef):
                    continue
                local = np.einsum("eqb,eqa,eq->eba", pb.values, B.values, coef)
                r, cc, v = _triplets(pp.dofs(c, 0), sig.dofs(i, k), local)
                rows.append(r), cols.append(cc), vals.append(v)
    return _sparse(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (pp.block.dim, sig.block.dim))


def _patch_load(u: PatchFieldTables, f_values: np.ndarray) -> np.ndarray:
    q = u.quad
    out = np.zeros(u.block.dim)
    ub = u.bases[0]
    for m in range(u.block.copies):
        local = np.einsum("eqb,eq->eb", ub.values, f_values[..., m] * u.scale() * q.dx)
        np.add.at(out, u.dofs(m, 0), local)
    return out


def _patch_mass(tab: PatchFieldTables, with_div: bool = False) -> sp.csr_matrix:
    """L^2 (optionally plus divergence) Gram matrix of a field block on one patch."""
    q = tab.quad
    N = tab.block.dim
    rows, cols, vals = [], [], []
    for i in range(tab.block.copies):
        for k, Bk in enumerate(tab.bases):
            for l, Bl in enumerate(tab.bases):
                if tab.vector:
                    coef = np.einsum("eqd,eqd->eq", tab.value_vec(k), tab.value_vec(l)) * q.dx
                else:
                    coef = tab.scale() ** 2 * q.dx
                local = np.einsum("eqa,eqb,eq->eab", Bk.values, Bl.values, coef)
                if with_div:
                    dk = np.einsum("eqad,eqd->eqa", Bk.grads, tab.div_vec(k))
                    dl = np.einsum("eqad,eqd->eqa", Bl.grads, tab.div_vec(l))
                    local = local + np.einsum("eqa,eqb,eq->eab", dk, dl, q.dx)
                r, c, v = _triplets(tab.dofs(i, k), tab.dofs(i, l), local)
                rows.append(r), cols.append(c), vals.append(v)
    return _sparse(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (N, N))


# --- faces -------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceQuadrature:
    """Gauss points on one patch face with outward area vectors ``nu ds = s cof(J) e_d dshat``."""

    zeta: np.ndarray
    weights: np.ndarray
    x: np.ndarray
    area_vector: np.ndarray

    @classmethod
    def build(cls, geometry: GeometryMap, breakpoints, face, rule: QuadratureRule) -> "FaceQuadrature":
        axis, side = face_key(face)
        n = geometry.dim
        tang = [d for d in range(n) if d != axis]
        pts, wts = [], []
        for d in tang:
            p, w = rule.on_elements(np.asarray(breakpoints[d]))
            pts.append(p.ravel())
            wts.append(w.ravel())
        grids = np.meshgrid(*pts, indexing="ij")
        s = np.stack([g.ravel() for g in grids], axis=-1)
        w = np.prod(np.stack([g.ravel() for g in np.meshgrid(*wts, indexing="ij")], -1), axis=-1)
        zeta = geometry.face_points((axis, side), s)
        J = geometry.jacobian(zeta)
        cof = np.swapaxes(adjugate(J), -1, -2)
        sign = 1.0 if side else -1.0
        return cls(zeta, w, geometry(zeta), sign * cof[:, :, axis])

    @property
    def normal(self) -> np.ndarray:
        return self.area_vector / np.linalg.norm(self.area_vector, axis=1, keepdims=True)

    @property
    def jacobian_ratio(self) -> np.ndarray:
        """``ds / dshat``."""
        return np.linalg.norm(self.area_vector, axis=1)


def evaluate_data(fn, x, zeta, patch):
    """Call boundary/volume data; objects with ``at_patch`` also receive parametric points."""
    if hasattr(fn, "at_patch"):
        return np.asarray(fn.at_patch(patch, zeta, x), dtype=float)
    return np.asarray(fn(x), dtype=float)


def _face_boundary_term(block: FieldBlock, geometry: GeometryMap, breakpoints, face, rule, u_D,
                        patch: int = 0) -> np.ndarray:
    fq = FaceQuadrature.build(geometry, breakpoints, face, rule)
    ud = evaluate_data(u_D, fq.x, fq.zeta, patch)
    J = geometry.jacobian(fq.zeta)
    det = determinant(J)
    G = np.linalg.inv(J)
    out = np.zeros(block.dim)
    for i in range(block.copies):
        for k, S in enumerate(block.components):
            flux = np.einsum("md,md->m", value_vector(block.kind, k, J, det, G), fq.area_vector)
            coef = ud[:, i] * flux * fq.weights
            if not np.any(coef):
                continue
            B = S.basis_matrix(fq.zeta)
            o = block.offset(i, k)
            out[o : o + S.dim] += B.T @ coef
    return out


TRACTION_PROJECTIONS = ("physical", "parametric")


def traction_coefficients(block: FieldBlock, geometry: GeometryMap, breakpoints, face, rule, traction,
                          projection: str = "physical") -> list[np.ndarray]:
    """Normal-trace coefficients per row imposing ``sigma nu = t`` on a face.

    The parametric normal component equals ``s t_i |cof(J) e_d|``. ``physical``
    minimizes the misfit of ``sigma nu`` in L^2 of the physical face; ``parametric``
    L^2-projects the parametric component on the reference face.
    """
    if projection not in TRACTION_PROJECTIONS:
        raise ValueError(f"unknown traction projection {projection!r}")
    axis, side = face_key(face)
    fq = FaceQuadrature.build(geometry, breakpoints, face, rule)
    t = np.asarray(traction(fq.x, fq.normal), dtype=float)
    S = block.components[axis]
    trace = TensorSplineSpace(tuple(s for d, s in enumerate(S.spaces) if d != axis))
    s_tan = np.delete(fq.zeta, axis, axis=1)
    B = trace.basis_matrix(s_tan)
    # sigma nu = s c / |cof e_d| and ds = |cof e_d| ds_hat, hence the 1/|cof e_d| weight
    w = fq.weights / fq.jacobian_ratio if projection == "physical" else fq.weights
    M = (B.T @ sp.diags(w) @ B).tocsc()
    sign = 1.0 if side else -1.0
    out = []
    for i in range(block.copies):
        target = sign * t[:, i] * fq.jacobian_ratio
        out.append(spsolve(M, B.T @ (w * target)) if trace.dim > 1 else
                   np.atleast_1d((B.T @ (w * target)) / M.toarray()[0, 0]))
    return out


# --- global system ------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """Data of a boundary value problem.

    ``dirichlet``/``traction`` list boundary faces as ``(patch, face)``; every
    boundary face must appear in exactly one of them. ``u_D(x)`` and ``f(x)``
    return ``(m, n)`` arrays; ``t(x, normal)`` returns tractions ``(m, n)``.
    Data objects providing ``at_patch(patch, zeta, x)`` are called with the
    parametric points as well.
    """

    load: Callable | None = None
    u_D: Callable | None = None
    traction_data: Callable | None = None
    dirichlet: tuple = ()
    traction: tuple = ()
    traction_projection: str = "physical"


@dataclass(eq=False)
class MixedSystem:
    spaces: ElasticitySpaces
    params: MaterialParams
    A: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    g_sigma: np.ndarray
    g_u: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        nu, npp = self.B1.shape[0], self.B2.shape[0]
        return sp.bmat([[self.A, self.B1.T, self.B2.T],
                        [self.B1, None, None],
                        [self.B2, None, sp.csr_matrix((npp, npp))]], format="csr")

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.g_sigma, self.g_u, np.zeros(self.B2.shape[0])])

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def reduced(self):
        """Matrix, right-hand side and free indices after eliminating fixed stress dofs."""
        M = self.matrix
        b = self.rhs
        if len(self.fixed) == 0:
            return M, b, np.arange(M.shape[0])
        x_fixed = np.zeros(M.shape[0])
        x_fixed[self.fixed] = self.fixed_values
        free = np.setdiff1d(np.arange(M.shape[0]), self.fixed)
        b_red = (b - M @ x_fixed)[free]
        return M[free][:, free].tocsr(), b_red, free

    def dump(self, path) -> None:
        scipy.io.mmwrite(str(path), self.matrix)


def _patch_tables(spaces: ElasticitySpaces, k: int, rule: QuadratureRule):
    F = spaces.geometry.patches[k]
    bps = tuple(s.knot_vector.breakpoints for s in spaces.sigma.blocks[k].components[0].spaces)
    quad = PatchQuadrature(F, bps, rule)
    return (quad, PatchFieldTables(spaces.sigma.blocks[k], quad), PatchFieldTables(spaces.u.blocks[k], quad),
            PatchFieldTables(spaces.p.blocks[k], quad))


def default_rule(spaces: ElasticitySpaces, extra: int = 2) -> QuadratureRule:
    return QuadratureRule(spaces.degree + extra)


def _merge(space_row: DiscreteSpace, space_col: DiscreteSpace, mats: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    if space_row.trivial and space_col.trivial:
        return sp.block_diag(mats, format="csr") if len(mats) > 1 else mats[0].tocsr()
    local = sp.block_diag(mats, format="csr")
    return (space_row.coupling.T @ local @ space_col.coupling).tocsr()


def _merge_vec(space: DiscreteSpace, vecs: Sequence[np.ndarray]) -> np.ndarray:
    return space.coupling.T @ np.concatenate(vecs)


def assemble(spaces: ElasticitySpaces, params: MaterialParams, problem: Problem,
             rule: QuadratureRule | None = None, threads: int = 1) -> MixedSystem:
    """Assemble blocks, load, Dirichlet boundary term and strong traction data."""
    if params.dim != spaces.dim:
        raise ValueError("material dimension does not match the geometry")
    rule = rule or default_rule(spaces)
    geom = spaces.geometry
    _check_boundary_partition(geom, problem)

    def patch_work(k):
        quad, sig, u, pp = _patch_tables(spaces, k, rule)
        A = _patch_compliance(sig, params)
        B1 = _patch_divergence(u, sig)
        B2 = _patch_skew(pp, sig)
        f = np.zeros(quad.shape + (quad.n,)) if problem.load is None else \
            evaluate_data(problem.load, quad.x.reshape(-1, quad.n), quad.zeta.reshape(-1, quad.n),
                          k).reshape(quad.shape + (quad.n,))
        gu = _patch_load(u, f)
        gs = np.zeros(sig.block.dim)
        if problem.u_D is not None:
            for (pk, face) in problem.dirichlet:
                if pk == k:
                    gs += _face_boundary_term(sig.block, geom.patches[k], quad.breakpoints, face, rule, problem.u_D, k)
        return A, B1, B2, gu, gs

    if threads > 1 and len(geom.patches) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(patch_work, range(len(geom.patches))))
    else:
        results = [patch_work(k) for k in range(len(geom.patches))]

    A = _merge(spaces.sigma, spaces.sigma, [r[0] for r in results])
    B1 = _merge(spaces.u, spaces.sigma, [r[1] for r in results])
    B2 = _merge(spaces.p, spaces.sigma, [r[2] for r in results])
    g_u = _merge_vec(spaces.u, [r[3] for r in results])
    g_s = _merge_vec(spaces.sigma, [r[4] for r in results])
    fixed, values = traction_dofs(spaces, problem, rule)
    return MixedSystem(spaces, params, A, B1, B2, g_s, g_u, fixed, values)


def _check_boundary_partition(geom, problem: Problem) -> None:
    boundary = set(geom.boundary_faces())
    d = {(int(k), face_key(f)) for k, f in problem.dirichlet}
    t = {(int(k), face_key(f)) for k, f in problem.traction}
    if d & t:
        raise ValueError("a face cannot be both Dirichlet and traction")
    if (d | t) != boundary:
        raise ValueError("Dirichlet and traction faces must partition the boundary")


def traction_dofs(spaces: ElasticitySpaces, problem: Problem, rule: QuadratureRule):
    if not problem.traction:
        return np.zeros(0, dtype=int), np.zeros(0)
    sig = spaces.sigma
    idx, vals = [], []
    for entry in boundary_face_dofs(sig, list(problem.traction)):
        k = entry["patch"]
        if problem.traction_data is None:
            coeffs = np.zeros(entry["local"].size)
        else:
            bps = tuple(s.knot_vector.breakpoints for s in sig.blocks[k].components[0].spaces)
            coeffs = traction_coefficients(sig.blocks[k], sig.geometry.patches[k], bps, entry["face"], rule,
                                           problem.traction_data, problem.traction_projection)[entry["copy"]]
        idx.append(entry["glob"].ravel())
        vals.append(entry["sign"].ravel() * coeffs)
    idx = np.concatenate(idx)
    vals = np.concatenate(vals)
    order = np.argsort(idx)
    return idx[order], vals[order]


def gram_matrices(spaces: ElasticitySpaces, rule: QuadratureRule | None = None):
    """H(div) Gram matrix of the stress space and L^2 Gram matrices of U and P."""
    rule = rule or default_rule(spaces)
    gs, gu, gp = [], [], []
    for k in range(len(spaces.geometry.patches)):
        _, sig, u, pp = _patch_tables(spaces, k, rule)
        gs.append(_patch_mass(sig, with_div=True))
        gu.append(_patch_mass(u))
        gp.append(_patch_mass(pp))
    return (_merge(spaces.sigma, spaces.sigma, gs), _merge(spaces.u, spaces.u, gu), _merge(spaces.p, spaces.p, gp))


def l2_gram(space: DiscreteSpace, rule: QuadratureRule) -> sp.csr_matrix:
    mats = []
    for k, block in enumerate(space.blocks):
        bps = tuple(s.knot_vector.breakpoints for s in block.components[0].spaces)
        quad = PatchQuadrature(space.geometry.patches[k], bps, rule)
        mats.append(_patch_mass(PatchFieldTables(block, quad)))
    return _merge(space, space, mats)


def dirichlet_everywhere(geometry) -> tuple:
    """All boundary faces of a (multi-)patch geometry as ``(patch, face)`` pairs."""
    return tuple(as_multipatch(geometry).boundary_faces())
