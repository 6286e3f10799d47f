"""Discrete de Rham spaces on mapped patches and the elasticity space triple.

A physical field is stored through its parametric pullback:

* ``Y0``: ``q o F`` (each component a scalar, gradients map with ``J^-T``)
* ``Y1``: ``J^T (v o F)`` (covariant)
* ``Y2``: ``det(J) J^-1 (v o F)`` (contravariant Piola, preserves normal traces)
* ``Y3``: ``det(J) (q o F)`` (densities)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .geometry import GeometryMap, MultiPatchGeometry, as_multipatch, determinant, face_key
from .splines import SplineSpace1D, TensorSplineSpace, derivative_space

KINDS = ("Y0", "Y1", "Y2", "Y3")


class ConfigurationError(ValueError):
    """Invalid combination of degrees, regularities, meshes or interfaces."""


def _space(n_el, degree, regularity) -> SplineSpace1D:
    return SplineSpace1D.uniform(n_el, degree, regularity)


def derham_spaces(n: int, k: int, degree: int, regularity: int, n_elements: Sequence[int]) -> tuple[TensorSplineSpace, ...]:
    """Parametric component spaces of the ``k``-th discrete de Rham space.

    In 2D the middle space is the H(div) one (paired with ``curl`` from H^1).
    Component ``c`` of the H(div) space keeps the full degree in direction ``c``.
    """
    q, r = degree, regularity
    if q < 1 or r < 0 or r >= q:
        raise ConfigurationError(f"de Rham sequence needs degree > regularity >= 0, got ({q}, {r})")
    full = [_space(m, q, r) for m in n_elements]
    low = [_space(m, q - 1, r - 1) for m in n_elements]
    if k == 0:
        return (TensorSplineSpace(tuple(full)),)
    if k == n:
        return (TensorSplineSpace(tuple(low)),)
    comps = []
    for c in range(n):
        if (n, k) in ((2, 1), (3, 2)):
            dirs = [full[d] if d == c else low[d] for d in range(n)]
        elif (n, k) == (3, 1):
            dirs = [low[d] if d == c else full[d] for d in range(n)]
        else:
            raise ConfigurationError(f"no {k}-form space in dimension {n}")
        comps.append(TensorSplineSpace(tuple(dirs)))
    return tuple(comps)


@dataclass(frozen=True)
class FieldBlock:
    """One physical field on one patch: ``copies`` independent copies of a pulled-back space.

    For ``Y1``/``Y2`` the components form a single vector field; for ``Y0`` with
    several components each entry is an independent H^1 scalar. Local numbering
    is copy-major, then component, then C order within the tensor space.
    """

    kind: str
    components: tuple[TensorSplineSpace, ...]
    copies: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pullback {self.kind}")

    @property
    def dim_per_copy(self) -> int:
        return sum(c.dim for c in self.components)

    @property
    def dim(self) -> int:
        return self.copies * self.dim_per_copy

    @cached_property
    def comp_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([c.dim for c in self.components])])

    def offset(self, copy: int, comp: int) -> int:
        return copy * self.dim_per_copy + int(self.comp_offsets[comp])


def face_indices(space: TensorSplineSpace, face) -> np.ndarray:
    """Indices of functions with nonzero trace on a face, shaped by tangential directions."""
    axis, side = face_key(face)
    idx = np.arange(space.dim).reshape(space.shape)
    return np.take(idx, -1 if side else 0, axis=axis)


class _SignedUnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)
        self.parity = np.ones(n, dtype=int)

    def find(self, a):
        sign = 1
        path = []
        while self.parent[a] != a:
            path.append(a)
            sign *= self.parity[a]
            a = self.parent[a]
        # path compression
        acc = sign
        for node in path:
            s = self.parity[node]
            self.parent[node] = a
            self.parity[node] = acc
            acc *= s
        return a, sign

    def union(self, a, b, sign):
        """Impose ``x_b = sign * x_a``."""
        ra, sa = self.find(a)
        rb, sb = self.find(b)
        if ra == rb:
            if sa * sb != sign:
                raise ConfigurationError("inconsistent orientation in interface coupling")
            return
        self.parent[rb] = ra
        self.parity[rb] = sign * sa * sb


def _match_face(space_a, face_a, space_b, face_b, itf) -> tuple[np.ndarray, np.ndarray]:
    """Pair trace indices of two spaces across an interface, checking conformity."""
    ia = face_indices(space_a, face_a)
    ib = face_indices(space_b, face_b)
    ib = np.transpose(ib, itf.perm) if ib.ndim > 1 else ib
    tan_a = [d for d in range(space_a.ndim) if d != face_a[0]]
    tan_b = [d for d in range(space_b.ndim) if d != face_b[0]]
    for j, flip in enumerate(itf.flips):
        ka = space_a.spaces[tan_a[j]].knot_vector
        kb = space_b.spaces[tan_b[itf.perm[j]]].knot_vector
        kbv = 1.0 - kb.array[::-1] if flip else kb.array
        if ka.degree != kb.degree or len(ka.knots) != len(kbv) or not np.allclose(ka.array, kbv, atol=1e-12):
            raise ConfigurationError("nonconforming interface: face spaces differ")
        if flip:
            ib = np.flip(ib, axis=j)
    return ia.ravel(), ib.ravel()


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """A field on a (multi-)patch domain with its global numbering.

    ``coupling`` is the signed ``(local, global)`` matrix: local = coupling @ global,
    where local vectors concatenate the patch blocks.
    """

    name: str
    blocks: tuple[FieldBlock, ...]
    geometry: MultiPatchGeometry
    coupling: sp.csr_matrix
    trivial: bool = False

    @property
    def kind(self) -> str:
        return self.blocks[0].kind

    @property
    def dim(self) -> int:
        return self.coupling.shape[1]

    @cached_property
    def patch_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([b.dim for b in self.blocks])])

    def patch_coupling(self, k: int) -> sp.csr_matrix:
        return self.coupling[self.patch_offsets[k] : self.patch_offsets[k + 1]]

    def local_coefficients(self, coeffs, k: int) -> np.ndarray:
        return self.patch_coupling(k) @ np.asarray(coeffs)


def _build_coupling(blocks, geometry, kind_of_coupling) -> sp.csr_matrix:
    offsets = np.concatenate([[0], np.cumsum([b.dim for b in blocks])])
    n_local = int(offsets[-1])
    uf = _SignedUnionFind(n_local)
    for itf in geometry.interfaces:
        A, B = blocks[itf.patch_a], blocks[itf.patch_b]
        if kind_of_coupling == "normal":
            sign = -(1 if itf.face_a[1] else -1) * (1 if itf.face_b[1] else -1)
            ca, cb = itf.face_a[0], itf.face_b[0]
            ia, ib = _match_face(A.components[ca], itf.face_a, B.components[cb], itf.face_b, itf)
            for c in range(A.copies):
                ga = offsets[itf.patch_a] + A.offset(c, ca) + ia
                gb = offsets[itf.patch_b] + B.offset(c, cb) + ib
                for a, b in zip(ga, gb):
                    uf.union(a, b, sign)
        elif kind_of_coupling == "continuous":
            for comp in range(len(A.components)):
                ia, ib = _match_face(A.components[comp], itf.face_a, B.components[comp], itf.face_b, itf)
                for c in range(A.copies):
                    ga = offsets[itf.patch_a] + A.offset(c, comp) + ia
                    gb = offsets[itf.patch_b] + B.offset(c, comp) + ib
                    for a, b in zip(ga, gb):
                        uf.union(a, b, 1)
    roots = np.empty(n_local, dtype=int)
    signs = np.empty(n_local, dtype=int)
    for i in range(n_local):
        roots[i], signs[i] = uf.find(i)
    # roots in order of first appearance get consecutive global numbers
    _, first = np.unique(roots, return_index=True)
    ordered_roots = roots[np.sort(first)]
    lookup = np.empty(n_local, dtype=int)
    lookup[ordered_roots] = np.arange(len(ordered_roots))
    gids = lookup[roots]
    return sp.csr_matrix((signs.astype(float), (np.arange(n_local), gids)), shape=(n_local, len(ordered_roots)))


def make_space(name, blocks, geometry, coupling="none") -> DiscreteSpace:
    """Assemble a global space; ``coupling`` in {"normal", "continuous", "none"}."""
    geometry = as_multipatch(geometry)
    if len(blocks) != len(geometry.patches):
        raise ValueError("one block per patch required")
    if coupling == "none" or not geometry.interfaces:
        n = sum(b.dim for b in blocks)
        return DiscreteSpace(name, tuple(blocks), geometry, sp.identity(n, format="csr"), trivial=True)
    return DiscreteSpace(name, tuple(blocks), geometry, _build_coupling(blocks, geometry, coupling))


@dataclass(frozen=True, eq=False)
class ElasticitySpaces:
    sigma: DiscreteSpace
    u: DiscreteSpace
    p: DiscreteSpace
    degree: int
    regularity: int
    n_elements: tuple[int, ...]
    naive: bool = False
    aux: DiscreteSpace | None = None

    @property
    def dim(self) -> int:
        return self.sigma.geometry.dim

    @property
    def geometry(self) -> MultiPatchGeometry:
        return self.sigma.geometry

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.sigma.dim, self.u.dim, self.p.dim

    @property
    def total_dim(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])


def n_skew(n: int) -> int:
    return 2 * n - 3


def validate_degrees(n: int, p: int, r: int) -> None:
    if n == 2 and not p > r + 1 >= 1:
        raise ConfigurationError(f"2D spaces need p > r+1 >= 1 (got p={p}, r={r})")
    if n == 3 and not (p >= 2 and p - 1 > r >= 0):
        raise ConfigurationError(f"3D spaces need p >= 2 and p-1 > r >= 0 (got p={p}, r={r})")
    if n not in (2, 3):
        raise ConfigurationError("dimension must be 2 or 3")


def n_elements_from_h(h: float) -> int:
    m = 1.0 / h
    n = int(round(m))
    if n < 1 or abs(m - n) > 1e-9 * max(1.0, m):
        raise ConfigurationError(f"h={h} must be the reciprocal of a positive integer")
    return n


def build_spaces(geometry, h: float, p: int, r: int, naive: bool = False,
                 couple_pressure: bool = True, with_aux: bool = False) -> ElasticitySpaces:
    """Stress, displacement and multiplier spaces on every patch.

    ``naive=True`` gives equal-degree ``S_p^r`` components without Piola maps
    (unstable; used to contrast with the structured choice).
    """
    geometry = as_multipatch(geometry)
    n = geometry.dim
    n_el = (n_elements_from_h(h),) * n
    if naive:
        if not p > r >= 0:
            raise ConfigurationError(f"naive spaces need p > r >= 0 (got p={p}, r={r})")
        S = TensorSplineSpace(tuple(_space(m, p, r) for m in n_el))
        sig = FieldBlock("Y0", (S,) * n, copies=n)
        u = FieldBlock("Y0", (S,), copies=n)
        pp = FieldBlock("Y0", (S,), copies=n_skew(n))
        blocks = [(sig, u, pp)] * len(geometry.patches)
        return ElasticitySpaces(
            make_space("sigma", [b[0] for b in blocks], geometry, "continuous"),
            make_space("u", [b[1] for b in blocks], geometry, "continuous"),
            make_space("p", [b[2] for b in blocks], geometry, "continuous" if couple_pressure else "none"),
            p, r, n_el, naive=True)
    validate_degrees(n, p, r)
    sdeg = p if n == 2 else p + 1
    sig = FieldBlock("Y2", derham_spaces(n, n - 1, sdeg, r, n_el), copies=n)
    u = FieldBlock("Y3", derham_spaces(n, n, sdeg, r, n_el), copies=n)
    pp = FieldBlock("Y0", derham_spaces(n, 0, p - 1, r, n_el), copies=n_skew(n))
    npatch = len(geometry.patches)
    aux = None
    if with_aux:
        R = FieldBlock("Y0", derham_spaces(n, 0, p, r, n_el), copies=n)
        aux = make_space("aux", [R] * npatch, geometry, "continuous")
    return ElasticitySpaces(
        make_space("sigma", [sig] * npatch, geometry, "normal"),
        make_space("u", [u] * npatch, geometry, "none"),
        make_space("p", [pp] * npatch, geometry, "continuous" if couple_pressure else "none"),
        p, r, n_el, aux=aux)


# --- boundary dofs -------------------------------------------------------------

def _as_patch_faces(space: DiscreteSpace, faces) -> list[tuple[int, tuple[int, int]]]:
    out = []
    for f in faces:
        if isinstance(f, str) or (len(f) == 2 and not isinstance(f[1], (tuple, list, str))):
            if len(space.blocks) != 1:
                raise ValueError("multi-patch boundary parts need (patch, face) pairs")
            out.append((0, face_key(f)))
        else:
            out.append((int(f[0]), face_key(f[1])))
    return out


def boundary_face_dofs(space: DiscreteSpace, faces) -> list[dict]:
    """Per (patch, face, copy): local and global indices of the normal-trace dofs.

    Only ``Y2`` spaces carry normal traces; their component ``d`` is the one
    normal to faces of axis ``d``.
    """
    if space.kind != "Y2":
        raise ValueError("normal-trace dofs exist only for div-conforming spaces")
    entries = []
    for k, (axis, side) in _as_patch_faces(space, faces):
        if space.geometry.dim <= axis:
            raise ValueError("face axis exceeds dimension")
        block = space.blocks[k]
        comp = block.components[axis]
        fidx = face_indices(comp, (axis, side))
        C = space.patch_coupling(k).tocsr()
        for c in range(block.copies):
            local = block.offset(c, axis) + fidx
            rows = C[local.ravel()]
            if rows.nnz != local.size:
                raise ValueError("boundary part touches a patch interface")
            entries.append(dict(patch=k, face=(axis, side), copy=c, local=local, glob=rows.indices.reshape(local.shape),
                                sign=rows.data.reshape(local.shape), comp_space=comp))
    return entries


def boundary_normal_dofs(space: DiscreteSpace, faces) -> np.ndarray:
    """Sorted global indices controlling the normal trace on the given faces."""
    if not faces:
        return np.zeros(0, dtype=int)
    return np.unique(np.concatenate([e["glob"].ravel() for e in boundary_face_dofs(space, faces)]))


# --- physical evaluation ---------------------------------------------------------

def inverse_jacobian(J: np.ndarray) -> np.ndarray:
    return np.linalg.inv(J)


def value_vector(kind: str, comp: int, J, det, G) -> np.ndarray:
    """Physical vector carried by a unit parametric component (vector kinds)."""
    n = J.shape[-1]
    if kind == "Y2":
        return J[..., :, comp] / det[..., None]
    if kind == "Y1":
        return G[..., comp, :]
    if kind == "Y0":
        e = np.zeros(n)
        e[comp] = 1.0
        return np.broadcast_to(e, J.shape[:-1])
    raise ValueError(f"{kind} is not a vector pullback")


def div_weights(kind: str, comp: int, J, det, G) -> np.ndarray:
    """Weights ``w`` with physical divergence ``= w . grad_param(phi)`` for component ``comp``."""
    n = J.shape[-1]
    if kind == "Y2":
        e = np.zeros(n)
        e[comp] = 1.0
        return e / det[..., None]
    if kind == "Y0":
        return G[..., :, comp]
    raise ValueError(f"no divergence for {kind}")


def scalar_scale(kind: str, det) -> np.ndarray:
    if kind == "Y0":
        return np.ones_like(det)
    if kind == "Y3":
        return 1.0 / det
    raise ValueError(f"{kind} is not a scalar pullback")


def is_vector_block(block: FieldBlock, n: int) -> bool:
    return block.kind in ("Y1", "Y2") or len(block.components) == n and block.kind == "Y0" and len(block.components) > 1


def eval_physical_basis(space: DiscreteSpace, patch: int, points) -> dict:
    """Physical values and derivatives of every local basis function of a patch.

    Returns arrays indexed ``[point, local_dof, ...]``: ``value`` has shape
    ``(m, N, copies, n)`` for vector fields (one matrix row per copy) and
    ``(m, N, copies)`` for scalars; ``div`` (vector fields) or ``grad`` (Y0
    scalars) accompany them.
    """
    block = space.blocks[patch]
    F: GeometryMap = space.geometry.patches[patch]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = pts.shape
    J = F.jacobian(pts)
    det = determinant(J)
    G = inverse_jacobian(J)
    N = block.dim
    vector = is_vector_block(block, n)
    value = np.zeros((m, N, block.copies, n) if vector else (m, N, block.copies))
    deriv = np.zeros((m, N, block.copies) if vector else (m, N, block.copies, n))
    for c in range(block.copies):
        for k, S in enumerate(block.components):
            sl = slice(block.offset(c, k), block.offset(c, k) + S.dim)
            B = S.basis_matrix(pts).toarray()
            dB = np.stack([S.basis_matrix(pts, tuple(int(a == d) for a in range(n))).toarray() for d in range(n)], -1)
            if vector:
                vv = value_vector(block.kind, k, J, det, G)
                value[:, sl, c, :] = B[:, :, None] * vv[:, None, :]
                if block.kind != "Y1":
                    w = div_weights(block.kind, k, J, det, G)
                    deriv[:, sl, c] = np.einsum("mad,md->ma", dB, np.broadcast_to(w, (m, n)))
            else:
                value[:, sl, c] = B * scalar_scale(block.kind, det)[:, None]
                if block.kind == "Y0":
                    deriv[:, sl, c, :] = np.einsum("mad,mdk->mak", dB, G)
    key = "div" if vector else "grad"
    return {"value": value, key: deriv}


def evaluate_field(space: DiscreteSpace, patch: int, local_coeffs, points) -> dict:
    """Physical field (and divergence/gradient) from local coefficients at parametric points."""
    block = space.blocks[patch]
    F: GeometryMap = space.geometry.patches[patch]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = pts.shape
    J = F.jacobian(pts)
    det = determinant(J)
    G = inverse_jacobian(J)
    coeffs = np.asarray(local_coeffs, dtype=float)
    vector = is_vector_block(block, n)
    value = np.zeros((m, block.copies, n) if vector else (m, block.copies))
    deriv = np.zeros((m, block.copies) if vector else (m, block.copies, n))
    for k, S in enumerate(block.components):
        B = S.basis_matrix(pts)
        dB = [S.basis_matrix(pts, tuple(int(a == d) for a in range(n))) for d in range(n)]
        for c in range(block.copies):
            o = block.offset(c, k)
            cf = coeffs[o : o + S.dim]
            v = B @ cf
            g = np.stack([D @ cf for D in dB], -1)
            if vector:
                value[:, c, :] += v[:, None] * value_vector(block.kind, k, J, det, G)
                if block.kind != "Y1":
                    deriv[:, c] += np.einsum("md,md->m", g, np.broadcast_to(div_weights(block.kind, k, J, det, G), (m, n)))
            else:
                value[:, c] += v * scalar_scale(block.kind, det)
                if block.kind == "Y0":
                    deriv[:, c, :] += np.einsum("md,mdk->mk", g, G)
    return {"value": value, ("div" if vector else "grad"): deriv}


# --- subcomplex checks -------------------------------------------------------------

def _partial_map(space: TensorSplineSpace, axis: int) -> tuple[TensorSplineSpace, sp.csr_matrix]:
    """Exact coefficient map of d/d zeta_axis on a tensor space."""
    mats, spaces = [], []
    for d, s in enumerate(space.spaces):
        if d == axis:
            t, D = derivative_space(s)
            spaces.append(t)
            mats.append(sp.csr_matrix(D))
        else:
            spaces.append(s)
            mats.append(sp.identity(s.dim, format="csr"))
    M = mats[0]
    for X in mats[1:]:
        M = sp.kron(M, X, format="csr")
    return TensorSplineSpace(tuple(spaces)), M


def _same_space(a: TensorSplineSpace, b: TensorSplineSpace) -> bool:
    return all(x.knot_vector == y.knot_vector for x, y in zip(a.spaces, b.spaces))


def _derivative_terms(n, k):
    """Exterior derivative as (target comp, source comp, axis, sign) terms."""
    if k == 0 and n == 2:  # curl into the H(div) space
        return [(0, 0, 1, 1.0), (1, 0, 0, -1.0)]
    if k == 0:
        return [(c, 0, c, 1.0) for c in range(n)]
    if n == 3 and k == 1:  # curl
        return [(0, 2, 1, 1.0), (0, 1, 2, -1.0), (1, 0, 2, 1.0), (1, 2, 0, -1.0), (2, 1, 0, 1.0), (2, 0, 1, -1.0)]
    if k == n - 1:  # divergence
        return [(0, c, c, 1.0) for c in range(n)]
    raise ConfigurationError("not a consecutive pair")


def exterior_derivative_check(source: Sequence[TensorSplineSpace], target: Sequence[TensorSplineSpace],
                              n: int, k: int, n_samples: int = 40, seed: int = 0) -> float:
    """Max residual of expanding ``d`` of every source basis function in the target space.

    Expansion uses the coefficient maps of :func:`derivative_space`; the residual is
    measured pointwise against directly differentiated basis functions.
    """
    if len(target) != len(_derivative_codomain(n, k)):
        raise ConfigurationError("target does not match the next space in the chain")
    rng = np.random.default_rng(seed)
    pts = rng.random((n_samples, n))
    offsets = np.concatenate([[0], np.cumsum([s.dim for s in source])])
    worst = 0.0
    for tc, T in enumerate(target):
        expanded = np.zeros((n_samples, offsets[-1]))
        direct = np.zeros((n_samples, offsets[-1]))
        for (t, sc, axis, sign) in _derivative_terms(n, k):
            if t != tc:
                continue
            S = source[sc]
            dspace, D = _partial_map(S, axis)
            if not _same_space(dspace, T):
                raise ConfigurationError("derivative leaves the target space")
            cols = slice(offsets[sc], offsets[sc + 1])
            expanded[:, cols] += sign * (T.basis_matrix(pts) @ D).toarray()
            der = tuple(int(a == axis) for a in range(n))
            direct[:, cols] += sign * S.basis_matrix(pts, der).toarray()
        worst = max(worst, float(np.abs(expanded - direct).max()))
    return worst


def _derivative_codomain(n, k):
    return range({(2, 0): 2, (2, 1): 1, (3, 0): 3, (3, 1): 3, (3, 2): 1}[(n, k)])


def divergence_map(block: FieldBlock, target: FieldBlock) -> sp.csr_matrix:
    """Coefficient map taking a ``Y2`` row-field block to its parametric divergence in ``target``.

    Rows are ordered like ``target`` (copy-major); an exact map exists because
    the component spaces form a subcomplex.
    """
    T = target.components[0]
    rows = []
    for c in range(block.copies):
        parts = []
        for k, S in enumerate(block.components):
            dspace, D = _partial_map(S, k)
            if not _same_space(dspace, T):
                raise ConfigurationError("divergence does not land in the target space")
            parts.append(D)
        row = sp.hstack(parts)
        rows.append(row)
    return sp.block_diag(rows, format="csr")
