"""Numerical evidence for the structural properties of the discretization.

Probes return plain results that serialize to JSON records of the form
``{"probe", "h", "value", "threshold", "pass"}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._jax import jax, jnp
from .assembly import PatchQuadrature, QuadratureRule, _merge, gram_matrices, PatchFieldTables
from .derham import (
    ConfigurationError,
    ElasticitySpaces,
    build_spaces,
    derham_spaces,
    divergence_map,
    evaluate_field,
    exterior_derivative_check,
)
from .operators import curl_2d, curl_3d_rows, skew, xi
from .solver import identity_coefficients, identity_in_sigma_predicate

DENSE_PROBE_LIMIT = 3000
DEGENERATE_FLOOR = 1e-8
STABLE_RATIO = 3.0
DROP_FACTOR = 10.0


# --- commuting identities ------------------------------------------------------------

def _monomials(dim: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for total in range(degree + 1):
        if dim == 2:
            out += [(a, total - a) for a in range(total + 1)]
        else:
            out += [(a, b, total - a - b) for a in range(total + 1) for b in range(total - a + 1)]
    return out


def random_polynomial_field(dim: int, shape: tuple[int, ...], degree: int, rng: np.random.Generator) -> Callable:
    """Jax-traceable polynomial field with standard normal coefficients."""
    exps = np.array(_monomials(dim, degree))
    coef = jnp.asarray(rng.standard_normal(shape + (len(exps),)))
    exps_j = jnp.asarray(exps)

    def field_fn(x):
        mon = jnp.prod(x[None, :] ** exps_j, axis=1)
        return coef @ mon

    return field_fn


def commutativity_residual(fn: Callable, dim: int, points) -> float:
    """Pointwise residual of the commuting identity for one field.

    2D: ``fn`` is a vector field v and the identity is Skew(curl v) = div v.
    3D: ``fn`` is a matrix field w and the identity is div(Xi w) = Skew(curl w).
    """
    pts = jnp.asarray(np.atleast_2d(points), dtype=float)
    grad = np.asarray(jax.vmap(jax.jacfwd(fn))(pts))
    if dim == 2:
        lhs = skew(curl_2d(grad))  # rows are curls of the components
        rhs = np.trace(grad, axis1=-2, axis2=-1)
    else:
        # d_k (Xi w)_ij = Xi(d_k w)_ij, so the row divergence sums the diagonal in (j, k)
        xi_grad = xi(np.moveaxis(grad, -1, 1))  # [m, k, i, j]
        lhs = np.einsum("mjij->mi", xi_grad)
        rhs = skew(curl_3d_rows(grad))
    return float(np.abs(lhs - rhs).max())


def check_commutativity(dimension: int, trials: int = 100, seed: int = 0, degree: int = 3,
                        n_points: int = 20) -> float:
    """Max residual of the commuting identity over random polynomial fields."""
    if dimension not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    rng = np.random.default_rng(seed)
    shape = (2,) if dimension == 2 else (3, 3)
    worst = 0.0
    for _ in range(trials):
        fn = random_polynomial_field(dimension, shape, degree, rng)
        pts = rng.uniform(-1.0, 1.0, (n_points, dimension))
        worst = max(worst, commutativity_residual(fn, dimension, pts))
    return worst


# --- subcomplex and identity ------------------------------------------------------------

def check_subcomplex(spaces: ElasticitySpaces, n_samples: int = 25, seed: int = 0) -> float:
    """Max residual over the stress-side de Rham chain plus div(Sigma_h) in U_h."""
    if spaces.naive:
        raise ConfigurationError("equal-degree spaces do not form a subcomplex")
    n = spaces.dim
    deg = spaces.degree if n == 2 else spaces.degree + 1
    chain = [derham_spaces(n, k, deg, spaces.regularity, spaces.n_elements) for k in range(n + 1)]
    worst = max(exterior_derivative_check(chain[k], chain[k + 1], n, k, n_samples, seed) for k in range(n))
    rng = np.random.default_rng(seed)
    for k, (sb, ub) in enumerate(zip(spaces.sigma.blocks, spaces.u.blocks)):
        Dm = divergence_map(sb, ub)
        c = rng.standard_normal(sb.dim)
        pts = rng.random((n_samples, n))
        div = evaluate_field(spaces.sigma, k, c, pts)["div"]
        u = evaluate_field(spaces.u, k, Dm @ c, pts)["value"]
        worst = max(worst, float(np.abs(div - u).max()) / max(1.0, float(np.abs(div).max())))
    return worst


def interface_normal_jump(space, coeffs, n_samples: int = 20, seed: int = 0) -> float:
    """Max jump of the physical normal component of a row field across patch interfaces.

    The jump is scaled by the largest sampled field magnitude.
    """
    geom = space.geometry
    rng = np.random.default_rng(seed)
    worst, scale = 0.0, 0.0
    for itf in geom.interfaces:
        s = rng.random((n_samples, geom.dim - 1))
        Fa, Fb = geom.patches[itf.patch_a], geom.patches[itf.patch_b]
        pa = Fa.face_points(itf.face_a, s)
        pb = Fb.face_points(itf.face_b, itf.map_tangential(s))
        va = evaluate_field(space, itf.patch_a, space.local_coefficients(coeffs, itf.patch_a), pa)["value"]
        vb = evaluate_field(space, itf.patch_b, space.local_coefficients(coeffs, itf.patch_b), pb)["value"]
        nrm = np.linalg.inv(Fa.jacobian(pa)).transpose(0, 2, 1)[:, :, itf.face_a[0]]
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        worst = max(worst, float(np.abs(np.einsum("mcd,md->mc", va - vb, nrm)).max()))
        scale = max(scale, float(np.abs(va).max()))
    return worst / max(scale, 1.0)


def geometry_degrees(geometry) -> tuple[int, int]:
    """Degree and interior regularity of a single-patch map (smooth maps count as C^inf)."""
    patches = getattr(geometry, "patches", (geometry,))
    q = max(g.degree for g in patches) if all(g.degree is not None for g in patches) else None
    regs = [g.regularity for g in patches if g.regularity is not None]
    return q, (min(regs) if regs else 10**6)


def check_identity_in_sigma(geometry, p: int, r: int, h: float = 1.0, tol: float = 1e-10) -> bool:
    """True iff the constant identity field expands exactly in the stress space."""
    spaces = build_spaces(geometry, h, p, r)
    _, resid = identity_coefficients(spaces.sigma)
    return bool(resid <= tol)


def identity_predicate(geometry, p: int, r: int) -> bool | None:
    """Degree-based prediction of :func:`check_identity_in_sigma`; ``None`` if the degree is unknown."""
    q, s = geometry_degrees(geometry)
    if q is None:
        return None
    return identity_in_sigma_predicate(geometry.dim if hasattr(geometry, "dim") else 2, p, r, q, s)


# --- inf-sup probes --------------------------------------------------------------

@dataclass
class ProbeResult:
    label: str
    hs: list[float | None]
    values: list[float]
    thresholds: list[float | None]
    passes: list[bool]
    seed: int = 0
    expect: str = "stable"
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not (np.all(np.isfinite(v)) and np.all(v >= 0)):
            raise ValueError("probe values must be finite and nonnegative")

    @property
    def passed(self) -> bool:
        return all(self.passes)

    def records(self) -> list[dict]:
        return [{"probe": self.label, "h": h, "value": v, "threshold": t, "pass": bool(ok)}
                for h, v, t, ok in zip(self.hs, self.values, self.thresholds, self.passes)]


def _check_size(n: int) -> None:
    if n > DENSE_PROBE_LIMIT:
        raise ConfigurationError(f"dense eigen probe limited to {DENSE_PROBE_LIMIT} unknowns (got {n})")


def _smallest_pencil_value(B: sp.spmatrix, G: sp.spmatrix, W: sp.spmatrix) -> float:
    """sqrt of the smallest eigenvalue of ``B G^-1 B^T q = beta^2 W q``."""
    lu = spla.splu(sp.csc_matrix(G))
    Bd = B.toarray()
    S = Bd @ lu.solve(np.ascontiguousarray(Bd.T))
    S = 0.5 * (S + S.T)
    lam = sla.eigh(S, W.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]
    return math.sqrt(max(float(lam), 0.0))


def infsup_constant(spaces: ElasticitySpaces, rule: QuadratureRule | None = None) -> float:
    """Discrete inf-sup constant of the stress-versus-(displacement, multiplier) pairing.

    Norms: H(div) on the stress side, L^2 on the other side.
    """
    from .assembly import assemble, Problem, dirichlet_everywhere
    from .operators import MaterialParams

    _check_size(spaces.total_dim)
    rule = rule or QuadratureRule(spaces.degree + 2)
    geom = spaces.geometry
    sysm = assemble(spaces, MaterialParams(1.0, 1.0, spaces.dim), Problem(dirichlet=dirichlet_everywhere(geom)), rule)
    Gs, Gu, Gp = gram_matrices(spaces, rule)
    B = sp.vstack([sysm.B1, sysm.B2]).tocsr()
    return _smallest_pencil_value(B, Gs, sp.block_diag([Gu, Gp]))


def aux_infsup_constant(spaces: ElasticitySpaces, rule: QuadratureRule | None = None) -> float:
    """2D auxiliary constant: inf over multipliers of sup over H^1 vector fields of (div w, q)."""
    if spaces.aux is None or spaces.dim != 2:
        raise ConfigurationError("auxiliary probe needs 2D spaces built with with_aux=True")
    _check_size(spaces.aux.dim + spaces.p.dim)
    rule = rule or QuadratureRule(spaces.degree + 2)
    H1, D, Mp = [], [], []
    for k in range(len(spaces.geometry.patches)):
        rb, pb = spaces.aux.blocks[k], spaces.p.blocks[k]
        bps = tuple(s.knot_vector.breakpoints for s in rb.components[0].spaces)
        quad = PatchQuadrature(spaces.geometry.patches[k], bps, rule)
        R, P = PatchFieldTables(rb, quad), PatchFieldTables(pb, quad)
        H1.append(_h1_gram(R))
        D.append(_div_pairing(P, R))
        Mp.append(_l2_scalar_gram(P))
    G = _merge(spaces.aux, spaces.aux, H1)
    B = _merge(spaces.p, spaces.aux, D)
    W = _merge(spaces.p, spaces.p, Mp)
    return _smallest_pencil_value(B, G, W)


def _physical_grads(tab: PatchFieldTables) -> np.ndarray:
    B = tab.bases[0]
    return np.einsum("eqad,eqdk->eqak", B.grads, tab.quad.G)


def _h1_gram(tab: PatchFieldTables) -> sp.csr_matrix:
    from .assembly import _sparse, _triplets

    B = tab.bases[0]
    dx = tab.quad.dx
    g = _physical_grads(tab)
    local = np.einsum("eqa,eqb,eq->eab", B.values, B.values, dx) + np.einsum("eqak,eqbk,eq->eab", g, g, dx)
    rows, cols, vals = [], [], []
    for c in range(tab.block.copies):
        r, cc, v = _triplets(tab.dofs(c, 0), tab.dofs(c, 0), local)
        rows.append(r), cols.append(cc), vals.append(v)
    N = tab.block.dim
    return _sparse(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (N, N))


def _div_pairing(ptab: PatchFieldTables, rtab: PatchFieldTables) -> sp.csr_matrix:
    from .assembly import _sparse, _triplets

    g = _physical_grads(rtab)
    q = ptab.bases[0].values * ptab.scale()[..., None]
    rows, cols, vals = [], [], []
    for c in range(rtab.block.copies):
        local = np.einsum("eqa,eqb,eq->eab", q, g[..., c], ptab.quad.dx)
        r, cc, v = _triplets(ptab.dofs(0, 0), rtab.dofs(c, 0), local)
        rows.append(r), cols.append(cc), vals.append(v)
    return _sparse(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                   (ptab.block.dim, rtab.block.dim))


def _l2_scalar_gram(tab: PatchFieldTables) -> sp.csr_matrix:
    from .assembly import _patch_mass

    return _patch_mass(tab)


def _stable_policy(values: Sequence[float]) -> tuple[list, list]:
    thr = max(values) / STABLE_RATIO
    return [thr] * len(values), [v >= thr and v > DEGENERATE_FLOOR for v in values]


def _degenerating_policy(values: Sequence[float]) -> tuple[list, list]:
    thr = max(values[0] / DROP_FACTOR, DEGENERATE_FLOOR)
    thresholds = [None] * (len(values) - 1) + [thr]
    passes = [True] * (len(values) - 1) + [values[-1] <= thr]
    return thresholds, passes


def infsup_probe(geometry, hs: Sequence[float] = (1 / 2, 1 / 3, 1 / 4), p: int = 2, r: int = 0,
                 naive: bool = False, aux: bool = False, seed: int = 0, label: str | None = None) -> ProbeResult:
    """Inf-sup constants over a mesh sequence with a pass policy.

    Structured spaces pass when the constants stay within a factor of three;
    equal-degree spaces pass when the constant degenerates on the finest mesh.
    """
    values = []
    for h in hs:
        if aux:
            values.append(aux_infsup_constant(build_spaces(geometry, h, p, r, with_aux=True)))
        else:
            values.append(infsup_constant(build_spaces(geometry, h, p, r, naive=naive)))
    expect = "degenerate" if naive else "stable"
    thresholds, passes = (_degenerating_policy if naive else _stable_policy)(values)
    name = label or ("infsup_aux" if aux else "infsup_naive" if naive else "infsup")
    return ProbeResult(name, [float(h) for h in hs], values, thresholds, passes, seed, expect,
                       {"p": p, "r": r})


def verification_suite(naive: bool = False, seed: int = 0, probes: Sequence[str] | None = None) -> list[ProbeResult]:
    """All probes at coarse resolution; ``naive`` swaps in the equal-degree stability probe."""
    from .geometry import catalog

    def one_value(label, value, threshold, ok_fn=lambda v, t: v <= t):
        return ProbeResult(label, [None], [value], [threshold], [ok_fn(value, threshold)], seed)

    runners = {
        "commutativity_2d": lambda: one_value("commutativity_2d", check_commutativity(2, 100, seed), 1e-12),
        "commutativity_3d": lambda: one_value("commutativity_3d", check_commutativity(3, 100, seed), 1e-12),
        "subcomplex_2d": lambda: one_value(
            "subcomplex_2d", check_subcomplex(build_spaces(catalog("deformed_square"), 1 / 3, 3, 1), seed=seed), 1e-12),
        "subcomplex_3d": lambda: one_value(
            "subcomplex_3d", check_subcomplex(build_spaces(catalog("ring3d"), 1 / 2, 2, 0), seed=seed), 1e-12),
        "identity_in_sigma": lambda: one_value(
            "identity_in_sigma", identity_coefficients(build_spaces(catalog("deformed_square"), 1 / 2, 2, 0).sigma)[1],
            1e-10),
        "infsup": lambda: infsup_probe(catalog("deformed_square"), naive=naive, seed=seed),
        "infsup_aux": lambda: infsup_probe(catalog("deformed_square"), aux=True, seed=seed),
    }
    names = list(runners) if probes is None else list(probes)
    unknown = [n for n in names if n not in runners]
    if unknown:
        raise ConfigurationError(f"unknown probe(s) {unknown}; choose from {sorted(runners)}")
    return [runners[n]() for n in names]


PROBE_NAMES = ("commutativity_2d", "commutativity_3d", "subcomplex_2d", "subcomplex_3d", "identity_in_sigma",
               "infsup", "infsup_aux")
