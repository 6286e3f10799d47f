"""Solvers for the symmetric indefinite saddle-point system."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import MixedSystem, QuadratureRule, PatchQuadrature
from .derham import ConfigurationError, DiscreteSpace, ElasticitySpaces
from .geometry import adjugate

DENSE_LIMIT = 2500
METHODS = ("minres", "direct", "dense")
PRECONDITIONERS = ("none", "jacobi", "block")


class SolverNonConvergence(RuntimeError):
    def __init__(self, message, residual, iterations, x=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.x = x


@dataclass(frozen=True)
class SolveConfig:
    method: str = "minres"
    tol: float = 5e-8
    max_iter: int | None = None
    preconditioner: str = "none"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown solver method {self.method!r}; expected one of {METHODS}")
        if not self.tol > 0:
            raise ConfigurationError("solver tolerance must be positive")
        if self.max_iter is not None and self.max_iter <= 0:
            raise ConfigurationError("max_iter must be positive")
        if self.preconditioner not in PRECONDITIONERS:
            raise ConfigurationError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class FieldSolution:
    sigma: np.ndarray
    u: np.ndarray
    p: np.ndarray
    residual: float
    iterations: int
    spaces: ElasticitySpaces | None = field(default=None, repr=False)
    trace_shift: float = 0.0
    n_free: int | None = None  # unknowns left after eliminating prescribed stress dofs

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.sigma, self.u, self.p])

    @classmethod
    def from_vector(cls, x, spaces, residual, iterations, **kw):
        a, b, _ = spaces.sizes
        return cls(x[:a].copy(), x[a:a + b].copy(), x[a + b:].copy(), residual, iterations, spaces, **kw)


@dataclass
class MinresResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _as_operator(M):
    return M if isinstance(M, spla.LinearOperator) else spla.aslinearoperator(M)


def _minres_sweep(A, b, x0, tol_abs, max_iter, Minv):
    """One Paige-Saunders MINRES run; returns (x, iterations, estimated residual)."""
    n = len(b)
    x = x0.copy()
    r1 = b - A.matvec(x)
    y = Minv(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = math.sqrt(beta1)
    if beta1 == 0.0:
        return x, 0, 0.0
    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    # residual estimate is in the preconditioner norm; relate it to the Euclidean one at the end
    it = 0
    while it < max_iter:
        it += 1
        s = 1.0 / beta
        v = s * y
        y = A.matvec(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = Minv(r2)
        oldb = beta
        beta = float(r2 @ y)
        if beta < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = math.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), np.finfo(float).eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        if phibar <= tol_abs or beta == 0.0:
            break
    return x, it, phibar


def minres(M, b, tol=5e-8, max_iter=None, x0=None, precond=None, max_restarts=5) -> MinresResult:
    """MINRES with a true-residual acceptance test.

    The iteration stops on its recurrence estimate; the Euclidean residual is then
    recomputed and the solve restarted from the current iterate if it is not below
    ``tol * ||b||``.
    """
    A = _as_operator(M)
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = max_iter or 20 * n
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return MinresResult(np.zeros(n), 0.0, 0, True)
    Minv = (lambda r: r) if precond is None else precond
    total = 0
    best = (np.inf, x)
    target = tol * bnorm
    inner_tol = target
    for _ in range(max_restarts + 1):
        x, it, _ = _minres_sweep(A, b, x, inner_tol, max_iter - total, Minv)
        total += it
        res = np.linalg.norm(b - A.matvec(x))
        if res < best[0]:
            best = (res, x)
        if res <= target:
            return MinresResult(x, res / bnorm, total, True)
        if total >= max_iter:
            break
        # tighten the inner target when the estimate was optimistic
        inner_tol = 0.5 * inner_tol * min(1.0, target / res)
    return MinresResult(best[1], best[0] / bnorm, total, False)


def jacobi_preconditioner(M):
    d = np.abs(sp.csr_matrix(M).diagonal())
    d[d == 0] = 1.0
    inv = 1.0 / d
    return lambda r: inv * r


def block_preconditioner(system: MixedSystem, free: np.ndarray):
    """Inverse of blockdiag(H(div) Gram of stresses, L2 Gram of U, L2 Gram of P) on the free dofs.

    These inner products make the saddle operator norm-equivalent to the identity
    independently of h, so the preconditioned iteration count stays bounded.
    """
    from .assembly import gram_matrices

    Gs, Gu, Gp = gram_matrices(system.spaces)
    ns = Gs.shape[0]
    fs = free[free < ns]
    factors = [spla.splu(sp.csc_matrix(G)) for G in (Gs[fs][:, fs], Gu, Gp)]
    cuts = np.cumsum([len(fs), Gu.shape[0]])

    def apply(r):
        return np.concatenate([lu.solve(part) for lu, part in zip(factors, np.split(r, cuts))])

    return apply


def solve_linear(M, b, cfg: SolveConfig, precond=None) -> tuple[np.ndarray, float, int]:
    """Solve ``M x = b``; returns (x, relative residual, iterations)."""
    bnorm = np.linalg.norm(b)
    if cfg.method == "dense":
        if M.shape[0] > DENSE_LIMIT:
            raise ConfigurationError(f"dense solve limited to {DENSE_LIMIT} unknowns, got {M.shape[0]}")
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        x = scipy.linalg.solve(Md, b, assume_a="sym")
        its = 0
    elif cfg.method == "direct":
        x = spla.splu(sp.csc_matrix(M)).solve(b)
        its = 0
    else:
        pc = precond
        if pc is None and cfg.preconditioner == "jacobi":
            pc = jacobi_preconditioner(M)
        elif pc is None and cfg.preconditioner == "block":
            raise ConfigurationError("the block preconditioner needs an assembled mixed system")
        out = minres(M, b, tol=cfg.tol, max_iter=cfg.max_iter, precond=pc)
        if not out.converged:
            raise SolverNonConvergence(f"MINRES stopped after {out.iterations} iterations with relative "
                                       f"residual {out.residual:.3e} > {cfg.tol:.1e}", out.residual,
                                       out.iterations, out.x)
        return out.x, out.residual, out.iterations
    res = np.linalg.norm(M @ x - b) / bnorm if bnorm > 0 else float(np.linalg.norm(M @ x))
    if cfg.method == "direct" and res > cfg.tol:
        # one step of iterative refinement usually suffices for the saddle systems here
        lu = spla.splu(sp.csc_matrix(M))
        x = x + lu.solve(b - M @ x)
        res = np.linalg.norm(M @ x - b) / bnorm
    return x, res, its


def _expand(system: MixedSystem, x_free, free):
    x = np.zeros(system.size)
    x[free] = x_free
    x[system.fixed] = system.fixed_values
    return x


def solve(system: MixedSystem, cfg: SolveConfig = SolveConfig()) -> FieldSolution:
    """Solve the assembled system with fixed traction dofs eliminated."""
    M, b, free = system.reduced()
    if np.linalg.norm(b) == 0.0:
        return FieldSolution.from_vector(_expand(system, np.zeros(len(free)), free), system.spaces, 0.0, 0,
                                         n_free=len(free))
    pc = block_preconditioner(system, free) if cfg.method == "minres" and cfg.preconditioner == "block" else None
    x_free, res, its = solve_linear(M, b, cfg, pc)
    return FieldSolution.from_vector(_expand(system, x_free, free), system.spaces, res, its, n_free=len(free))


def identity_coefficients(space: DiscreteSpace, rule: QuadratureRule | None = None, n_check: int = 50,
                          seed: int = 0):
    """Coefficients of the constant identity field in the stress space and the fit residual.

    Row i of the identity pulls back to column i of adj(J); each patch is fitted by
    least squares at Gauss points and the result is mapped to global coefficients.
    """
    geom = space.geometry
    n = geom.dim
    rows, rhs = [], []
    local_blocks = []
    for k, F in enumerate(geom.patches):
        block = space.blocks[k]
        comps = block.components
        deg = max(max(c.degrees) for c in comps)
        r = rule or QuadratureRule(deg + 2)
        bps = tuple(np.unique(np.concatenate([c.spaces[d].knot_vector.breakpoints for c in comps]))
                    for d in range(n))
        quad = PatchQuadrature(F, bps, r)
        z = quad.zeta.reshape(-1, n)
        w = quad.weights.reshape(-1)
        if block.kind == "Y2":
            par = adjugate(F.jacobian(z))  # row i of I pulls back to column i of adj(J)
        else:
            par = np.broadcast_to(np.eye(n), (len(z), n, n))
        coeff_local = np.zeros(block.dim)
        for c, comp in enumerate(comps):
            B = comp.basis_matrix(z).tocsr()
            G = (B.T @ sp.diags(w) @ B).tocsc()
            lu = spla.splu(G)
            for i in range(block.copies):
                sl = block.offset(i, c)
                coeff_local[sl:sl + comp.dim] = lu.solve(B.T @ (w * par[:, c, i]))
        local_blocks.append(coeff_local)
    local = np.concatenate(local_blocks)
    C = space.coupling
    if space.trivial:
        glob = local
    else:
        glob = spla.lsqr(C, local, atol=1e-15, btol=1e-15)[0]
    # pointwise residual of the physical field against the identity
    from .derham import evaluate_field

    rng = np.random.default_rng(seed)
    resid = 0.0
    for k, F in enumerate(geom.patches):
        z = rng.random((n_check, n))
        val = evaluate_field(space, k, space.local_coefficients(glob, k), z)["value"]
        resid = max(resid, float(np.abs(val - np.eye(n)).max()))
    return glob, resid


def identity_in_sigma_predicate(dim: int, p: int, r: int, q: int, s: int) -> bool:
    """Degree condition for the identity to lie in the stress space of a degree-q, C^s geometry."""
    if dim == 3:
        return 2 * q <= p + 1 and r <= s
    return p >= q and s >= r


def trace_functional(system: MixedSystem) -> np.ndarray:
    """Vector t with t @ x = integral of tr(sigma_h) for the full unknown vector x."""
    from .assembly import _patch_tables

    spaces = system.spaces
    rule = QuadratureRule(spaces.degree + 2)
    vecs = []
    n = spaces.dim
    for k in range(len(spaces.geometry.patches)):
        quad, sig, _, _ = _patch_tables(spaces, k, rule)
        block = spaces.sigma.blocks[k]
        loc = np.zeros(block.dim)
        for i in range(block.copies):
            for c, basis in enumerate(sig.bases):
                weight = sig.value_vec(c)[..., i] * quad.dx
                contrib = np.einsum("eqa,eq->ea", basis.values, weight)
                np.add.at(loc, sig.dofs(i, c), contrib)
        vecs.append(loc)
    t_sigma = spaces.sigma.coupling.T @ np.concatenate(vecs)
    out = np.zeros(system.size)
    out[: spaces.sigma.dim] = t_sigma
    return out


def solve_trace_constrained(system: MixedSystem, cfg: SolveConfig = SolveConfig(), pinned_trace: float = 0.0,
                            identity=None) -> FieldSolution:
    """Pure-Dirichlet solve on the zero-mean-trace subspace with constant recovery.

    The constraint is imposed with one extra scalar multiplier. For finite lambda the
    constant multiple of the identity is recovered afterwards; for lambda = inf the
    mean trace is pinned to ``pinned_trace``.
    """
    spaces = system.spaces
    if len(system.fixed):
        raise ConfigurationError("trace-constrained solve requires pure displacement boundary conditions")
    if identity is None:
        identity, resid = identity_coefficients(spaces.sigma)
        if resid > 1e-10:
            raise ConfigurationError(
                f"the identity tensor is not contained in the stress space (fit residual {resid:.2e}); "
                "the geometry degree q must satisfy 2q <= p+1 in 3D (p >= q in 2D)")
    t = trace_functional(system)
    incompressible = system.params.incompressible
    target = pinned_trace if incompressible else 0.0
    M = sp.bmat([[system.matrix, sp.csr_matrix(t[:, None])], [sp.csr_matrix(t[None, :]), None]], format="csr")
    b = np.concatenate([system.rhs, [target]])
    if np.linalg.norm(b) == 0.0:
        x = np.zeros(len(b))
        res, its = 0.0, 0
    else:
        x, res, its = solve_linear(M, b, cfg)
    x = x[:-1]
    shift = 0.0
    if not incompressible:
        ns = spaces.sigma.dim
        sig0 = x[:ns]
        AI = system.A @ identity
        shift = float((system.g_sigma @ identity - sig0 @ AI) / (identity @ AI))
        x[:ns] = sig0 + shift * identity
    return FieldSolution.from_vector(x, spaces, res, its, trace_shift=shift, n_free=spaces.total_dim)
