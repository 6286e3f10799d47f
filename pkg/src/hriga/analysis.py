"""Manufactured solutions, error norms, convergence tables and point probes."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from ._jax import jax, jnp
from .assembly import PatchQuadrature, PatchFieldTables, Problem, QuadratureRule, assemble
from .derham import ElasticitySpaces, build_spaces, evaluate_field
from .geometry import (
    GeometryMap,
    MultiPatchGeometry,
    PointOutsideError,
    as_multipatch,
    catalog,
    face_key,
)
from .operators import MaterialParams, skew
from .solver import FieldSolution, SolveConfig, solve, solve_trace_constrained

CSV_HEADER = ["h", "dof", "err_sigma_hdiv", "err_u_l2", "err_p_l2", "err_div_l2",
              "rate_sigma", "rate_u", "rate_p", "iters"]


@dataclass
class ExactFields:
    u: np.ndarray       # (m, n)
    grad: np.ndarray    # (m, n, n), grad[i, j] = d u_i / d x_j
    sigma: np.ndarray   # (m, n, n)
    div: np.ndarray     # (m, n)
    p: np.ndarray       # (m, n_skew)


def _batched(fn):
    return jax.jit(jax.vmap(fn))


@dataclass(eq=False)
class ManufacturedCase:
    """Boundary value problem with a known (or absent) exact displacement.

    ``displacement`` is a jax function of one point returning an n-vector. With
    ``frame="parametric"`` it is a function of the parameter of ``reference`` and
    physical derivatives are obtained through the Jacobian and Hessian of that map.
    """

    name: str
    geometry: MultiPatchGeometry
    params: MaterialParams
    displacement: Callable | None = None
    frame: str = "physical"
    reference: GeometryMap | None = None
    dirichlet: tuple = ()
    traction: tuple = ()
    traction_value: np.ndarray | None = None  # constant traction on the named faces (no exact solution)
    traction_faces: tuple = ()
    probe_point: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.geometry.dim

    @property
    def has_exact(self) -> bool:
        return self.displacement is not None

    @cached_property
    def _derivs(self):
        f = self.displacement
        return _batched(f), _batched(jax.jacfwd(f)), _batched(jax.jacfwd(jax.jacfwd(f)))

    def _reference_points(self, x, zeta, patch):
        if zeta is not None and patch is not None and self.geometry.patches[patch] is self.reference:
            return np.asarray(zeta, dtype=float)
        return self.reference.invert(x)

    def fields(self, x, zeta=None, patch=None) -> ExactFields:
        """Exact displacement, gradient, stress, divergence and multiplier at physical points."""
        if not self.has_exact:
            raise ValueError(f"case {self.name!r} has no exact solution")
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        f0, f1, f2 = self._derivs
        if self.frame == "physical":
            u, grad, hess = (np.asarray(g(x)) for g in (f0, f1, f2))
        else:
            z = self._reference_points(x, zeta, patch)
            u, d1, d2 = (np.asarray(g(z)) for g in (f0, f1, f2))
            J = self.reference.jacobian(z)
            H = self.reference.hessian(z)
            G = np.linalg.inv(J)
            grad = np.einsum("mia,mab->mib", d1, G)
            # d G / d zeta_d = -G (d J / d zeta_d) G
            dG = -np.einsum("mab,mbcd,mce->mdae", G, H, G)
            hess = np.einsum("miad,mab,mdc->mibc", d2, G, G) + np.einsum("mia,mdab,mdc->mibc", d1, dG, G)
        return self._constitutive(u, grad, hess)

    def _constitutive(self, u, grad, hess) -> ExactFields:
        n = self.dim
        lam, mu = self.params.lam, self.params.mu
        eps = 0.5 * (grad + np.swapaxes(grad, 1, 2))
        divu = np.trace(grad, axis1=1, axis2=2)
        grad_div = np.einsum("mjji->mi", hess)          # d_i (div u)
        lap = np.einsum("mijj->mi", hess)
        I = np.eye(n)
        if self.params.incompressible:
            # exact solutions of the limit problem are divergence free with zero pressure
            sigma = 2 * mu * eps
            div = mu * (lap + grad_div)
        else:
            sigma = lam * divu[:, None, None] * I + 2 * mu * eps
            div = mu * lap + (lam + mu) * grad_div
        p = 0.5 * skew(grad)
        p = p[:, None] if n == 2 else p
        return ExactFields(u, grad, sigma, div, p)

    # data adaptors for the assembler
    def _load(self):
        case = self

        class Load:
            def at_patch(self, patch, zeta, x):
                return case.fields(x, zeta, patch).div

        return Load()

    def _dirichlet_data(self):
        case = self

        class Data:
            def at_patch(self, patch, zeta, x):
                return case.fields(x, zeta, patch).u

        return Data()

    def _traction_data(self):
        if self.traction_value is not None:
            t = np.asarray(self.traction_value, dtype=float)
            targets = {self._resolve(f) for f in self.traction_faces}
            geom = self.geometry

            def on_face(x):
                mask = np.zeros(len(x), dtype=bool)
                for k, face in targets:
                    F = geom.patches[k]
                    try:
                        z = F.invert(x)
                    except PointOutsideError:
                        continue
                    axis, side = face
                    mask |= np.abs(z[:, axis] - side) < 1e-9
                return mask

            return lambda x, normal: np.where(on_face(x)[:, None], t, 0.0)
        if not self.has_exact:
            return None
        return lambda x, normal: np.einsum("mij,mj->mi", self.fields(x).sigma, normal)

    def _resolve(self, face):
        if isinstance(face, tuple) and len(face) == 2 and not isinstance(face[0], str) and \
                isinstance(face[1], (tuple, str)):
            return int(face[0]), face_key(face[1])
        return 0, face_key(face)

    def problem(self) -> Problem:
        dirichlet = tuple(self._resolve(f) for f in self.dirichlet)
        traction = tuple(self._resolve(f) for f in self.traction)
        return Problem(
            load=self._load() if self.has_exact else None,
            u_D=self._dirichlet_data() if self.has_exact and dirichlet else None,
            traction_data=self._traction_data() if traction else None,
            dirichlet=dirichlet,
            traction=traction,
        )

    @property
    def pure_dirichlet(self) -> bool:
        return len(self.traction) == 0

    def mean_trace(self, spaces: ElasticitySpaces, rule: QuadratureRule | None = None) -> float:
        """Integral of tr(sigma) of the exact solution."""
        total = 0.0
        rule = rule or QuadratureRule(spaces.degree + 3)
        for k, F in enumerate(self.geometry.patches):
            bps = tuple(s.knot_vector.breakpoints for s in spaces.sigma.blocks[k].components[0].spaces)
            q = PatchQuadrature(F, bps, rule)
            ex = self.fields(q.x.reshape(-1, self.dim), q.zeta.reshape(-1, self.dim), k)
            total += float(np.sum(np.trace(ex.sigma, axis1=1, axis2=2) * q.dx.reshape(-1)))
        return total


# --- catalog --------------------------------------------------------------------------

def _sine_bump(z):
    return jnp.prod(jnp.sin(jnp.pi * z))


def _deformed_square_u(z):
    g = _sine_bump(z)
    return jnp.stack([g, -g])


def _incompressible_u(x):
    tp = 2 * jnp.pi
    return jnp.stack([(jnp.cos(tp * x[0]) - 1) * jnp.sin(tp * x[1]),
                      (1 - jnp.cos(tp * x[1])) * jnp.sin(tp * x[0])])


def _ring_u(z):
    g = _sine_bump(z)
    return jnp.stack([g / 2, g, -g / 2])


ALL_FACES_2D = ("left", "right", "bottom", "top")
ALL_FACES_3D = ALL_FACES_2D + ("front", "back")


def _all_boundary(geom: MultiPatchGeometry):
    return tuple((k, f) for k, f in geom.boundary_faces())


def case_catalog(name: str, lam=None, mu=None) -> ManufacturedCase:
    """Benchmark problems; ``lam``/``mu`` override the default material."""
    def material(default_lam, default_mu, dim):
        return MaterialParams(default_lam if lam is None else lam, default_mu if mu is None else mu, dim)

    if name == "deformed_square":
        F = catalog("deformed_square")
        geom = as_multipatch(F)
        return ManufacturedCase(name, geom, material(2.0, 1.0, 2), _deformed_square_u, "parametric", F,
                                dirichlet=_all_boundary(geom))
    if name == "deformed_square_9patch":
        F = catalog("deformed_square")
        geom = catalog("deformed_square_9patch")
        return ManufacturedCase(name, geom, material(2.0, 1.0, 2), _deformed_square_u, "parametric", F,
                                dirichlet=_all_boundary(geom))
    if name == "incompressible":
        F = catalog("deformed_square")
        geom = as_multipatch(F)
        return ManufacturedCase(name, geom, material("inf", 1.0, 2), _incompressible_u, "physical", F,
                                dirichlet=("left",), traction=("right", "bottom", "top"))
    if name == "ring3d":
        F = catalog("ring3d")
        geom = as_multipatch(F)
        return ManufacturedCase(name, geom, material(2.0, 1.0, 3), _ring_u, "parametric", F,
                                dirichlet=_all_boundary(geom))
    if name == "cook":
        F = catalog("cook")
        geom = as_multipatch(F)
        return ManufacturedCase(name, geom, material("inf", 0.375, 2), None, "physical", F,
                                dirichlet=("left",), traction=("right", "bottom", "top"),
                                traction_value=np.array([0.0, 1.0 / 16.0]), traction_faces=("right",),
                                probe_point=np.array([48.0, 52.0]))
    raise ValueError(f"unknown case {name!r}; choose from {CASES}")


CASES = ("deformed_square", "deformed_square_9patch", "incompressible", "ring3d", "cook")


# --- error norms ----------------------------------------------------------------------

@dataclass
class ErrorNorms:
    sigma_hdiv: float
    u_l2: float
    p_l2: float
    div_l2: float
    sigma_l2: float


def error_norms(solution: FieldSolution, case: ManufacturedCase, extra: int = 3) -> ErrorNorms:
    """H(div) stress error and L2 errors of displacement, multiplier and divergence."""
    spaces = solution.spaces
    rule = QuadratureRule(spaces.degree + extra)
    acc = np.zeros(4)
    for k, F in enumerate(spaces.geometry.patches):
        bps = tuple(s.knot_vector.breakpoints for s in spaces.sigma.blocks[k].components[0].spaces)
        q = PatchQuadrature(F, bps, rule)
        n = q.n
        ex = case.fields(q.x.reshape(-1, n), q.zeta.reshape(-1, n), k)
        dx = q.dx.reshape(-1)
        sig = PatchFieldTables(spaces.sigma.blocks[k], q).evaluate(spaces.sigma.local_coefficients(solution.sigma, k))
        uu = PatchFieldTables(spaces.u.blocks[k], q).evaluate(spaces.u.local_coefficients(solution.u, k))
        pp = PatchFieldTables(spaces.p.blocks[k], q).evaluate(spaces.p.local_coefficients(solution.p, k))
        es = sig["value"].reshape(-1, n, n) - ex.sigma
        ed = sig["div"].reshape(-1, n) - ex.div
        eu = uu["value"].reshape(-1, n) - ex.u
        ep = pp["value"].reshape(len(dx), -1) - ex.p
        acc += [np.sum(es ** 2 * dx[:, None, None]), np.sum(ed ** 2 * dx[:, None]),
                np.sum(eu ** 2 * dx[:, None]), np.sum(ep ** 2 * dx[:, None])]
    s2, d2, u2, p2 = acc
    return ErrorNorms(math.sqrt(s2 + d2), math.sqrt(u2), math.sqrt(p2), math.sqrt(d2), math.sqrt(s2))


# --- solving a case -------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSettings:
    """Gauss points per direction: ``p + assembly_extra`` for the system, ``p + error_extra`` for norms."""

    assembly_extra: int = 2
    error_extra: int = 3

    def __post_init__(self):
        if self.assembly_extra < 1 or self.error_extra < 1:
            raise ValueError("quadrature needs at least p+1 points per direction")


DEFAULT_QUADRATURE = QuadratureSettings()
# p+1 points everywhere: the setting under which the published benchmark values were produced
REFERENCE_QUADRATURE = QuadratureSettings(1, 1)


def default_solver(dim: int) -> SolveConfig:
    return SolveConfig(method="direct") if dim == 2 else SolveConfig(method="minres")


def solve_case(case: ManufacturedCase, h: float, p: int, r: int, cfg: SolveConfig | None = None,
               naive: bool = False, threads: int = 1,
               quadrature: QuadratureSettings = DEFAULT_QUADRATURE) -> FieldSolution:
    spaces = build_spaces(case.geometry, h, p, r, naive=naive)
    rule = QuadratureRule(spaces.degree + quadrature.assembly_extra)
    system = assemble(spaces, case.params, case.problem(), rule=rule, threads=threads)
    cfg = cfg or default_solver(case.dim)
    if case.params.incompressible and case.pure_dirichlet:
        pinned = case.mean_trace(spaces) if case.has_exact else 0.0
        return solve_trace_constrained(system, cfg, pinned_trace=pinned)
    return solve(system, cfg)


# --- convergence tables ---------------------------------------------------------------

def _rate(e0, e1, h0, h1):
    if e0 <= 0 or e1 <= 0:
        return float("nan")
    return math.log(e0 / e1) / math.log(h0 / h1)


@dataclass
class ConvergenceRow:
    h: float
    dof: int
    err_sigma_hdiv: float
    err_u_l2: float
    err_p_l2: float
    err_div_l2: float
    iters: int
    residual: float = 0.0


@dataclass
class ConvergenceReport:
    case: str
    p: int
    r: int
    rows: list[ConvergenceRow] = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    def rates(self, name) -> np.ndarray:
        e, h = self.column(name), self.column("h")
        return np.array([_rate(e[i], e[i + 1], h[i], h[i + 1]) for i in range(len(e) - 1)])

    def fitted_rate(self, name, last: int | None = None) -> float:
        """Least-squares slope of log(error) against log(h) over the last rows."""
        e, h = self.column(name), self.column("h")
        if last is not None:
            e, h = e[-last:], h[-last:]
        return float(np.polyfit(np.log(h), np.log(e), 1)[0])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        rs, ru, rp = (self.rates(c) for c in ("err_sigma_hdiv", "err_u_l2", "err_p_l2"))
        for i, row in enumerate(self.rows):
            rates = ["" if i == 0 else f"{x[i - 1]:.6f}" for x in (rs, ru, rp)]
            w.writerow([f"{row.h:.17g}", row.dof, f"{row.err_sigma_hdiv:.10e}", f"{row.err_u_l2:.10e}",
                        f"{row.err_p_l2:.10e}", f"{row.err_div_l2:.10e}", *rates, row.iters])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def convergence_study(case: ManufacturedCase, p: int, r: int, hs, cfg: SolveConfig | None = None,
                      naive: bool = False, threads: int = 1, callback=None,
                      quadrature: QuadratureSettings = DEFAULT_QUADRATURE) -> ConvergenceReport:
    hs = list(hs)
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("h values must be strictly decreasing")
    report = ConvergenceReport(case.name, p, r)
    for h in hs:
        sol = solve_case(case, h, p, r, cfg, naive=naive, threads=threads, quadrature=quadrature)
        err = error_norms(sol, case, extra=quadrature.error_extra)
        row = ConvergenceRow(h, sol.spaces.total_dim, err.sigma_hdiv, err.u_l2, err.p_l2, err.div_l2,
                             sol.iterations, sol.residual)
        report.rows.append(row)
        if callback is not None:
            callback(row)
    return report


# --- probes ---------------------------------------------------------------------------

def point_probe(solution: FieldSolution, point) -> np.ndarray:
    """Displacement of the discrete solution at a physical point."""
    spaces = solution.spaces
    x = np.asarray(point, dtype=float).reshape(1, -1)
    for k, F in enumerate(spaces.geometry.patches):
        try:
            z = F.invert(x)
        except PointOutsideError:
            continue
        if np.max(np.abs(F(z) - x)) > 1e-9 * max(1.0, np.abs(x).max()):
            continue
        out = evaluate_field(spaces.u, k, spaces.u.local_coefficients(solution.u, k), z)["value"]
        return np.asarray(out).reshape(-1)
    raise PointOutsideError(f"point {x.ravel().tolist()} is outside the domain")


# --- Cook membrane trajectory -------------------------------------------------------

COOK_MESHES = (1, 4, 7, 10, 13, 16, 19)
COOK_HEADER = ["dof", "ux_P", "uy_P"]


@dataclass
class ProbeRow:
    h: float
    dof: int
    ux: float
    uy: float
    iters: int = 0


def probe_trajectory(case: ManufacturedCase, p: int, r: int, hs, cfg: SolveConfig | None = None,
                     naive: bool = False, threads: int = 1, callback=None,
                     quadrature: QuadratureSettings = DEFAULT_QUADRATURE) -> list[ProbeRow]:
    """Displacement at the case's probe point for each mesh; dof counts free unknowns."""
    if case.probe_point is None:
        raise ValueError(f"case {case.name!r} has no probe point")
    rows = []
    for h in hs:
        sol = solve_case(case, h, p, r, cfg, naive=naive, threads=threads, quadrature=quadrature)
        u = point_probe(sol, case.probe_point)
        row = ProbeRow(float(h), int(sol.n_free), float(u[0]), float(u[1]), sol.iterations)
        rows.append(row)
        if callback is not None:
            callback(row)
    return rows


def trajectory_csv(rows: list[ProbeRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COOK_HEADER)
    for row in rows:
        w.writerow([row.dof, f"{row.ux:.10e}", f"{row.uy:.10e}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
