import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from hriga.assembly import Problem, assemble, dirichlet_everywhere
from hriga.derham import ConfigurationError, build_spaces
from hriga.geometry import catalog
from hriga.operators import INCOMPRESSIBLE, MaterialParams
from hriga.solver import (
    SolveConfig,
    SolverNonConvergence,
    identity_coefficients,
    identity_in_sigma_predicate,
    minres,
    solve,
    solve_linear,
    solve_trace_constrained,
    trace_functional,
)


def test_diagonal_example():
    x, res, _ = solve_linear(sp.diags([1.0, 2.0]).tocsr(), np.array([1.0, 2.0]), SolveConfig())
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)
    assert res <= 5e-8


def test_indefinite_2x2_example():
    M = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    for method in ("minres", "direct", "dense"):
        x, res, _ = solve_linear(M, np.array([2.0, 1.0]), SolveConfig(method=method))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_minres_matches_dense_on_random_indefinite(seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    ev = rng.uniform(0.5, 5.0, 50) * rng.choice([-1.0, 1.0], 50)
    M = (Q * ev) @ Q.T
    M = 0.5 * (M + M.T)
    b = rng.standard_normal(50)
    out = minres(M, b, tol=1e-12)
    ref = np.linalg.solve(M, b)
    assert out.converged
    assert np.linalg.norm(out.x - ref) <= 1e-6 * np.linalg.norm(ref)


def test_minres_zero_rhs():
    out = minres(sp.eye(5), np.zeros(5))
    assert out.converged and np.all(out.x == 0) and out.iterations == 0


def test_nonconvergence_carries_best_residual():
    rng = np.random.default_rng(0)
    M = sp.diags(np.linspace(1e-6, 1.0, 400)).tocsr()
    with pytest.raises(SolverNonConvergence) as info:
        solve_linear(M, rng.standard_normal(400), SolveConfig(tol=1e-14, max_iter=5))
    assert 0 < info.value.residual < 1 and info.value.iterations == 5
    assert info.value.x is not None


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolveConfig(tol=0.0)
    with pytest.raises(ConfigurationError):
        SolveConfig(method="cg")
    with pytest.raises(ConfigurationError):
        solve_linear(sp.eye(3000).tocsr(), np.ones(3000), SolveConfig(method="dense"))


def _deformed_system(h, p=2, lam=2.0, load=True):
    geom = catalog("deformed_square")
    S = build_spaces(geom, h, p, 0)
    f = (lambda x: np.stack([np.sin(3 * x[:, 0]), np.cos(2 * x[:, 1])], 1)) if load else None
    return assemble(S, MaterialParams(lam, 1.0, 2), Problem(load=f, dirichlet=dirichlet_everywhere(geom)))


def test_minres_residual_contract_on_benchmark_system():
    sysm = _deformed_system(0.25)
    sol = solve(sysm, SolveConfig())
    r = np.linalg.norm(sysm.matrix @ sol.vector - sysm.rhs) / np.linalg.norm(sysm.rhs)
    assert sol.residual <= 5e-8 and r <= 5e-8
    direct = solve(sysm, SolveConfig(method="direct"))
    assert np.linalg.norm(sol.vector - direct.vector) <= 1e-5 * np.linalg.norm(direct.vector)


def test_jacobi_preconditioner_converges():
    sysm = _deformed_system(0.5)
    sol = solve(sysm, SolveConfig(preconditioner="jacobi"))
    r = np.linalg.norm(sysm.matrix @ sol.vector - sysm.rhs) / np.linalg.norm(sysm.rhs)
    assert r <= 5e-8


def test_full_rank_at_coarse_mesh():
    M = _deformed_system(0.5).matrix.toarray()
    s = np.linalg.svd(M, compute_uv=False)
    assert s.min() > 1e-8 * s.max()


def test_deterministic():
    sysm = _deformed_system(0.5)
    a = solve(sysm, SolveConfig()).vector
    b = solve(sysm, SolveConfig()).vector
    assert np.array_equal(a, b)


def test_identity_in_sigma_predicate_examples():
    assert identity_in_sigma_predicate(2, 2, 0, 1, 0)
    assert identity_in_sigma_predicate(3, 2, 0, 1, 0)
    assert not identity_in_sigma_predicate(3, 2, 0, 2, 1)


@pytest.mark.parametrize("name,expected", [("unit_square", True), ("deformed_square", True), ("cook", True)])
def test_identity_fit_2d(name, expected):
    S = build_spaces(catalog(name), 0.5, 2, 0)
    _, resid = identity_coefficients(S.sigma)
    assert (resid <= 1e-10) == expected


def test_identity_fit_3d_ring_fails_for_quadratic_geometry():
    # the ring map is quadratic in the angular direction: 2*2 > 2+1
    S = build_spaces(catalog("ring3d"), 1.0, 2, 0)
    _, resid = identity_coefficients(S.sigma)
    assert resid > 1e-6
    S = build_spaces(catalog("unit_cube"), 1.0, 2, 0)
    _, resid = identity_coefficients(S.sigma)
    assert resid <= 1e-10


def test_trace_functional_matches_area():
    sysm = _deformed_system(0.5)
    I, _ = identity_coefficients(sysm.spaces.sigma)
    t = trace_functional(sysm)
    # integral of tr(I) over a domain of area 1
    assert abs(t[: len(I)] @ I - 2.0) <= 1e-12


def test_trace_constrained_zero_data():
    sysm = _deformed_system(0.5, load=False)
    sol = solve_trace_constrained(sysm)
    assert np.all(sol.vector == 0) and sol.trace_shift == 0.0


def test_trace_constrained_finite_lambda_recovers_full_solution():
    sysm = _deformed_system(0.5)
    ref = solve(sysm, SolveConfig(method="direct"))
    sol = solve_trace_constrained(sysm, SolveConfig(method="direct"))
    I, _ = identity_coefficients(sysm.spaces.sigma)
    sig0 = sol.sigma - sol.trace_shift * I
    AI = sysm.A @ I
    # recovery equation <A(sigma0 + cI), I> = <u_D, I nu>
    assert abs((sig0 + sol.trace_shift * I) @ AI - sysm.g_sigma @ I) <= 1e-10 * max(1.0, abs(sysm.g_sigma @ I))
    np.testing.assert_allclose(sol.vector, ref.vector, atol=1e-9 * np.abs(ref.vector).max())


def test_trace_constrained_incompressible_pins_mean_trace():
    sysm = _deformed_system(0.5, lam=INCOMPRESSIBLE)
    t = trace_functional(sysm)
    for target in (0.0, 0.7):
        sol = solve_trace_constrained(sysm, SolveConfig(method="direct"), pinned_trace=target)
        assert abs(t @ sol.vector - target) <= 1e-10
        r = np.linalg.norm(sysm.matrix @ sol.vector - sysm.rhs) / np.linalg.norm(sysm.rhs)
        assert r <= 1e-8


def test_trace_constrained_rejects_missing_identity():
    geom = catalog("ring3d")
    S = build_spaces(geom, 1.0, 2, 0)
    sysm = assemble(S, MaterialParams(INCOMPRESSIBLE, 1.0, 3), Problem(dirichlet=dirichlet_everywhere(geom)))
    with pytest.raises(ConfigurationError, match="2q <= p\\+1"):
        solve_trace_constrained(sysm)
