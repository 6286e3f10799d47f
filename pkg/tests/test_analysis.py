import csv
import io

import numpy as np
import pytest

from hriga._jax import jax, jnp
from hriga.analysis import (
    CSV_HEADER,
    REFERENCE_QUADRATURE,
    ConvergenceReport,
    ConvergenceRow,
    ManufacturedCase,
    QuadratureSettings,
    case_catalog,
    convergence_study,
    error_norms,
    point_probe,
    solve_case,
)
from hriga.geometry import PointOutsideError, as_multipatch, catalog
from hriga.operators import MaterialParams
from hriga.solver import FieldSolution, SolveConfig

from reference_data import DEFORMED_SQUARE


def random_interior(case, m, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.05, 0.95, (m, case.dim))
    return case.reference(z)


def test_divergence_of_stress_equals_load_incompressible():
    case = case_catalog("incompressible")
    x = random_interior(case, 100)

    def sigma(pt):
        g = jax.jacfwd(case.displacement)(pt)
        return g + g.T  # 2 mu eps with mu = 1

    div = jax.vmap(lambda pt: jnp.trace(jax.jacfwd(sigma)(pt), axis1=1, axis2=2))(jnp.asarray(x))
    np.testing.assert_allclose(case.fields(x).div, np.asarray(div), atol=1e-10)


@pytest.mark.parametrize("name", ["deformed_square", "ring3d"])
def test_parametric_derivatives_against_finite_differences(name):
    case = case_catalog(name)
    F = case.reference
    x = random_interior(case, 12, seed=1)
    ex = case.fields(x)
    step = 1e-5
    n = case.dim
    fd_grad = np.zeros((len(x), n, n))
    fd_div = np.zeros((len(x), n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        plus, minus = case.fields(x + e), case.fields(x - e)
        fd_grad[:, :, j] = (plus.u - minus.u) / (2 * step)
        fd_div += (plus.sigma[:, :, j] - minus.sigma[:, :, j]) / (2 * step)
    np.testing.assert_allclose(ex.grad, fd_grad, atol=1e-7)
    np.testing.assert_allclose(ex.div, fd_div, atol=1e-5 * max(1.0, np.abs(ex.div).max()))
    # the parametric route through zeta agrees with inversion of x
    z = F.invert(x)
    np.testing.assert_allclose(case.fields(x, z, 0).div, ex.div, atol=1e-10)


def test_deformed_square_displacement_vanishes_on_boundary():
    case = case_catalog("deformed_square")
    s = np.linspace(0, 1, 25)[:, None]
    for face in ("left", "right", "bottom", "top"):
        x = case.reference(case.reference.face_points(face, s))
        assert np.abs(case.fields(x).u).max() <= 1e-14


def test_incompressible_case_properties():
    case = case_catalog("incompressible")
    x = random_interior(case, 100, seed=2)
    grad = case.fields(x).grad
    assert np.abs(np.trace(grad, axis1=1, axis2=2)).max() <= 1e-12
    y = np.linspace(0, 1, 30)
    left = np.stack([np.zeros_like(y), y], 1)
    assert np.abs(case.fields(left).u).max() <= 1e-15
    assert case.params.incompressible and not case.pure_dirichlet


def test_multiplier_is_half_skew_gradient():
    case = case_catalog("deformed_square")
    x = random_interior(case, 10, seed=3)
    ex = case.fields(x)
    g = ex.grad
    np.testing.assert_allclose(ex.p[:, 0], 0.5 * (g[:, 1, 0] - g[:, 0, 1]), atol=1e-15)
    np.testing.assert_allclose(ex.sigma, np.swapaxes(ex.sigma, 1, 2), atol=1e-14)


def test_unknown_case():
    with pytest.raises(ValueError):
        case_catalog("nope")


def linear_case(dim=2):
    A = jnp.array([[1.0, 2.0], [3.0, -1.0]]) if dim == 2 else jnp.arange(9.0).reshape(3, 3) / 7.0
    geom = catalog("unit_square" if dim == 2 else "unit_cube")
    mp = as_multipatch(geom)
    return ManufacturedCase("linear", mp, MaterialParams(2.0, 1.0, dim), lambda x: A @ x + 0.5, "physical", geom,
                            dirichlet=tuple(mp.boundary_faces()))


def test_representable_solution_has_machine_level_errors():
    case = linear_case()
    for h in (1.0, 0.5):
        sol = solve_case(case, h, 2, 0)
        err = error_norms(sol, case)
        assert max(err.sigma_hdiv, err.u_l2, err.p_l2, err.div_l2) <= 1e-12


def test_representable_solution_with_traction_faces():
    case = linear_case()
    case.dirichlet = ("left", "bottom")
    case.traction = ("right", "top")
    sol = solve_case(case, 0.5, 3, 1)
    err = error_norms(sol, case)
    assert max(err.sigma_hdiv, err.u_l2, err.p_l2) <= 1e-12


def test_representable_solution_3d():
    case = linear_case(3)
    sol = solve_case(case, 1.0, 2, 0, cfg=SolveConfig(method="direct"))
    err = error_norms(sol, case)
    assert max(err.sigma_hdiv, err.u_l2, err.p_l2) <= 1e-10
    assert solve_case(case, 1.0, 2, 0).residual <= 5e-8


@pytest.mark.parametrize("p,m,col,expected", [(2, 2, 0, 8.4378696), (3, 4, 2, 0.0050593522)])
def test_benchmark_spot_values(p, m, col, expected):
    case = case_catalog("deformed_square")
    err = error_norms(solve_case(case, 1 / m, p, 0), case)
    got = (err.sigma_hdiv, err.u_l2, err.p_l2)[col]
    assert abs(got / expected - 1) <= 0.01


def test_reference_quadrature_reproduces_published_digits():
    case = case_catalog("deformed_square")
    for p, m in ((2, 2), (3, 4)):
        sol = solve_case(case, 1 / m, p, 0, quadrature=REFERENCE_QUADRATURE)
        err = error_norms(sol, case, extra=REFERENCE_QUADRATURE.error_extra)
        np.testing.assert_allclose((err.sigma_hdiv, err.u_l2, err.p_l2), DEFORMED_SQUARE[p][m], rtol=2e-6)


def test_quadrature_settings_validation():
    with pytest.raises(ValueError):
        QuadratureSettings(0, 3)


def test_convergence_study_rates_and_csv(tmp_path):
    case = case_catalog("deformed_square")
    rep = convergence_study(case, 2, 0, [1 / 2, 1 / 4])
    assert [round(1 / r.h) for r in rep.rows] == [2, 4]
    e, h = rep.column("err_sigma_hdiv"), rep.column("h")
    assert rep.rates("err_sigma_hdiv")[0] == pytest.approx(np.log(e[0] / e[1]) / np.log(h[0] / h[1]))
    # published pair 8.4378696 -> 2.3346271 has rate about 1.85
    assert rep.rates("err_sigma_hdiv")[0] == pytest.approx(1.85, abs=0.02)
    text = rep.to_csv(tmp_path / "out.csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_HEADER
    assert rows[1][6] == "" and float(rows[2][6]) == pytest.approx(rep.rates("err_sigma_hdiv")[0], abs=1e-6)
    assert (tmp_path / "out.csv").read_text() == text
    assert np.all(np.diff(rep.column("err_u_l2")) < 0)
    with pytest.raises(ValueError):
        convergence_study(case, 2, 0, [1 / 4, 1 / 2])


def test_fitted_rate_of_exact_power_law():
    rep = ConvergenceReport("synthetic", 2, 0)
    for h in (1.0, 0.5, 0.25):
        rep.rows.append(ConvergenceRow(h, 0, 3 * h ** 2, h ** 3, h, h, 0))
    assert rep.fitted_rate("err_sigma_hdiv") == pytest.approx(2.0)
    assert rep.fitted_rate("err_u_l2", last=2) == pytest.approx(3.0)


def test_point_probe():
    case = case_catalog("cook")
    sol = solve_case(case, 1.0, 2, 0)
    corner = case.reference(np.array([[1.0, 1.0]]))[0]
    np.testing.assert_allclose(corner, [48.0, 60.0])
    # a corner probe evaluates through the same inversion path
    assert np.all(np.isfinite(point_probe(sol, corner)))
    zero = FieldSolution(np.zeros_like(sol.sigma), np.zeros_like(sol.u), np.zeros_like(sol.p), 0.0, 0, sol.spaces)
    np.testing.assert_array_equal(point_probe(zero, case.probe_point), 0.0)
    with pytest.raises(PointOutsideError):
        point_probe(sol, [60.0, 0.0])


def test_cook_coarse_overshoot():
    case = case_catalog("cook")
    u = point_probe(solve_case(case, 1.0, 2, 0, quadrature=REFERENCE_QUADRATURE), case.probe_point)
    np.testing.assert_allclose(u, [-9.7186, 21.0654], atol=5e-5)


def test_cook_zero_traction_gives_zero_displacement():
    case = case_catalog("cook")
    case.traction_value = np.zeros(2)
    sol = solve_case(case, 0.25, 2, 0)
    assert np.all(point_probe(sol, case.probe_point) == 0)
