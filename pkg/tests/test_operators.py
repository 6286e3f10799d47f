import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hriga.operators import (
    INCOMPRESSIBLE,
    MaterialParams,
    compliance_apply,
    curl_2d,
    skew,
    stiffness_apply,
    sym_grad,
    trace,
    xi,
    xi_inv,
)

finite = st.floats(-10, 10, allow_nan=False)
mat2 = arrays(np.float64, (2, 2), elements=finite)
mat3 = arrays(np.float64, (3, 3), elements=finite)


def test_skew_examples():
    assert skew(np.array([[1.0, 2.0], [3.0, 4.0]])) == 1.0
    M = np.zeros((3, 3))
    M[1, 0] = 1.0
    np.testing.assert_array_equal(skew(M), [0, 0, 1])
    with pytest.raises(ValueError):
        skew(np.zeros((4, 4)))


@given(mat3)
def test_skew_vanishes_on_symmetric(M):
    np.testing.assert_array_equal(skew(M + M.T), 0.0)
    assert skew(M[:2, :2] + M[:2, :2].T) == 0.0


def test_xi_examples():
    np.testing.assert_array_equal(xi(np.eye(3)), -2 * np.eye(3))


@given(mat3)
def test_xi_inverse_pair(M):
    scale = max(1.0, np.abs(M).max())
    assert np.abs(xi_inv(xi(M)) - M).max() <= 1e-14 * scale * 10
    assert np.abs(xi(xi_inv(M)) - M).max() <= 1e-14 * scale * 10
    assert abs(trace(xi(M)) + 2 * trace(M)) <= 1e-13 * scale


def test_compliance_examples():
    inc = MaterialParams(INCOMPRESSIBLE, 1.0, 2)
    np.testing.assert_allclose(compliance_apply(inc, np.eye(2)), 0.0, atol=1e-16)
    m = MaterialParams(2.0, 1.0, 2)
    np.testing.assert_allclose(compliance_apply(m, np.eye(2)), np.eye(2) / 6, atol=1e-16)
    assert MaterialParams("inf", 1.0).incompressible
    assert MaterialParams(INCOMPRESSIBLE, 1.0, 3).trace_coefficient == pytest.approx(1 / 3)


def test_material_validation():
    with pytest.raises(ValueError):
        MaterialParams(1.0, 0.0)
    with pytest.raises(ValueError):
        MaterialParams(-1.0, 1.0)
    with pytest.raises(ValueError):
        MaterialParams("big", 1.0)


@settings(max_examples=50)
@given(st.sampled_from([2, 3]), st.floats(0, 1e3), st.floats(0.1, 10), st.integers(0, 2**31 - 1))
def test_compliance_symmetric_and_coercive(n, lam, mu, seed):
    rng = np.random.default_rng(seed)
    params = MaterialParams(lam, mu, n)
    s, t = rng.standard_normal((2, n, n))
    a = np.sum(compliance_apply(params, s) * t)
    b = np.sum(compliance_apply(params, t) * s)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
    lower = (1 / (2 * mu)) * (1 - n * lam / (n * lam + 2 * mu)) * np.sum(s * s)
    assert np.sum(compliance_apply(params, s) * s) >= lower - 1e-12 * np.sum(s * s) / mu


def test_stiffness_examples():
    m = MaterialParams(2.0, 1.0, 2)
    np.testing.assert_allclose(stiffness_apply(m, np.eye(2)), 6 * np.eye(2))
    np.testing.assert_array_equal(stiffness_apply(m, np.zeros((2, 2))), 0.0)
    with pytest.raises(ValueError):
        stiffness_apply(MaterialParams(INCOMPRESSIBLE, 1.0), np.eye(2))


@settings(max_examples=50)
@given(st.sampled_from([2, 3]), st.floats(0, 1e3), st.floats(0.1, 10), st.integers(0, 2**31 - 1))
def test_compliance_stiffness_roundtrip(n, lam, mu, seed):
    eps = sym_grad(np.random.default_rng(seed).standard_normal((n, n)))
    params = MaterialParams(lam, mu, n)
    assert np.abs(compliance_apply(params, stiffness_apply(params, eps)) - eps).max() <= 1e-13 * max(1.0, lam / mu)


def test_sym_grad_examples():
    np.testing.assert_array_equal(sym_grad(np.eye(2)), np.eye(2))
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(sym_grad(rot), 0.0)
    assert skew(rot) == 2.0


@given(mat2)
def test_curl_2d_skew_is_divergence_linear_fields(G):
    # v = G x has gradient G; Skew(curl v) must equal tr(G) = div v
    assert abs(skew(curl_2d(G)) - trace(G)) <= 1e-12 * max(1.0, np.abs(G).max())
