import itertools

import numpy as np
import pytest

from hriga.geometry import (
    DegenerateGeometryError,
    GeometryMap,
    Mesh,
    PointOutsideError,
    adjugate,
    catalog,
    determinant,
    fit_patch,
    load_spline_map,
)


def grid(n, m=20):
    g = (np.arange(m) + 0.5) / m
    return np.stack(np.meshgrid(*[g] * n, indexing="ij"), -1).reshape(-1, n)


def test_deformed_square_values():
    F = catalog("deformed_square")
    np.testing.assert_allclose(F([0.5, 0.5])[0], [0.5, 0.75], atol=1e-15)
    J, det, adj = F.jacobian_pack(np.array([[0.3, 0.7]]))
    np.testing.assert_allclose(det, 1.0, atol=1e-15)
    np.testing.assert_allclose(J[0], [[1.0, 0.0], [1 - 0.6, 1.0]], atol=1e-15)
    z = grid(2, 7)
    np.testing.assert_allclose(F.invert(F(z)), z, atol=1e-14)


def test_unit_square_identity():
    F = catalog("unit_square")
    J, det, adj = F.jacobian_pack(grid(2, 5))
    np.testing.assert_allclose(J, np.broadcast_to(np.eye(2), J.shape))
    np.testing.assert_allclose(det, 1.0)
    np.testing.assert_allclose(adj, J)


def test_cook_corners():
    F = catalog("cook")
    c = F(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    np.testing.assert_allclose(c, [[0, 0], [48, 44], [48, 60], [0, 44]], atol=1e-13)
    z = np.random.default_rng(0).random((30, 2))
    np.testing.assert_allclose(F.invert(F(z)), z, atol=1e-11)
    with pytest.raises(PointOutsideError):
        F.invert(np.array([[60.0, 0.0]]))


def test_ring_is_exact_annulus():
    F = catalog("ring3d")
    z = np.random.default_rng(1).random((50, 3))
    x = F(z)
    r = np.hypot(x[:, 0], x[:, 1])
    np.testing.assert_allclose(r, 1 + z[:, 0], atol=1e-13)
    np.testing.assert_allclose(x[:, 2], z[:, 2], atol=1e-15)
    corners = F(np.array([[0, 0, 0], [1, 1, 1]], float))
    np.testing.assert_allclose(corners, [[1, 0, 0], [0, 2, 1]], atol=1e-14)
    np.testing.assert_allclose(F.invert(x), z, atol=1e-10)


@pytest.mark.parametrize("name", ["unit_square", "unit_cube", "deformed_square", "cook", "ring3d"])
def test_positive_determinant(name):
    F = catalog(name)
    _, det, _ = F.jacobian_pack(grid(F.dim, 20 if F.dim == 2 else 12))
    assert np.all(det > 0)


@pytest.mark.parametrize("name", ["deformed_square_9patch", "cube_2patch"])
def test_multipatch_interfaces(name):
    G = catalog(name)
    expected = {"deformed_square_9patch": 12, "cube_2patch": 1}[name]
    assert len(G.interfaces) == expected
    assert G.interface_mismatch() <= 1e-12
    for P in G.patches:
        assert np.all(P.jacobian_pack(grid(P.dim, 8))[1] > 0)


def test_nine_patch_reproduces_deformed_square():
    G = catalog("deformed_square_9patch")
    F = catalog("deformed_square")
    z = np.random.default_rng(2).random((20, 2))
    lo, hi = 0.25, 0.6  # centre cell
    np.testing.assert_allclose(G.patches[4](z), F(lo + z * (hi - lo)), atol=1e-13)
    # glued map is not C1: one-sided parametric derivatives differ at the interface
    J0 = G.patches[0].jacobian(np.array([[1.0, 0.5]]))
    J1 = G.patches[3].jacobian(np.array([[0.0, 0.5]]))
    assert not np.allclose(J0, J1)


def test_adjugate_identity_random():
    rng = np.random.default_rng(3)
    for n in (2, 3):
        J = rng.standard_normal((100, n, n))
        det = determinant(J)
        res = adjugate(J) @ J - det[:, None, None] * np.eye(n)
        assert np.all(np.abs(res).max(axis=(1, 2)) <= 1e-12 * np.maximum(np.abs(det), 1e-300) + 1e-15)


def test_degenerate_map_rejected():
    flip = GeometryMap(2, lambda z: z[::-1], name="flip")
    with pytest.raises(DegenerateGeometryError):
        flip.jacobian_pack(grid(2, 3))


def test_unknown_geometry():
    with pytest.raises(ValueError):
        catalog("teapot")


def test_spline_map_json_roundtrip(tmp_path):
    import json

    data = {"degrees": [1, 1], "knots": [[0, 0, 1, 1], [0, 0, 1, 1]],
            "control_points": [[0, 0], [0, 2], [3, 0], [3, 2]]}
    path = tmp_path / "rect.json"
    path.write_text(json.dumps(data))
    F = load_spline_map(path)
    np.testing.assert_allclose(F([0.5, 0.25])[0], [1.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(F.jacobian([0.1, 0.9])[0], [[3, 0], [0, 2]], atol=1e-14)


def test_fit_patch_exact_for_quadratic():
    f = catalog("deformed_square").func
    P = fit_patch(f, (2, 2), (0.0, 0.0), (1.0, 1.0))
    z = grid(2, 6)
    np.testing.assert_allclose(P(z), catalog("deformed_square")(z), atol=1e-14)
    np.testing.assert_allclose(P.hessian(z)[:, 1, 0, 0], -2.0, atol=1e-12)


def test_mesh_bounds_tile_domain():
    m = Mesh.uniform((3, 2))
    b = m.element_bounds()
    assert b.shape == (6, 2, 2)
    vol = np.prod(b[:, :, 1] - b[:, :, 0], axis=1).sum()
    assert abs(vol - 1.0) < 1e-15
    corners = set(itertools.product(*[range(3), range(2)]))
    assert len(corners) == m.n_elements
    assert abs(m.diameter(catalog("unit_square")) - np.hypot(1 / 3, 1 / 2)) < 1e-14


def test_nurbs_derivatives_match_finite_differences():
    F = catalog("ring3d")
    z = np.random.default_rng(5).uniform(0.1, 0.9, (10, 3))
    step = 1e-6
    J, H = F.jacobian(z), F.hessian(z)
    for b in range(3):
        e = np.zeros(3)
        e[b] = step
        fd_J = (F(z + e) - F(z - e)) / (2 * step)
        np.testing.assert_allclose(J[:, :, b], fd_J, atol=1e-8)
        fd_H = (F.jacobian(z + e) - F.jacobian(z - e)) / (2 * step)
        np.testing.assert_allclose(H[:, :, :, b], fd_H, atol=1e-7)
