import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgforge import symexpr as se
from dgforge.assembly import error_norm
from dgforge.femcore import (DGSpace, Mesh2D, MeshError, facet_quadrature, geometry_map,
                             interpolate, lattice_points, monomial_moment, reference_basis,
                             reference_quadrature, structured_triangle_mesh)

x, y = se.coordinate(0), se.coordinate(1)


def test_unit_square_counts():
    m = structured_triangle_mesh(1, 1)
    assert m.num_cells == 2
    assert len(m.vertices) == 4
    assert m.num_facets == 5
    assert len(m.interior_facets) == 1


def test_listing_mesh_size():
    assert structured_triangle_mesh(32, 32).num_cells == 2048


@given(st.integers(1, 12), st.integers(1, 12),
       st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.1, 3))
def test_cell_areas_cover_box(nx, ny, x0, w, h):
    m = structured_triangle_mesh(nx, ny, ((x0, -1.0), (x0 + w, -1.0 + h)))
    assert abs(m.cell_areas().sum() - w * h) <= 1e-14 * max(1.0, w * h) * 10
    assert np.all(m.cell_areas() > 0)
    # interior facets have two cells, boundary facets one
    assert np.all((m.facet_cells[:, 1] >= 0) == (m.boundary_tags == 0))


def test_degenerate_box():
    with pytest.raises(MeshError):
        structured_triangle_mesh(2, 2, ((0.0, 0.0), (0.0, 1.0)))
    with pytest.raises(ValueError):
        structured_triangle_mesh(0, 2)


def test_zero_area_cell_rejected():
    with pytest.raises(MeshError):
        Mesh2D.from_cells([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


def test_facet_measure_by_hand():
    h = 0.25
    m = structured_triangle_mesh(1, 1, ((0.0, 0.0), (h, h)))
    hf = m.facet_measure_h()
    diag = m.interior_facets[0]
    assert math.isclose(hf[diag], h / (2 * math.sqrt(2)), rel_tol=1e-14)
    assert np.allclose(hf[m.boundary_facets], h / 2, rtol=1e-14)


def test_refinement_halves_facet_measure():
    a = structured_triangle_mesh(4, 4).facet_measure_h()
    b = structured_triangle_mesh(8, 8).facet_measure_h()
    assert np.allclose(np.sort(np.unique(b.round(14))) * 2, np.sort(np.unique(a.round(14))))


def test_boundary_tags_by_side():
    m = structured_triangle_mesh(3, 3)
    mid = m.vertices[m.facets[m.boundary_facets]].mean(axis=1)
    tags = m.boundary_tags[m.boundary_facets]
    assert np.all(mid[tags == 1, 0] == 0.0)
    assert np.all(mid[tags == 2, 0] == 1.0)
    assert np.all(mid[tags == 3, 1] == 0.0)
    assert np.all(mid[tags == 4, 1] == 1.0)


def test_normals_are_outward_and_opposite():
    m = structured_triangle_mesh(3, 2)
    n = m.facet_normals()
    for f in m.interior_facets:
        plus, minus = m.facet_cells[f]
        gp = geometry_map(m, plus)
        gm = geometry_map(m, minus)
        lp, lm = m.facet_local[f]
        assert np.allclose(gp.normals[lp], n[f], atol=1e-15)
        assert np.allclose(gm.normals[lm], -n[f], atol=1e-15)


def test_dump_and_load_round_trip(tmp_path):
    m = structured_triangle_mesh(3, 2, ((0.0, 0.0), (2.0, 1.0)))
    path = tmp_path / "mesh.txt"
    m.dump(path)
    m2 = Mesh2D.load(path)
    assert np.array_equal(m2.vertices, m.vertices)
    assert np.array_equal(m2.cells, m.cells)
    assert np.array_equal(m2.facet_cells, m.facet_cells)
    assert np.array_equal(m2.boundary_tags, m.boundary_tags)


# quadrature and basis --------------------------------------------------------------------

def test_centroid_rule():
    q = reference_quadrature(1)
    assert q.points.shape == (1, 2)
    assert np.allclose(q.points, [[1 / 3, 1 / 3]])
    assert q.weights.tolist() == [0.5]


@pytest.mark.parametrize("order", range(0, 13))
def test_quadrature_monomial_exactness(order):
    q = reference_quadrature(order)
    assert q.degree >= order
    assert np.all(q.weights > 0)
    assert abs(q.weights.sum() - 0.5) < 1e-15
    for a in range(order + 1):
        for b in range(order + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            got = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert abs(got - exact) <= 1e-15
            assert monomial_moment(a, b) == pytest.approx(exact, rel=1e-15)


def test_unsupported_quadrature_order():
    with pytest.raises(ValueError):
        reference_quadrature(-1)
    with pytest.raises(ValueError):
        facet_quadrature(1000)


@pytest.mark.parametrize("deg", range(0, 5))
def test_basis_is_orthonormal(deg):
    b = reference_basis(deg)
    assert b.dim == (deg + 1) * (deg + 2) // 2
    q = reference_quadrature(2 * deg + 2)
    V = b.values(q.points)
    M = V.T @ (q.weights[:, None] * V)
    assert np.allclose(M, np.eye(b.dim), atol=1e-11)


def test_constant_basis():
    b = reference_basis(0)
    assert b.dim == 1
    v = b.values(np.array([[0.1, 0.2], [0.7, 0.1]]))
    assert np.allclose(v, v[0, 0])
    assert np.allclose(b.gradients(np.array([[0.3, 0.3]])), 0.0)


@pytest.mark.parametrize("deg", [1, 2, 3, 4])
def test_basis_gradients_against_finite_differences(deg):
    b = reference_basis(deg)
    p = np.array([[0.2, 0.3], [0.6, 0.1]])
    eps = 1e-6
    for l in range(2):
        e = np.zeros(2)
        e[l] = eps
        fd = (b.values(p + e) - b.values(p - e)) / (2 * eps)
        assert np.allclose(b.gradients(p)[..., l], fd, atol=1e-7)


def test_identity_geometry():
    m = Mesh2D.from_cells([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    g = geometry_map(m, 0)
    assert np.allclose(g.jacobian, np.eye(2)) and g.det == 1.0
    assert np.allclose(g(np.array([[0.3, 0.2]])), [[0.3, 0.2]])


def test_physical_gradient_transform():
    # the physical gradient of a mapped basis function matches finite differences
    m = structured_triangle_mesh(2, 3, ((0.0, 0.0), (1.3, 0.7)))
    V = DGSpace(m, 3)
    cell = 5
    xh = np.array([[0.2, 0.3]])
    G = V.physical_gradients(V.basis.gradients(xh), np.array([cell]))[0, 0]
    xp = V.to_physical(xh, np.array([cell]))[0]
    eps = 1e-6
    for l in range(2):
        e = np.zeros((1, 1, 2))
        e[..., l] = eps
        up = V.basis.values(V.to_reference(xp[None] + e, np.array([cell])))[0, 0]
        dn = V.basis.values(V.to_reference(xp[None] - e, np.array([cell])))[0, 0]
        assert np.allclose(G[:, l], (up - dn) / (2 * eps), atol=1e-6)


def test_lattice_points():
    assert len(lattice_points(3)) == 10
    assert np.all(lattice_points(2).sum(axis=1) <= 1.0 + 1e-15)


# interpolation -------------------------------------------------------------------------

def test_interpolate_constant():
    V = DGSpace(structured_triangle_mesh(3, 3), 2)
    u = interpolate(se.const(1.0), V)
    assert error_norm(u, se.const(1.0)) < 1e-14
    vals = u.evaluate_reference(np.array([[0.1, 0.1], [0.5, 0.3]]))
    assert np.allclose(vals, 1.0)


@pytest.mark.parametrize("deg", [1, 2, 3, 4])
def test_interpolation_is_exact_on_polynomials(deg):
    V = DGSpace(structured_triangle_mesh(3, 2), deg, 2)
    p = se.as_vector([1 + x ** deg - 3 * x * y ** (deg - 1), y ** deg + 0.5])
    u = interpolate(p, V)
    assert error_norm(u, p) <= 1e-12
    assert error_norm(u, p, "H1") <= 1e-10


@pytest.mark.parametrize("deg", [1, 2])
def test_interpolation_error_order(deg):
    ex = se.exp(x - y)
    errs = [error_norm(interpolate(ex, DGSpace(structured_triangle_mesh(n, n), deg)), ex)
            for n in (4, 8, 16)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - (deg + 1)) < 0.15)
