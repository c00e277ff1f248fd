import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from doublephase.expr import ExprDomainError
from doublephase.mesh import Field, build_interval_mesh, build_rect_mesh, gradient, interpolate, poincare_estimate
from doublephase.modular import luxemburg_norm
from doublephase.nfunction import ExponentModel, Mode


def test_interval_mesh():
    m = build_interval_mesh(0, 1, 4)
    np.testing.assert_array_equal(m.nodes[:, 0], [0, 0.25, 0.5, 0.75, 1])
    assert m.volume == 1.0
    assert sorted(m.boundary_nodes.tolist()) == [0, 4]
    with pytest.raises(ValueError):
        build_interval_mesh(0, 1, 1)
    with pytest.raises(ValueError):
        build_interval_mesh(1, 0, 4)


def test_rect_mesh():
    m = build_rect_mesh(1, 1, 2, 2)
    assert m.n_nodes == 9 and m.n_elements == 8
    assert m.volume == pytest.approx(1.0, rel=1e-12)
    assert len(m.boundary_nodes) == 8
    with pytest.raises(ValueError):
        build_rect_mesh(1, 1, 1, 2)
    with pytest.raises(ValueError):
        build_rect_mesh(0, 1, 2, 2)


@given(st.integers(2, 12), st.integers(2, 12), st.floats(0.1, 10), st.floats(0.1, 10))
def test_rect_mesh_invariants(nx, ny, lx, ly):
    m = build_rect_mesh(lx, ly, nx, ny)
    assert np.all(m.element_measures > 0)
    p = m.nodes[m.elements]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    assert np.all(signed > 0)
    assert m.element_measures.sum() == pytest.approx(lx * ly, rel=1e-12)
    x, y = m.nodes.T
    on_edge = np.isclose(x, 0) | np.isclose(x, lx) | np.isclose(y, 0) | np.isclose(y, ly)
    assert set(np.flatnonzero(on_edge)) == set(m.boundary_nodes.tolist())


def test_gradients_exact_for_affine():
    m1 = build_interval_mesh(0, 1, 7)
    np.testing.assert_allclose(gradient(interpolate("x", m1))[:, 0], 1.0, atol=1e-14)
    np.testing.assert_array_equal(gradient(interpolate("3", m1)), 0.0)
    m2 = build_rect_mesh(1, 2, 5, 3)
    g = gradient(interpolate("2*x + 3*y", m2))
    np.testing.assert_allclose(g, np.tile([2.0, 3.0], (m2.n_elements, 1)), atol=1e-14)


def test_interpolate():
    m = build_interval_mesh(0, 1, 4)
    np.testing.assert_allclose(interpolate("x*(1-x)", m).coefficients, [0, 0.1875, 0.25, 0.1875, 0])
    assert not np.any(interpolate("0", m).coefficients)
    with pytest.raises(ExprDomainError):
        interpolate("1/x", m)
    with pytest.raises(Exception):
        interpolate("t", m)


def test_field_shape_and_dirichlet():
    m = build_interval_mesh(0, 1, 4)
    with pytest.raises(ValueError):
        Field(np.zeros(3), m)
    assert interpolate("x*(1-x)", m).is_dirichlet
    assert not interpolate("x", m).is_dirichlet


def test_quadrature_second_order():
    errs = []
    for n in (8, 16, 32, 64):
        m = build_interval_mesh(0, 1, n)
        errs.append(abs(m.integrate(interpolate("x^2", m).at_quad()) - 1 / 3))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_stiffness_and_mass_1d():
    m = build_interval_mesh(0, 1, 2)
    K = m.stiffness().toarray()
    np.testing.assert_allclose(K, [[2, -2, 0], [-2, 4, -2], [0, -2, 2]])
    M = m.mass().toarray()
    assert M.sum() == pytest.approx(1.0)


def _poincare_oracle(mesh):
    inner = mesh.interior
    K = mesh.stiffness()[inner][:, inner].toarray()
    M = mesh.mass()[inner][:, inner].toarray()
    return 1.0 / np.sqrt(sla.eigh(K, M, eigvals_only=True, subset_by_index=[0, 0])[0])


def test_poincare_estimate_1d():
    mesh = build_interval_mesh(0, 1, 256)
    model = ExponentModel("2", "2", "0")
    est = poincare_estimate(mesh, model, Mode.DIRECT, trials=4)
    oracle = _poincare_oracle(mesh)
    assert est == pytest.approx(oracle, rel=1e-6)
    assert est == pytest.approx(1 / np.pi, rel=0.02)


def test_poincare_eigenmode_ratio():
    mesh = build_interval_mesh(0, 1, 256)
    model = ExponentModel("2", "2", "0")
    u = interpolate("sin(pi*x)", mesh).coefficients
    r = (luxemburg_norm(mesh.at_quad(u), model, Mode.DIRECT, mesh).value
         / luxemburg_norm(mesh.grad_norm(u), model, Mode.DIRECT, mesh).value)
    assert r == pytest.approx(1 / np.pi, rel=1e-4)


def test_single_hat_quotient():
    # one hat on n = 2: ||u||_2 = 1/sqrt(3) (two-point Gauss is exact here), ||u'||_2 = 2
    mesh = build_interval_mesh(0, 1, 2)
    model = ExponentModel("2", "2", "0")
    u = np.array([0.0, 1.0, 0.0])
    num = luxemburg_norm(mesh.at_quad(u), model, Mode.DIRECT, mesh).value
    den = luxemburg_norm(mesh.grad_norm(u), model, Mode.DIRECT, mesh).value
    assert num / den == pytest.approx(1 / (2 * np.sqrt(3)), rel=1e-9)


def test_poincare_inflated_bound_holds(rng):
    mesh = build_interval_mesh(0, 1, 64)
    model = ExponentModel("2 + x/2", "3", "x")
    c = poincare_estimate(mesh, model, Mode.INTEGRAL, trials=4, refine_steps=20)
    for _ in range(20):
        u = mesh.dirichlet(rng.uniform(-1, 1, mesh.n_nodes))
        nu = luxemburg_norm(mesh.at_quad(u), model, Mode.INTEGRAL, mesh).value
        ng = luxemburg_norm(mesh.grad_norm(u), model, Mode.INTEGRAL, mesh).value
        assert nu <= 1.1 * c * ng


def test_poincare_rejects_zero_trials():
    with pytest.raises(ValueError):
        poincare_estimate(build_interval_mesh(0, 1, 4), ExponentModel("2", "2"), Mode.DIRECT, trials=0)
