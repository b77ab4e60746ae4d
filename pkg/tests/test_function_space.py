import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ensemble_pocs.errors import InvalidArgumentError, ResolutionError, ShapeError
from ensemble_pocs.function_space import (
    ControlSignal,
    TimeGrid,
    channel_norms,
    from_coordinates,
    inner_product,
    legendre_basis,
    make_time_grid,
    norm_l2,
    to_coordinates,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_grid_nodes_and_spacing():
    g = make_time_grid(1.0, 2)
    np.testing.assert_array_equal(g.nodes, [0.0, 0.5, 1.0])
    g = make_time_grid(40.0, 4000)
    assert g.step == pytest.approx(0.01)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 40.0
    np.testing.assert_allclose(np.diff(g.nodes), 0.01, rtol=1e-12)


@pytest.mark.parametrize("horizon, steps", [(0.0, 10), (-1.0, 10), (1.0, 1), (1.0, 2.5), (float("inf"), 10)])
def test_grid_rejects_bad_arguments(horizon, steps):
    with pytest.raises(InvalidArgumentError):
        make_time_grid(horizon, steps)


def test_trapezoid_weights_sum_to_horizon():
    g = TimeGrid(3.0, 17)
    assert g.weights.sum() == pytest.approx(3.0, rel=1e-14)


def test_signal_validation():
    g = TimeGrid(1.0, 4)
    with pytest.raises(ShapeError):
        ControlSignal(g, np.zeros((4, 1)))
    with pytest.raises(InvalidArgumentError):
        ControlSignal(g, np.full(5, np.nan))
    u = ControlSignal(g, np.arange(5.0))
    assert u.samples.shape == (5, 1)
    with pytest.raises(ValueError):
        u.samples[0, 0] = 1.0  # read-only


def test_signal_arithmetic_checks_grids():
    a = ControlSignal.constant(TimeGrid(1.0, 4), [1.0])
    b = ControlSignal.constant(TimeGrid(1.0, 5), [1.0])
    with pytest.raises(ShapeError):
        a + b
    c = 2 * a - a
    np.testing.assert_array_equal(c.samples, a.samples)


def test_inner_product_examples(unit_grid):
    one = ControlSignal.constant(unit_grid, [1.0])
    ramp = ControlSignal.from_function(unit_grid, lambda t: t)
    assert inner_product(one, one) == pytest.approx(1.0, abs=1e-14)
    assert inner_product(ramp, one) == pytest.approx(0.5, abs=1e-6)
    e1 = ControlSignal.constant(unit_grid, [1.0, 0.0])
    e2 = ControlSignal.constant(unit_grid, [0.0, 1.0])
    assert inner_product(e1, e2) == 0.0


def test_inner_product_grid_mismatch():
    with pytest.raises(ShapeError):
        inner_product(ControlSignal.zeros(TimeGrid(1, 4), 1), ControlSignal.zeros(TimeGrid(1, 4), 2))


def test_norm_examples(unit_grid):
    assert norm_l2(ControlSignal.zeros(unit_grid, 2)) == 0.0
    assert norm_l2(ControlSignal.constant(unit_grid, [3.0, 4.0])) == pytest.approx(5.0, abs=1e-12)
    ramp = ControlSignal.from_function(unit_grid, lambda t: t)
    assert norm_l2(ramp) == pytest.approx(1.0 / np.sqrt(3.0), abs=1e-6)
    np.testing.assert_allclose(channel_norms(ControlSignal.constant(unit_grid, [3.0, 4.0])), [3.0, 4.0])


def test_quadrature_error_is_second_order():
    exact = np.sqrt(0.5 - np.sin(2.0) / 4.0)  # int_0^1 sin(t)^2 dt
    errs = []
    for n in (50, 100, 200):
        u = ControlSignal.from_function(TimeGrid(1.0, n), np.sin)
        errs.append(abs(norm_l2(u) - exact))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.05)


@given(arrays(float, (21, 2), elements=finite), arrays(float, (21, 2), elements=finite))
def test_cauchy_schwarz(a, b):
    g = TimeGrid(2.0, 20)
    u, v = ControlSignal(g, a), ControlSignal(g, b)
    assert abs(inner_product(u, v)) <= norm_l2(u) * norm_l2(v) * (1 + 1e-12) + 1e-12


@given(arrays(float, (11, 3), elements=finite), arrays(float, (11, 3), elements=finite), finite)
def test_inner_product_symmetric_bilinear(a, b, alpha):
    g = TimeGrid(1.0, 10)
    u, v = ControlSignal(g, a), ControlSignal(g, b)
    assert inner_product(u, v) == pytest.approx(inner_product(v, u), rel=1e-12, abs=1e-9)
    lhs = inner_product(alpha * u + v, v)
    rhs = alpha * inner_product(u, v) + inner_product(v, v)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-6)


def test_legendre_low_orders(unit_grid):
    b1 = legendre_basis(1, unit_grid)
    np.testing.assert_allclose(b1.functions[0], 1.0, atol=1e-12)
    b2 = legendre_basis(2, unit_grid)
    np.testing.assert_allclose(b2.functions[1], np.sqrt(3.0) * (2 * unit_grid.nodes - 1), atol=1e-5)
    b3 = legendre_basis(3, unit_grid)
    assert abs(b3.gram()[1, 2]) <= 1e-10


def test_legendre_order_bounds(unit_grid):
    with pytest.raises(ResolutionError):
        legendre_basis(11, TimeGrid(1.0, 10))
    with pytest.raises(InvalidArgumentError):
        legendre_basis(0, unit_grid)


def test_legendre_orthonormal_at_scale():
    basis = legendre_basis(200, TimeGrid(40.0, 4000))
    assert np.max(np.abs(basis.gram() - np.eye(200))) <= 1e-10


def test_legendre_deterministic(unit_grid):
    np.testing.assert_array_equal(legendre_basis(7, unit_grid).functions, legendre_basis(7, unit_grid).functions)


def test_coordinates_examples(unit_grid):
    basis = legendre_basis(6, unit_grid)
    mu = to_coordinates(ControlSignal.constant(unit_grid, [2.0, -1.0]), basis)
    expected = np.zeros(12)
    expected[0], expected[6] = 2.0, -1.0
    np.testing.assert_allclose(mu, expected, atol=1e-12)
    assert norm_l2(from_coordinates(np.zeros(12), basis)) == 0.0
    phi2 = ControlSignal(unit_grid, basis.functions[1])
    back = from_coordinates(to_coordinates(phi2, basis), basis)
    np.testing.assert_allclose(back.samples, phi2.samples, atol=1e-10)


def test_coordinates_shape_errors(unit_grid):
    basis = legendre_basis(4, unit_grid)
    with pytest.raises(ShapeError):
        to_coordinates(ControlSignal.zeros(TimeGrid(1.0, 10), 1), basis)
    with pytest.raises(ShapeError):
        from_coordinates(np.zeros(5), basis)


@given(arrays(float, 16, elements=st.floats(-10, 10)))
def test_round_trip_on_span(mu):
    basis = legendre_basis(8, TimeGrid(1.0, 300))
    u = from_coordinates(mu, basis)
    np.testing.assert_allclose(to_coordinates(u, basis), mu, atol=1e-9)
    again = from_coordinates(to_coordinates(u, basis), basis)
    assert norm_l2(again - u) <= 1e-9
