import numpy as np
import pytest

from krflab.errors import GridUnderflow
from krflab.grid import Grid, GridFunction, derivative, fornberg_weights


def test_grid_invariants():
    with pytest.raises(ValueError):
        Grid(1.0, 0.0, 64)
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 8)
    g = Grid(-2.0, 2.0, 65)
    assert g.h == pytest.approx(4.0 / 64)
    assert g.x[0] == -2.0 and g.x[-1] == pytest.approx(2.0)


def test_fornberg_reproduces_centered_stencils():
    w1 = fornberg_weights(0.0, np.arange(-2.0, 3.0), 1)
    assert np.allclose(w1, [1 / 12, -8 / 12, 0, 8 / 12, -1 / 12])
    w2 = fornberg_weights(0.0, np.arange(-2.0, 3.0), 2)
    assert np.allclose(w2, [-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12])


@pytest.mark.parametrize("order", [1, 2])
def test_derivative_exact_on_quartics(order):
    g = Grid(-1.0, 1.0, 41)
    x = g.x
    f = 2.0 + x - 0.5 * x ** 2 + 0.25 * x ** 3 + 0.125 * x ** 4
    d = derivative(f, g.h, order)
    if order == 1:
        exact = 1 - x + 0.75 * x ** 2 + 0.5 * x ** 3
    else:
        exact = -1 + 1.5 * x + 1.5 * x ** 2
    assert np.allclose(d, exact, atol=1e-11)


@pytest.mark.parametrize("order,rate", [(1, 3.8), (2, 3.8), (3, 3.5), (4, 3.4)])
def test_fourth_order_convergence(order, rate):
    # coarse grids keep truncation above the 1/h^order roundoff amplification
    errs = []
    for n in (26, 51):
        g = Grid(-1.0, 1.0, n)
        f = np.sin(1.3 * g.x)
        d = derivative(f, g.h, order)
        exact = 1.3 ** order * np.sin(1.3 * g.x + order * np.pi / 2)
        m = 4  # skip the one-sided margin for composed operators
        errs.append(np.abs(d - exact)[m:-m].max())
    assert errs[0] / errs[1] >= 2 ** rate


def test_deriv_twice_matches_second_derivative():
    g = Grid(-1.5, 1.5, 301)
    f = GridFunction.from_callable(g, lambda x: np.exp(0.7 * x))
    d11 = f.deriv(1).deriv(1).values
    d2 = f.deriv(2).values
    assert np.abs(d11 - d2)[3:-3].max() < 5e-9 * np.abs(d2).max()


def test_sample_quintic_accuracy_and_underflow():
    g = Grid(0.0, 1.0, 101)
    f = GridFunction.from_callable(g, np.sin)
    xq = np.linspace(0.013, 0.987, 57)
    assert np.abs(f.sample(xq) - np.sin(xq)).max() < 1e-11
    with pytest.raises(GridUnderflow):
        f.sample(-0.2)
    with pytest.raises(GridUnderflow):
        f.sample(1.2)
    v = f.sample(np.array([-0.5, 0.5]), left=lambda x: np.cos(x))
    assert v[0] == pytest.approx(np.cos(-0.5))


def test_integrate_matches_closed_forms():
    g = Grid(0.0, 2.0, 201)
    f = GridFunction.from_callable(g, np.exp)
    assert f.integrate() == pytest.approx(np.exp(2.0) - 1.0, rel=1e-12)
    assert f.integrate(0.3, 1.7) == pytest.approx(np.exp(1.7) - np.exp(0.3), rel=1e-11)
    assert f.integrate(0.5, 0.5) == 0.0
    assert f.integrate(1.7, 0.3) == pytest.approx(-(np.exp(1.7) - np.exp(0.3)), rel=1e-11)


def test_shifted_grid_is_exact():
    g = Grid(-1.0, 1.0, 33)
    f = GridFunction.from_callable(g, lambda x: x ** 2)
    s = f.shifted_grid(0.37)
    assert s.grid.x_min == pytest.approx(-0.63)
    assert np.array_equal(s.values, f.values)


def test_arithmetic():
    g = Grid(0.0, 1.0, 17)
    a = GridFunction.constant(g, 2.0)
    b = GridFunction.from_callable(g, lambda x: x)
    c = (a + b) * 3 - 1 / a
    assert np.allclose(c.values, 3 * (2 + g.x) - 0.5)
    with pytest.raises(ValueError):
        a + GridFunction.constant(Grid(0.0, 1.0, 18), 1.0)
