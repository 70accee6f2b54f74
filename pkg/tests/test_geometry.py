import mpmath as mp
import numpy as np
import pytest

from krflab.errors import NonKahler
from krflab.geometry import (
    connection_gap_sq,
    curvature_components,
    drift_derivative,
    grad_norm_sq,
    hessian_eigensup,
    laplacian,
    metric_coeffs,
    radial_distance,
    reeb_circumference,
    ricci_scalar,
    riem_norm,
    volume_ratio,
)
from krflab.grid import Grid, GridFunction

import oracles

# analytic profiles with paired numpy / mpmath evaluators; all Kahler on [-2, 2]
PROFILES = {
    "fs": (lambda x: np.log1p(np.exp(x)), lambda x: mp.log(1 + mp.exp(x))),
    "mix": (lambda x: 0.5 * np.exp(x) + 0.01 * np.exp(0.5 * x),
            lambda x: mp.exp(x) / 2 + mp.exp(x / 2) / 100),
    "warp": (lambda x: 0.5 * np.exp(x) + 0.05 * np.log1p(np.exp(0.8 * x)),
             lambda x: mp.exp(x) / 2 + mp.log(1 + mp.exp(mp.mpf(8) / 10 * x)) / 20),
    # curvature of order one, for relative comparisons of 4-derivative ops
    "curv": (lambda x: 0.5 * np.exp(x) + 0.3 * np.log1p(np.exp(x)),
             lambda x: mp.exp(x) / 2 + mp.mpf(3) / 10 * mp.log(1 + mp.exp(x))),
}

GRID = Grid(-2.0, 2.0, 801)        # 1-2 derivative operations
GRID_CURV = Grid(-2.0, 2.0, 201)   # 3-4 derivative operations (roundoff-optimal h)


def gf(name, grid=GRID):
    return GridFunction.from_callable(grid, PROFILES[name][0])


def flat(grid=GRID):
    return GridFunction.from_callable(grid, lambda x: 0.5 * np.exp(x))


# ---------------------------------------------------------------- basics


def test_metric_coeffs_flat_and_cone():
    m = metric_coeffs(flat())
    assert np.allclose(m.a.values, 0.5 * np.exp(GRID.x), rtol=1e-9)
    assert np.allclose(m.b.values, 0.5 * np.exp(GRID.x), rtol=1e-9)
    c, gam = 0.7, 0.6
    P = GridFunction.from_callable(GRID, lambda x: c * np.exp(gam * x))
    m = metric_coeffs(P)
    assert np.allclose(m.a.values, c * gam * np.exp(gam * GRID.x), rtol=1e-8)
    assert np.allclose(m.b.values, c * gam ** 2 * np.exp(gam * GRID.x), rtol=1e-8)


def test_metric_coeffs_locates_nonkahler_region():
    g = Grid(-2.0, 5.0, 1401)
    P = GridFunction.from_callable(g, lambda x: 0.5 * np.exp(x) - 10 * x)
    with pytest.raises(NonKahler) as exc:
        metric_coeffs(P)
    bad = exc.value.nodes
    # independent bisection oracle for the sign change of P' = e^x/2 - 10
    lo, hi = -2.0, 5.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if 0.5 * np.exp(mid) - 10 < 0:
            lo = mid
        else:
            hi = mid
    xstar = 0.5 * (lo + hi)
    assert abs(xstar - np.log(20.0)) < 1e-10
    expected_bad = np.nonzero(g.x < xstar)[0]
    assert np.array_equal(bad, expected_bad)


def test_volume_ratio_trivia():
    P = gf("fs")
    assert np.all(volume_ratio(P, P, 2).values == 0.0)
    P1 = GridFunction.from_callable(GRID, np.exp)
    vr = volume_ratio(P1, flat(), 1)
    assert np.allclose(vr.values, np.log(2.0), atol=1e-9)


def test_laplacian_gaussian_identity():
    for n in (1, 2, 3):
        P = flat()
        h = P.deriv(1)
        lap = laplacian(P, h, n)
        assert np.abs(lap.values[6:-6] - n).max() < 1e-7


def test_laplacian_constant_is_zero():
    P = gf("fs")
    h = GridFunction.constant(GRID, 4.2)
    assert np.abs(laplacian(P, h, 2).values).max() < 1e-7


def test_grad_norm_gaussian():
    P = flat()
    h = GridFunction.from_callable(GRID, lambda x: 0.5 * np.exp(x))
    gn = grad_norm_sq(P, h)
    assert np.allclose(gn.values[3:-3], 0.5 * np.exp(GRID.x)[3:-3], rtol=1e-7)
    assert np.abs(grad_norm_sq(P, GridFunction.constant(GRID, 1.0)).values).max() < 1e-15


def test_drift_derivative_examples():
    g = GRID
    assert np.allclose(drift_derivative(GridFunction.from_callable(g, lambda x: x)).values, 1.0)
    f = GridFunction.from_callable(g, lambda x: 0.5 * np.exp(x))
    assert np.allclose(drift_derivative(f).values, f.values, rtol=1e-8)
    s = GridFunction.from_callable(g, np.sin)
    i0 = g.index_of(0.0)
    assert drift_derivative(s).values[i0] == pytest.approx(1.0, abs=1e-9)


def test_flat_annihilation():
    # machine-precision zero away from the one-sided edge margin
    g = Grid(-2.0, 2.0, 41)
    P = flat(g)
    assert np.abs(ricci_scalar(P, 2).values[8:-8]).max() < 1e-9
    assert np.abs(riem_norm(P, 2).values[8:-8]).max() < 1e-9
    assert np.all(volume_ratio(P, P, 2).values == 0.0)


def test_cone_ricci_flat_n1():
    g = Grid(-2.0, 2.0, 41)
    P = GridFunction.from_callable(g, lambda x: 0.5 * np.exp(0.5 * x))
    assert np.abs(ricci_scalar(P, 1).values[8:-8]).max() < 1e-9


def test_fs_constant_curvature():
    # P = log(1+e^x) is the Fubini-Study chart potential: R_omega = n(n+1)
    P = gf("fs", GRID_CURV)
    R = ricci_scalar(P, 2)
    assert np.abs(R.values[6:-6] - 6.0).max() < 5e-5
    nrm = riem_norm(P, 2)
    assert np.abs(nrm.values[6:-6] - np.sqrt(12.0)).max() < 5e-5


def test_curvature_trace_identity():
    # sum of frame components must reproduce the Laplacian of the Ricci potential
    for n in (1, 2, 3):
        P = gf("curv", GRID_CURV)
        kr, km, ks = curvature_components(P, n)
        trace = kr + 2 * (n - 1) * km + n * (n - 1) * ks
        R = ricci_scalar(P, n).values
        assert np.abs(trace - R)[6:-6].max() < 1e-4


def test_radial_distance_flat_and_cone():
    g = Grid(-12.0, 2.0, 1401)
    P = GridFunction.from_callable(g, lambda x: 0.5 * np.exp(x))
    d = radial_distance(P, -12.0, 1.0)
    assert d == pytest.approx(np.exp(0.5) - np.exp(-6.0), rel=1e-9)
    assert radial_distance(P, 0.3, 0.3) == 0.0
    c, gam = 0.55, 0.7
    Pc = GridFunction.from_callable(Grid(-1.0, 3.0, 801),
                                    lambda x: c * np.exp(gam * x))
    d = radial_distance(Pc, 0.0, 2.0)
    exact = np.sqrt(2 * c) * (np.exp(gam) - 1.0)
    assert d == pytest.approx(exact, rel=1e-8)


def test_reeb_circumference_cone_angle():
    gam = 0.7
    P = GridFunction.from_callable(GRID, lambda x: 0.5 * np.exp(gam * x))
    x0 = 0.8
    r_cone = np.sqrt(2 * 0.5) * np.exp(gam * x0 / 2)
    assert reeb_circumference(P, x0) == pytest.approx(2 * np.pi * gam * r_cone, rel=1e-8)


def test_connection_gap_vanishes_for_proportional_metrics():
    P = gf("fs", GRID_CURV)
    S = connection_gap_sq(P * 1.7, P, 2)
    assert np.abs(S.values[6:-6]).max() < 1e-12


def test_hessian_eigensup_convention():
    P = flat()
    h = GridFunction.from_callable(GRID, lambda x: 0.25 * np.exp(x))
    e = hessian_eigensup(P, h)
    assert np.allclose(e.values[3:-3], 0.5, rtol=1e-7)


def test_stored_derivatives_are_used():
    g = Grid(-2.0, 2.0, 101)
    vals = 0.5 * np.exp(g.x)
    exact = GridFunction(g, vals, derivs={1: vals, 2: vals, 3: vals})
    assert np.array_equal(exact.deriv(1).values, vals)
    assert np.array_equal(exact.deriv(2).values, vals)
    combo = exact + GridFunction(g, np.zeros(g.n))
    assert np.abs(combo.deriv(2).values - vals).max() < 1e-12
    scaled = exact * 3.0
    assert np.array_equal(scaled.deriv(3).values, 3 * vals)
    # with exact derivatives even a coarse grid annihilates flat curvature
    R = ricci_scalar(exact, 2)
    assert np.abs(R.values[4:-4]).max() < 1e-10


# ------------------------------------------------- oracle equivalence

SAMPLES = np.linspace(-1.25, 1.25, 11)
SAMPLES_CURV = np.linspace(-1.25, 0.5, 11)


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("name", ["fs", "mix"])
def test_oracle_laplacian_gradient_volume(n, name):
    np_f, mp_f = PROFILES[name]
    P = gf(name)
    h_mp = PROFILES["warp"][1]
    h = gf("warp")
    lap = laplacian(P, h, n)
    gn = grad_norm_sq(P, h)
    vr = volume_ratio(P, h, n)
    for x in SAMPLES:
        assert lap.sample(x) == pytest.approx(
            oracles.oracle_laplacian(mp_f, h_mp, n, x), rel=1e-5)
        assert gn.sample(x) == pytest.approx(
            oracles.oracle_grad_norm_sq(mp_f, h_mp, n, x), rel=1e-5)
        assert vr.sample(x) == pytest.approx(
            oracles.oracle_volume_ratio(mp_f, h_mp, n, x), rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("n", [1, 2])
def test_oracle_ricci_scalar(n):
    _, mp_f = PROFILES["curv"]
    R = ricci_scalar(gf("curv", GRID_CURV), n)
    for x in SAMPLES_CURV[::2]:
        o = oracles.oracle_ricci_scalar(mp_f, n, x)
        assert R.sample(x) == pytest.approx(o, rel=1e-5)


@pytest.mark.parametrize("n", [1, 2])
def test_oracle_riem_norm(n):
    _, mp_f = PROFILES["curv"]
    nrm = riem_norm(gf("curv", GRID_CURV), n)
    for x in SAMPLES_CURV[::2]:
        o = oracles.oracle_riem_norm(mp_f, n, x)
        assert nrm.sample(x) == pytest.approx(o, rel=1e-5)


def test_oracle_riem_norm_fs_self_check():
    # validates the oracle itself against the exact constant-curvature value
    o = oracles.oracle_riem_norm(PROFILES["fs"][1], 2, 0.4)
    assert o == pytest.approx(np.sqrt(12.0), rel=1e-10)


def test_oracle_connection_gap():
    o = oracles.oracle_christoffel_gap_sq(PROFILES["curv"][1],
                                          PROFILES["fs"][1], 2, 0.5)
    S = connection_gap_sq(gf("curv", GRID_CURV), gf("fs", GRID_CURV), 2)
    assert S.sample(0.5) == pytest.approx(o, rel=1e-5)


# ------------------------------------------------- scheme convergence


@pytest.mark.parametrize("op", ["volume_ratio", "laplacian", "grad_norm_sq"])
def test_scheme_convergence_low_order_ops(op):
    # reference at moderate h: a very fine reference would sit on its own
    # eps/h^2 roundoff floor and mask the rate
    n = 2
    np_f = PROFILES["mix"][0]
    h_f = PROFILES["warp"][0]
    fine = Grid(-2.0, 2.0, 801)
    Pf = GridFunction.from_callable(fine, np_f)
    hf = GridFunction.from_callable(fine, h_f)
    errs = []
    for nn in (81, 161):
        g = Grid(-2.0, 2.0, nn)
        P = GridFunction.from_callable(g, np_f)
        h = GridFunction.from_callable(g, h_f)
        if op == "volume_ratio":
            coarse, ref = volume_ratio(P, h, n), volume_ratio(Pf, hf, n)
        elif op == "laplacian":
            coarse, ref = laplacian(P, h, n), laplacian(Pf, hf, n)
        else:
            coarse, ref = grad_norm_sq(P, h), grad_norm_sq(Pf, hf)
        sl = slice(8, -8)
        err = coarse.values[sl] - ref.sample(g.x[sl])
        errs.append(np.sqrt(np.mean(err * err)))
    assert errs[0] / errs[1] >= 2 ** 3.8


@pytest.mark.parametrize("op", ["ricci_scalar", "riem_norm"])
def test_scheme_convergence_curvature_ops(op):
    # FS reference values are exact constants, so truncation is measured
    # directly; grids stay coarse to remain in the truncation-dominated regime
    np_f = PROFILES["fs"][0]
    exact = 6.0 if op == "ricci_scalar" else np.sqrt(12.0)
    errs = []
    for nn in (51, 101):
        g = Grid(-2.0, 2.0, nn)
        P = GridFunction.from_callable(g, np_f)
        out = ricci_scalar(P, 2) if op == "ricci_scalar" else riem_norm(P, 2)
        err = out.values[8:-8] - exact
        errs.append(np.sqrt(np.mean(err * err)))
    assert errs[0] / errs[1] >= 2 ** 3.8
