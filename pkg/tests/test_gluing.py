import numpy as np
import pytest

from krflab.cones import cone_potential, flat_quotient
from krflab.errors import NonKahler
from krflab.expander import solve_expander
from krflab.gluing import (
    GluedInitialData,
    PerturbationSpec,
    annulus_closeness,
    conical_region_closeness,
    cutoff,
    cutoff_derivative_bounds,
    find_s0,
    glue_initial,
)
from krflab.grid import Grid
from krflab.geometry import metric_coeffs

GLUE_GRID = Grid(-10.0, 2.5, 1401)


@pytest.fixture(scope="module")
def fik3():
    return solve_expander(flat_quotient(2, 3), Grid(-8.0, 9.0, 2201))


@pytest.fixture(scope="module")
def gaussian():
    return solve_expander(flat_quotient(2, 1), Grid(-6.0, 1.0, 1001))


def test_cutoff_plateaus_and_monotonicity():
    assert cutoff(0.5) == 0.0
    assert cutoff(1.0) == 0.0
    assert cutoff(2.0) == 1.0
    assert cutoff(3.0) == 1.0
    rho = np.linspace(0.0, 3.0, 601)
    vals = cutoff(rho)
    assert np.all(np.diff(vals) >= 0)
    c1, c2 = cutoff_derivative_bounds()
    assert 0 < c1 < 10 and 0 < c2 < 60


def test_perturbation_decay_functions_vanish_at_origin():
    spec = PerturbationSpec(eps0=0.05, alpha=0.5, r0=1.0)
    cone = flat_quotient(2, 3)
    r, ks = spec.decay_functions(cone, GLUE_GRID)
    for j, k in enumerate(ks):
        # k_j(r) -> 0 as r -> 0 (power-law r^alpha) and supported in r <= 2 r0
        assert k[0] < 0.5 * np.interp(0.8, r, k) + 1e-12
        assert k[0] < 0.05
        assert np.all(k[r > 2.2] == 0.0)   # FD stencils leak a few nodes
    with pytest.raises(ValueError):
        PerturbationSpec(alpha=-1.0)


def test_gaussian_self_gluing_kahler_for_all_s(gaussian):
    spec = PerturbationSpec(eps0=0.0, alpha=0.5)
    for s in (0.3, 1e-2, 1e-4):
        d = glue_initial(gaussian, spec, s, grid=Grid(-12.0, 1.2, 1501))
        assert np.abs(d.P0.values - 0.5 * np.exp(d.P0.grid.x)).max() < 1e-8
        rep = annulus_closeness(d)
        # pure u_E(s) contribution vanishes for the Gaussian
        assert rep.constants["sup_k0"] < 1e-8


def test_region_identities_bitwise(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    s = 1e-4
    d = glue_initial(fik3, spec, s, grid=GLUE_GRID)
    g = d.P0.grid
    cone = fik3.cone
    r = np.sqrt(cone.r_squared(g.x))
    from krflab.gluing import self_similar_on
    pes = self_similar_on(fik3, s, g)
    pc = cone_potential(cone, g)
    u1 = spec.values(cone, g.x)
    inner = r <= s ** 0.25
    outer = r >= 2 * s ** 0.25
    assert np.array_equal(d.P0.values[inner], pes.values[inner])
    assert np.array_equal(d.P0.values[outer], (pc.values + u1)[outer])
    assert np.all(d.phi0.values[inner] == 0.0)


def test_glued_is_kahler_baseline(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    d = glue_initial(fik3, spec, 1e-4, grid=GLUE_GRID)
    m = metric_coeffs(d.P0)
    assert m.kahler
    rep = annulus_closeness(d)
    assert all(np.isfinite(v) for v in rep.constants.values())


def test_annulus_closeness_monotone_in_s(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    sups = []
    for s in (1e-2, 1e-3, 1e-4):
        d = glue_initial(fik3, spec, s, grid=GLUE_GRID)
        sups.append(annulus_closeness(d).constants["sup_k0"])
    assert sups[0] > sups[1] > sups[2]


def test_nonkahler_raised_above_threshold(fik3):
    # the baseline perturbation itself admits a genuine positivity threshold:
    # large s pushes the gluing annulus into the region where the u_E(s)
    # correction breaks positivity, exactly the s_0 mechanism
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    with pytest.raises(NonKahler):
        glue_initial(fik3, spec, 0.5, grid=GLUE_GRID)
    s0 = find_s0(fik3, spec, grid=GLUE_GRID, s_hi=0.5, s_lo=1e-4, bisections=28)
    assert 1e-4 < s0 < 0.5
    glue_initial(fik3, spec, s0 * 0.98, grid=GLUE_GRID)
    with pytest.raises(NonKahler):
        glue_initial(fik3, spec, min(s0 * 1.2, 0.5), grid=GLUE_GRID)


def test_find_s0_returns_high_end_when_all_kahler(gaussian):
    spec = PerturbationSpec(eps0=0.0, alpha=0.5)
    s0 = find_s0(gaussian, spec, grid=Grid(-12.0, 1.2, 1501), s_hi=0.2)
    assert s0 == 0.2


def test_find_s0_baseline_positive(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    s0 = find_s0(fik3, spec, grid=GLUE_GRID, s_hi=1.0, bisections=20)
    assert s0 > 0.05


def test_annulus_resolution_guard(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    with pytest.raises(ValueError):
        glue_initial(fik3, spec, 1e-4, grid=Grid(-10.0, 2.5, 101))


def test_conical_region_closeness_stable_across_s(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    a_consts = []
    for s in (1e-3, 1e-4):
        d = glue_initial(fik3, spec, s, grid=GLUE_GRID)
        rep = conical_region_closeness(d, R=1.0)
        a_consts.append([rep.constants[f"A{k}"] for k in (0, 1, 2)])
    for k in range(3):
        lo, hi = sorted((a_consts[0][k], a_consts[1][k]))
        assert hi <= 3.0 * lo + 1e-12
