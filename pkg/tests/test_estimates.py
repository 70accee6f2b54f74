import numpy as np
import pytest

from krflab.cones import flat_quotient
from krflab.estimates import (
    barrier,
    bochner_check,
    c2_monitor,
    c3_interp_monitors,
    curvature_ledger,
    diagnostics,
    fpsi_ledger,
    full_ledger,
    hamiltonian_identity,
    max_principle_shadow,
    potential_bounds,
    run_diagnostics,
)
from krflab.expander import solve_expander
from krflab.flow import FlowRun, FlowState, RegionParams, DRIFT, initial_drift_state, run_flow
from krflab.gluing import PerturbationSpec
from krflab.grid import Grid, GridFunction

FLOW_GRID = Grid(-6.0, 8.5, 1451)


@pytest.fixture(scope="module")
def fik3():
    return solve_expander(flat_quotient(2, 3), Grid(-8.0, 9.0, 2201))


@pytest.fixture(scope="module")
def zero_run(fik3):
    st = FlowState(gauge=DRIFT, time=0.0,
                   psi=GridFunction(FLOW_GRID, np.zeros(FLOW_GRID.n)),
                   params=RegionParams(s=1e-3, R=0.4, lam=4.0), expander=fik3)
    return run_flow(st, 0.3, dt=0.05)


@pytest.fixture(scope="module")
def glued_run(fik3):
    spec = PerturbationSpec(eps0=0.05, alpha=0.5)
    st = initial_drift_state(fik3, spec, s=1e-3, R=0.4, lam=4.0, grid=FLOW_GRID)
    hor = st.params.horizon()
    return run_flow(st, hor / 2, dt=0.02, snap_every=2)


def test_zero_run_reduces_to_soliton_identities(fik3, zero_run):
    reps = {r.name: r for r in fpsi_ledger(zero_run)}
    # f_psi = f: residual at solver level, nonnegativity with floor epsilon
    assert reps["fpsi_evolution_residual"].constants["sup_residual"] < 1e-7
    assert reps["fpsi_nonnegative"].constants["min_fpsi"] > 1.0
    # gradient bound reduces to |grad f|^2 = 2(f - R - n) <= 2f: Psi-hat <= 0
    assert reps["fpsi_gradient_bound"].constants["Psi_hat_grad"] <= 1e-10
    assert reps["mutual_control"].constants["D"] == pytest.approx(1.0, abs=1e-12)


def test_zero_run_psi_bounds_and_c2(zero_run):
    rep = potential_bounds(zero_run)[0]
    assert rep.constants["Psi_hat"] == 0.0
    c2 = c2_monitor(zero_run)
    assert c2.constants["C"] == pytest.approx(1.0, abs=1e-14)
    # trace of the identity is n
    assert c2.constants["max_trace"] == pytest.approx(2.0, abs=1e-12)


def test_zero_run_barrier_reduces_to_trace(zero_run):
    rep = barrier(zero_run, D_measured=1.0)
    # Theta == 0 and the inequality reduces to 0 >= (n - C)/(4(f+1)): C = n
    assert rep.constants["sup_theta"] < 1e-14
    assert rep.constants["C_measured"] == pytest.approx(2.0, abs=1e-6)
    assert rep.passed


def test_constant_shift_leaves_fpsi_and_D(fik3, zero_run):
    st0 = zero_run.states[0]
    stc = FlowState(gauge=DRIFT, time=0.0,
                    psi=GridFunction(FLOW_GRID, np.full(FLOW_GRID.n, 0.3)),
                    params=st0.params, expander=fik3)
    d0 = diagnostics(st0)
    dc = diagnostics(stc)
    assert np.allclose(dc.f_psi, d0.f_psi, atol=1e-10)
    assert np.allclose(dc.lam_a[8:-8], d0.lam_a[8:-8], atol=1e-12)


def test_zero_run_c3_and_curvature(fik3, zero_run):
    reps = {r.name: r for r in c3_interp_monitors(zero_run)}
    assert reps["c3_christoffel"].constants["sup_(f+1)S"] < 1e-12
    assert reps["interp_ddbar_psi"].constants["sup_eigensup"] < 1e-12
    curv = {r.name: r for r in curvature_ledger(zero_run)}
    # psi == 0: (f+1)|Rm| equals the frozen expander's value on the region
    e = fik3
    w = (e.f.values + 1) * e.riem().values
    grid_mask = (np.exp(e.grid.x) <= 4.0) & (e.grid.x > -7.9)
    expected = w[grid_mask].max()
    assert curv["curvature_budget"].constants["sup_(f+1)Rm"] == pytest.approx(
        expected, rel=1e-3)
    # C/t monitor: t/(t+s) max|Rm| bounded by max|Rm(g_E)|
    assert curv["curvature_c_over_t"].constants["C_M"] <= e.riem().values.max() * 1.01


def test_pure_scaling_connection_gap(fik3):
    # psi = c P_E: proportional metrics share the connection
    from krflab.estimates import perturbed_connection_gap_sq
    from krflab.flow import reference_on

    ref = reference_on(fik3, FLOW_GRID)
    S = perturbed_connection_gap_sq(ref, ref * 0.2, 2)
    assert np.abs(S[8:-8]).max() < 1e-12


def test_glued_run_ledger(glued_run):
    reps = {r.name: r for r in fpsi_ledger(glued_run)}
    assert reps["fpsi_nonnegative"].constants["min_fpsi"] >= -1e-8
    assert reps["fpsi_gradient_bound"].constants["Psi_hat_grad"] < 1.0
    D = reps["mutual_control"].constants["D"]
    assert 1.0 <= D < 10.0
    pb = potential_bounds(glued_run)[0]
    assert pb.constants["Psi_hat"] < 1.0
    c2 = c2_monitor(glued_run)
    assert c2.constants["C"] <= 3.0
    bar = barrier(glued_run, D)
    assert np.isfinite(bar.constants["C_measured"])
    assert bar.passed


def test_glued_run_curvature_budget(glued_run, fik3):
    curv = {r.name: r for r in curvature_ledger(glued_run)}
    assert np.isfinite(curv["curvature_budget"].constants["sup_(f+1)Rm"])
    assert curv["curvature_budget"].constants["sup_(f+1)Rm"] < 100.0
    assert curv["curvature_c_over_t"].constants["C_M"] > 0


def test_bochner_and_hamiltonian(glued_run):
    b = bochner_check(glued_run)
    # nonpositivity up to the snapshot-differencing floor: the series
    # carries per-step solver noise that the tau-derivative divides by
    # the snapshot spacing, so the tolerance is pinned 10 (dtau + h^4)
    dtau = glued_run.times[1] - glued_run.times[0]
    h4 = glued_run.states[0].grid.h ** 4
    assert b.constants["max_lhs"] <= 10 * (dtau + h4) * max(
        1.0, b.constants["scale"])
    h = hamiltonian_identity(glued_run)
    assert h.constants["sup_relative_residual"] < 1e-4
    assert h.constants["JX_psi"] == 0.0


def test_max_principle_shadow(glued_run):
    diags = run_diagnostics(glued_run)
    rep = max_principle_shadow(glued_run, [-d.f_psi for d in diags],
                               A=1.0, B=0.0, diags=diags)
    assert rep.passed
    assert rep.constants["u_max"] <= max(rep.constants["C_boundary"], 0.0) + 1e-6


def test_full_ledger_names(glued_run):
    reps = full_ledger(glued_run)
    names = [r.name for r in reps]
    for expected in ("fpsi_evolution_residual", "fpsi_nonnegative",
                     "fpsi_gradient_bound", "mutual_control",
                     "potential_bounds", "barrier", "c2_equivalence",
                     "c3_christoffel", "interp_ddbar_psi", "curvature_budget",
                     "curvature_c_over_t", "bochner_consistency",
                     "hamiltonian_identity", "max_principle_shadow"):
        assert expected in names
