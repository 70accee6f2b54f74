"""Limit diagnostics: s-refinement, initial-data convergence, tangent flow, GH probes.

The drift-gauge state at tau is exactly the parabolic rescaling of the flow
metric at t = s(e^tau - 1) by 1/(t+s) (the gauge maps are grid shifts), so

* the tangent-flow probe compares g_psi(tau(t)) against g_E directly on the
  fixed window {r^2 <= lambda_0}: no diffeomorphism search, matching the
  fact that the Cheeger-Gromov maps are the flow translations;
* the unnormalised metric at time t lives on the grid shifted by
  kappa log(t+s) with potential (t+s) [P_E + psi], again exactly.

Metric closeness is always measured through the two eigenvalue coefficient
functions (a, b) = (P', P''): |g1 - g2|_{g2} = max(|a1/a2 - 1|, |b1/b2 - 1|)
pointwise, with radial frame derivatives for j >= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import WindowError
from .flow import DRIFT, FlowRun, reference_on
from .grid import Grid, GridFunction
from .reports import EstimateReport


@dataclass(frozen=True)
class TangentProbe:
    """Dyadic probe times and comparison window for the tangent-flow check."""

    t_sequence: tuple
    lam0: float
    j_max: int = 1

    def __post_init__(self):
        ts = tuple(self.t_sequence)
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ValueError("probe times must decrease")
        if self.j_max > 2:
            raise ValueError("tangent probe supports j <= 2")


def psi_at_tau(run: FlowRun, tau: float) -> GridFunction:
    """Snapshot perturbation at tau, linearly interpolated between snapshots."""
    times = run.times
    if tau < times[0] - 1e-12 or tau > times[-1] + 1e-12:
        raise ValueError(f"tau = {tau:.4f} outside the stored range "
                         f"[{times[0]:.4f}, {times[-1]:.4f}]")
    i = int(np.searchsorted(times, tau))
    if i == 0:
        return run.states[0].psi
    if i >= len(times):
        return run.states[-1].psi
    t0, t1 = times[i - 1], times[i]
    w = 0.0 if t1 == t0 else (tau - t0) / (t1 - t0)
    v = (1 - w) * run.states[i - 1].psi.values + w * run.states[i].psi.values
    return GridFunction(run.states[0].grid, v)


def unnormalised_potential(run: FlowRun, t: float) -> GridFunction:
    """Potential of g_s(t) on the correspondingly shifted grid (exact).

    P_s(x, t) = (t+s) [P_E + psi(tau)](x - kappa log(t+s)),
    tau = log(1 + t/s).
    """
    st0 = run.states[0]
    s = st0.params.s
    if st0.gauge != DRIFT:
        raise ValueError("expected a drift-gauge run")
    tau = math.log1p(t / s)
    psi = psi_at_tau(run, tau)
    e = st0.expander
    total = reference_on(e, st0.grid) + psi
    scale = t + s
    shifted = total.shifted_grid(e.kappa * math.log(scale))
    return shifted * scale


def _coeff_funs(P: GridFunction):
    a = GridFunction(P.grid, P.deriv_values(1))
    b = GridFunction(P.grid, P.deriv_values(2))
    return a, b


def metric_sup_distance(P1: GridFunction, P2: GridFunction, xq, j=0,
                        frame_ref: GridFunction | None = None):
    """sup over xq of the j-th radial frame derivative of |g1 - g2|_{g2}.

    j = 0 compares the eigenvalue ratios; j >= 1 applies the radial frame
    derivative sqrt(2/P2'') d_x (of the reference) to the relative
    deviation functions before taking the sup. The deviations are sampled
    onto a uniform working grid spanning xq, so the two potentials may
    live on different (shifted) grids.
    """
    xq = np.asarray(xq, dtype=float)
    work = Grid(xq[0], xq[-1], max(len(xq), 64))
    a1, b1 = _coeff_funs(P1)
    a2, b2 = _coeff_funs(P2)
    da = GridFunction(work, a1.sample(work.x) / a2.sample(work.x) - 1.0)
    db = GridFunction(work, b1.sample(work.x) / b2.sample(work.x) - 1.0)
    ref = frame_ref if frame_ref is not None else P2
    ref_b = GridFunction(ref.grid, ref.deriv_values(2))
    scale = np.sqrt(2.0 / ref_b.sample(work.x))
    for _ in range(j):
        da = GridFunction(work, scale * da.deriv_values(1))
        db = GridFunction(work, scale * db.deriv_values(1))
    va = np.abs(da.sample(xq))
    vb = np.abs(db.sample(xq))
    return float(np.max(np.maximum(va, vb)))


def s_refinement(runs: list, t_probe: float, delta: float) -> EstimateReport:
    """Cauchy distances |g_{s_i}(t0) - g_{s_{i+1}}(t0)| on {r >= delta}.

    `runs` is a list of drift-gauge FlowRuns at decreasing s. Successive
    sup-distances on the common window should decrease geometrically
    (the uniqueness shadow); the measured ratios are reported.
    """
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    pots = [unnormalised_potential(r, t_probe) for r in runs]
    cone = runs[0].states[0].expander.cone
    x_lo = cone.x_of_r_squared(delta * delta)
    x_hi = min(p.grid.x_max for p in pots) - 0.3
    xq = np.linspace(x_lo, x_hi, 257)
    dists = []
    for pa, pb in zip(pots, pots[1:]):
        a1, b1 = _coeff_funs(pa)
        a2, b2 = _coeff_funs(pb)
        va = np.abs(a1.sample(xq) / a2.sample(xq) - 1.0)
        vb = np.abs(b1.sample(xq) / b2.sample(xq) - 1.0)
        dists.append(float(np.max(np.maximum(va, vb))))
    ratios = [dists[i] / dists[i + 1] for i in range(len(dists) - 1)
              if dists[i + 1] > 0]
    s_vals = [r.states[0].params.s for r in runs]
    return EstimateReport(
        name="s_refinement_cauchy",
        constants={"s_list": s_vals, "t_probe": t_probe,
                   "distances": dists, "ratios": ratios,
                   "min_ratio": min(ratios) if ratios else float("inf")},
        worst_violation=(min(ratios) - 2.0) if ratios else 0.0,
        tolerance=0.0,
        notes="sup eigen-distance on {r >= delta}; ratio >= 2 per s-step passes")


def initial_convergence(run: FlowRun, delta: float, k: int = 0,
                        t_max: float | None = None) -> EstimateReport:
    """Fit |g(t) - g_0|_{C^k(g_0)} <= a + b t on {r >= delta}.

    g_0 is the run's own initial metric; the intercept a measures the
    distance-at-0 (zero by construction here, at scheme level) and b the
    linear drift rate, growing with k and as delta^-2 (curvature decay).
    """
    st0 = run.states[0]
    s = st0.params.s
    cone = st0.expander.cone
    P0 = unnormalised_potential(run, 0.0)
    x_lo = cone.x_of_r_squared(delta * delta)
    x_hi = P0.grid.x_max - 0.3
    xq = np.linspace(x_lo, x_hi, 257)
    taus = run.times
    ts = s * np.expm1(taus)
    if t_max is not None:
        ts = ts[ts <= t_max]
    ts = ts[1:]
    dists = []
    for t in ts:
        Pt = unnormalised_potential(run, float(t))
        dists.append(metric_sup_distance(Pt, P0, xq, j=k, frame_ref=P0))
    A = np.column_stack([np.ones_like(ts), ts])
    coef, *_ = np.linalg.lstsq(A, np.array(dists), rcond=None)
    a_fit, b_fit = float(coef[0]), float(coef[1])
    return EstimateReport(
        name=f"initial_convergence_k{k}",
        constants={"a_intercept": a_fit, "b_rate": b_fit, "delta": delta,
                   "n_times": len(ts)},
        worst_violation=-abs(min(a_fit, 0.0)),
        notes="linear fit of sup-distance to the initial data on {r >= delta}")


def tangent_flow(run: FlowRun, probe: TangentProbe) -> EstimateReport:
    """Distances of the parabolically rescaled flow to the expander.

    dist_j(t) = sup_{r^2 <= lam0} |frame^j (g_psi(tau(t)) - g_E)|_{g_E},
    tau(t) = log(1 + t/s). Convergence verdict: each halving of t reduces
    dist by >= 1.5x until the discretization floor, for all j <= j_max.
    """
    st0 = run.states[0]
    s = st0.params.s
    p = st0.params
    t_cap = min(p.R ** 2 / (2 * p.lam), p.R ** 2 / probe.lam0)
    for t in probe.t_sequence:
        if t > t_cap:
            raise WindowError(
                f"probe time {t} violates t <= min(R^2/(2 lambda), "
                f"R^2/lambda_0) = {t_cap:.4g}")
    e = st0.expander
    grid = st0.grid
    ref = reference_on(e, grid)
    cone = e.cone
    x_hi = cone.x_of_r_squared(probe.lam0)
    window = (grid.x >= grid.x_min + 0.3) & (grid.x <= x_hi)
    ref1 = ref.deriv_values(1)
    ref2 = ref.deriv_values(2)
    frame = np.sqrt(2.0 / ref2)
    h = grid.h
    eps = np.finfo(float).eps
    dists = {}
    for t in probe.t_sequence:
        tau = math.log1p(t / s)
        psi = psi_at_tau(run, tau)
        # per-node resolvability floor: FD noise of psi'' against P_E''
        loc = np.abs(psi.values)
        sloc = np.maximum.reduce([np.roll(loc, k) for k in range(-6, 7)])
        noise_b = eps * sloc * 25.0 / h ** 2 / ref2
        da = psi.deriv_values(1) / ref1
        db = psi.deriv_values(2) / ref2
        da = np.where(np.abs(da) > 10 * noise_b, da, 0.0)
        db = np.where(np.abs(db) > 10 * noise_b, db, 0.0)
        dev = {0: (da, db)}
        ga, gb = da, db
        for j in range(1, probe.j_max + 1):
            ga = frame * GridFunction(grid, ga).deriv_values(1)
            gb = frame * GridFunction(grid, gb).deriv_values(1)
            dev[j] = (ga, gb)
        for j in range(probe.j_max + 1):
            a, b = dev[j]
            val = float(np.max(np.maximum(np.abs(a[window]), np.abs(b[window]))))
            dists.setdefault(j, []).append(val)
    floor = 1e-13
    verdicts = {}
    levels = {}
    for j, ds in dists.items():
        # longest streak of >= 1.5x decrease per halving above the floor;
        # the decay accelerates toward t -> 0, so the streak need not
        # start at the largest probe time
        good = 0
        streak = 0
        for d0, d1 in zip(ds, ds[1:]):
            if d1 <= floor or d0 <= floor:
                break
            if d0 / d1 >= 1.5:
                streak += 1
                good = max(good, streak)
            else:
                streak = 0
        verdicts[j] = good
        levels[j] = ds
    min_levels = min(verdicts.values())
    return EstimateReport(
        name="tangent_flow",
        constants={"t_sequence": list(probe.t_sequence), "lam0": probe.lam0,
                   **{f"dist_j{j}": levels[j] for j in levels},
                   **{f"levels_j{j}": verdicts[j] for j in verdicts},
                   "min_levels": min_levels},
        worst_violation=float(min_levels - 3),
        tolerance=0.0,
        notes="distance halving-levels >= 3 before the floor passes")


def gh_probes(run: FlowRun, delta1: float, t: float,
              delta2: float | None = None) -> EstimateReport:
    """Diameter of {r^2 <= delta1} under g(t) and resolution distortion.

    Diameter proxy: 2 x radial distance from the inner edge plus the
    largest Reeb circumference in the region. Distortion: sup over node
    pairs on {r^2 >= delta2} of |d_{g_0}(x1,x2) - d_{g(t)}(x1,x2)| using
    radial distances (d_Y restricted to the resolved rays).
    """
    st0 = run.states[0]
    cone = st0.expander.cone
    if delta2 is None:
        delta2 = 4.0 * delta1
    Pt = unnormalised_potential(run, t)
    P0 = unnormalised_potential(run, 0.0)
    g = Pt.grid
    x1 = cone.x_of_r_squared(delta1)
    b = GridFunction(g, Pt.deriv_values(2))
    ds = GridFunction(g, np.sqrt(0.5 * b.values))
    radial = ds.integrate(g.x_min, x1)
    mask = g.x <= x1
    circ = float(np.max(2 * np.pi * np.sqrt(2.0 * b.values[mask])))
    diam = 2.0 * radial + circ

    x2 = cone.x_of_r_squared(delta2)
    xs = np.linspace(x2, g.x_max - 0.3, 9)
    b0 = GridFunction(g, np.sqrt(0.5 * P0.deriv_values(2)))
    bt = ds
    worst = 0.0
    for i in range(len(xs)):
        for j in range(i + 1, len(xs)):
            d0 = b0.integrate(xs[i], xs[j])
            dt_ = bt.integrate(xs[i], xs[j])
            worst = max(worst, abs(d0 - dt_))
    return EstimateReport(
        name="gh_probes",
        constants={"diameter": diam, "delta1": delta1, "t": t,
                   "distortion": worst, "delta2": delta2},
        notes="diameter = 2 radial + max circumference; distortion on radial pairs")
