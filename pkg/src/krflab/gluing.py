"""Glued initial Kahler potentials at approximation scale s.

The glued data interpolates between the rescaled expander near the singular
point and the cone plus a compactly supported perturbation u_1 outside:

    P_{s,0} = P_{E,s} + chi(r / s^{1/4}) (u_1 - u_E(s)),

with r the intrinsic cone radius, P_{E,s} the self-similar expander
potential at time s and u_E(s) = s Phi_s^* u_E. On {r <= s^{1/4}} the data
equals P_{E,s} and on {r >= 2 s^{1/4}} it equals P_C + u_1; the plateau
values are copied verbatim from the constituent arrays so the region
identities hold bitwise.

The admissible-perturbation family is u_1 = eps0 r^{2+alpha} eta(r/r_0)
with eta an outer cutoff, making the decay functions k_j(r) measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonKahler
from .expander import ExpanderProfile, self_similar
from .geometry import frame_derivative, hessian_eigensup, metric_coeffs
from .cones import cone_potential
from .grid import Grid, GridFunction
from .reports import EstimateReport


def cutoff(rho):
    """Increasing C-infinity transition: 0 on [0,1], 1 on [2,inf).

    chi = phi(rho-1) / (phi(rho-1) + phi(2-rho)) with phi(s) = exp(-1/s)_+;
    all derivatives are bounded, so the scaled bounds |grad^j chi(r/s^{1/4})|
    <= C_j s^{j/4} hold with grid-measured C_j.
    """
    rho = np.asarray(rho, dtype=float)
    scalar = rho.ndim == 0
    rho = np.atleast_1d(rho)

    def phi(s):
        out = np.zeros_like(s)
        pos = s > 1e-12
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a = phi(rho - 1.0)
    b = phi(2.0 - rho)
    out = np.where(rho <= 1.0, 0.0, np.where(rho >= 2.0, 1.0, a / (a + b + 1e-300)))
    return float(out[0]) if scalar else out


def cutoff_derivative_bounds(samples=20001):
    """Grid maxima of |chi'| and |chi''| over the transition interval."""
    g = Grid(0.5, 2.5, samples)
    chi = GridFunction.from_callable(g, cutoff)
    return (float(np.abs(chi.deriv(1).values).max()),
            float(np.abs(chi.deriv(2).values).max()))


@dataclass(frozen=True)
class PerturbationSpec:
    """u_1 = eps0 r^{2+alpha} eta(r/r_0): power-law with outer cutoff."""

    eps0: float = 0.05
    alpha: float = 0.5
    r0: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("decay exponent alpha must be positive")
        if self.r0 <= 0:
            raise ValueError("outer cutoff radius must be positive")

    def values(self, cone, x):
        """u_1 on the cone at chart coordinate x (intrinsic r^2 = 2 P_C)."""
        r = np.sqrt(cone.r_squared(x))
        eta = 1.0 - cutoff(r / self.r0)
        return self.eps0 * r ** (2.0 + self.alpha) * eta

    def rescaled_values(self, cone, x, s):
        """u_1(s) = (1/s) Phi_{1/s}^* u_1, i.e. (1/s) u_1(x + kappa log s)."""
        return self.values(cone, x + cone.kappa * math.log(s)) / s

    def decay_functions(self, cone, grid, j_max=4):
        """Measured k_j(r): r^{j-2} |grad^j u_1| against g_C, j <= j_max.

        j = 0 uses |u_1| itself, j = 1 the real gradient, j >= 2 repeated
        radial frame derivatives (the artifact's norm convention).
        Returns (r, [k_0, ..., k_jmax]) arrays on the grid interior.
        """
        pc = cone_potential(cone, grid)
        u = GridFunction(grid, self.values(cone, grid.x))
        r = np.sqrt(cone.r_squared(grid.x))
        sl = slice(8, -8)
        ks = [np.abs(u.values) / r ** 2]
        grad = np.sqrt(2.0 * (u.deriv(1).values ** 2)
                       / metric_coeffs(pc).b.values)
        ks.append(grad / r)
        for j in range(2, j_max + 1):
            ks.append(np.abs(frame_derivative(pc, u, j).values) * r ** (j - 2))
        return r[sl], [k[sl] for k in ks]


@dataclass
class GluedInitialData:
    """P_{s,0} on a grid, with the unnormalised perturbation phi_s(0)."""

    P0: GridFunction
    phi0: GridFunction            # P0 - P_{E,s} (= chi (u_1 - u_E(s)))
    s: float
    expander: ExpanderProfile
    pert: PerturbationSpec
    annulus: tuple                # (x_lo, x_hi) of [s^{1/4}, 2 s^{1/4}]
    s0_bound: float | None = None
    reports: list = field(default_factory=list)


def _constituents(e: ExpanderProfile, pert: PerturbationSpec, s, grid):
    cone = e.cone
    kappa = cone.kappa
    y = grid.x - kappa * math.log(s)
    pes = self_similar_on(e, s, grid)
    ue_s = GridFunction(
        grid,
        s * (e.P_deriv_at(y, 0) - cone.potential(y)),
        {j: s * (e.P_deriv_at(y, j) - cone.gamma ** j * cone.potential(y))
         for j in (1, 2)})
    u1 = GridFunction(grid, pert.values(cone, grid.x))
    return pes, ue_s, u1


def self_similar_on(e: ExpanderProfile, t, grid: Grid) -> GridFunction:
    """self_similar evaluated on an arbitrary grid (with extensions)."""
    y = grid.x - e.kappa * math.log(t)
    vals = t * e.P_deriv_at(y, 0)
    derivs = {j: t * e.P_deriv_at(y, j) for j in (1, 2, 3, 4)}
    return GridFunction(grid, vals, derivs)


def glue_initial(e: ExpanderProfile, pert: PerturbationSpec, s,
                 grid: Grid | None = None, min_annulus_nodes=32) -> GluedInitialData:
    """Build P_{s,0} on the grid; raises NonKahler when s is too large."""
    if not 0 < s <= 1:
        raise ValueError("approximation scale s must lie in (0, 1]")
    cone = e.cone
    if grid is None:
        grid = e.grid
    r = np.sqrt(cone.r_squared(grid.x))
    s14 = s ** 0.25
    x_lo = cone.x_of_r_squared(s ** 0.5)
    x_hi = cone.x_of_r_squared(4.0 * s ** 0.5)
    n_annulus = int(np.sum((grid.x >= x_lo) & (grid.x <= x_hi)))
    if not (grid.x_min < x_lo and x_hi < grid.x_max):
        raise ValueError("grid does not contain the gluing annulus")
    if n_annulus < min_annulus_nodes:
        raise ValueError(
            f"annulus resolved by {n_annulus} nodes < {min_annulus_nodes}")
    pes, ue_s, u1 = _constituents(e, pert, s, grid)
    chi = cutoff(r / s14)
    corr = (u1 - ue_s) * GridFunction(grid, chi)
    P0 = pes + corr
    # plateau values verbatim from the constituents (exact region identities)
    pc = cone_potential(cone, grid)
    inner = chi == 0.0
    outer = chi == 1.0
    vals = P0.values.copy()
    vals[inner] = pes.values[inner]
    vals[outer] = (pc.values + u1.values)[outer]
    P0 = GridFunction(grid, vals, P0.derivs)
    metric_coeffs(P0)   # NonKahler raised here mirrors the s_0 threshold
    phi0 = GridFunction(grid, np.where(inner, 0.0, P0.values - pes.values))
    return GluedInitialData(P0=P0, phi0=phi0, s=s, expander=e, pert=pert,
                            annulus=(x_lo, x_hi))


def annulus_closeness(d: GluedInitialData, k_max=2) -> EstimateReport:
    """sup_{annulus} r^k |grad^k (g_{s,0} - g_C)|_{g_C} for k <= k_max.

    Verified against C_k (sum_{j<=k+2} k_j(2 s^{1/4}) + s^{1/4}); the
    measured C_k are returned. Derivatives use the radial frame convention.
    """
    if k_max > 2:
        raise ValueError("annulus closeness is defined for k <= 2")
    grid = d.P0.grid
    cone = d.expander.cone
    pc = cone_potential(cone, grid)
    mc = metric_coeffs(pc)
    m0 = metric_coeffs(d.P0)
    x_lo, x_hi = d.annulus
    mask = (grid.x >= x_lo) & (grid.x <= x_hi)
    r2 = cone.r_squared(grid.x)
    la = GridFunction(grid, m0.a.values / mc.a.values - 1.0)
    lb = GridFunction(grid, m0.b.values / mc.b.values - 1.0)

    # right-hand budget from the measured decay functions at r = 2 s^{1/4}
    rr, ks = d.pert.decay_functions(cone, grid)
    r_eval = 2.0 * d.s ** 0.25
    kj_at = [float(np.interp(r_eval, rr, k)) for k in ks]

    sups = {}
    consts = {}
    for k in range(k_max + 1):
        if k == 0:
            dev = np.maximum(np.abs(la.values), np.abs(lb.values))
        else:
            dev = np.maximum(np.abs(frame_derivative(pc, la, k).values),
                             np.abs(frame_derivative(pc, lb, k).values))
        lhs = float(np.max(dev[mask] * r2[mask] ** (k / 2.0)))
        rhs = sum(kj_at[: k + 3]) + d.s ** 0.25
        sups[f"sup_k{k}"] = lhs
        consts[f"C{k}"] = lhs / rhs
    return EstimateReport(
        name="annulus_closeness",
        constants={**sups, **consts, "s": d.s},
        notes="metric deviation in eigenvalue form; radial frame derivatives")


def conical_region_closeness(d: GluedInitialData, R) -> EstimateReport:
    """A_k in |grad^k (g_{s,0} - g_C)| <= A_k r^{-k} on {sqrt(s) <= r^2 <= R^2}."""
    grid = d.P0.grid
    cone = d.expander.cone
    pc = cone_potential(cone, grid)
    mc = metric_coeffs(pc)
    m0 = metric_coeffs(d.P0)
    r2 = cone.r_squared(grid.x)
    mask = (r2 >= math.sqrt(d.s)) & (r2 <= R * R)
    mask[:8] = False
    mask[-8:] = False
    if not mask.any():
        raise ValueError("conical region not on the grid")
    la = GridFunction(grid, m0.a.values / mc.a.values - 1.0)
    lb = GridFunction(grid, m0.b.values / mc.b.values - 1.0)
    consts = {}
    for k in (0, 1, 2):
        if k == 0:
            dev = np.maximum(np.abs(la.values), np.abs(lb.values))
        else:
            dev = np.maximum(np.abs(frame_derivative(pc, la, k).values),
                             np.abs(frame_derivative(pc, lb, k).values))
        consts[f"A{k}"] = float(np.max(dev[mask] * r2[mask] ** (k / 2.0)))
    return EstimateReport(name="conical_region_closeness",
                          constants={**consts, "s": d.s, "R": R})


def find_s0(e: ExpanderProfile, pert: PerturbationSpec, grid: Grid | None = None,
            s_hi=1.0, s_lo=1e-6, bisections=40) -> float:
    """Largest validated s with a Kahler gluing (mirrors the s_0 threshold).

    If even s_hi glues positively, s_hi is returned as the validated bound;
    otherwise the Kahler/non-Kahler boundary is bisected in log s.
    """
    def ok(s):
        try:
            glue_initial(e, pert, s, grid=grid)
            return True
        except NonKahler:
            return False

    if ok(s_hi):
        return s_hi
    if not ok(s_lo):
        raise NonKahler(f"gluing non-Kahler even at s = {s_lo}")
    lo, hi = math.log(s_lo), math.log(s_hi)
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if ok(math.exp(mid)):
            lo = mid
        else:
            hi = mid
    return math.exp(lo)
