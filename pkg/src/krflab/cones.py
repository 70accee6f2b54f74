"""Admissible U(n)-invariant Kahler cones and their Ricci potentials.

Two families are configured:

* ``flat-quotient(k)``: C^n / Z_k with the flat profile P = e^x/2. The
  quotient order k enters only through the link volume, admissibility and
  the expander's zero-section closure, never through the radial profile.
* ``cone-angle(gamma)``: profile P = c e^{gamma x}, 0 < gamma <= 1. In the
  chart coordinate x = log(coordinate radius)^2 the cone's intrinsic radius
  is r^2 = 2 P(x) and its radial field is r d_r = (2/gamma) d_x, so the
  soliton-field coefficient kappa = 1/gamma multiplies every drift term.

The smooth-canonical-model predicate is a configured table (k > n for flat
quotients; any angle deficit for n = 1), an explicit stand-in flagged as
such in reports: there is no computable criterion for general cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnknownModel
from .geometry import grad_norm_sq, hessian_eigensup, laplacian, ricci_scalar
from .grid import Grid, GridFunction
from .reports import EstimateReport

FLAT_QUOTIENT = "flat-quotient"
CONE_ANGLE = "cone-angle"


def sphere_volume(n):
    """Volume of the unit sphere S^{2n-1}."""
    return 2 * math.pi ** n / math.factorial(n - 1)


@dataclass(frozen=True)
class ConeModel:
    """An admissible U(n)-invariant Kahler cone C(S), g = dr^2 + r^2 g_S."""

    n: int
    family: str
    k: int = 1
    gamma: float = 1.0
    c: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError(f"complex dimension {self.n} < 1")
        if self.family not in (FLAT_QUOTIENT, CONE_ANGLE):
            raise UnknownModel(self.family)
        if self.family == FLAT_QUOTIENT:
            if self.k < 1:
                raise ValueError("quotient order must be >= 1")
            object.__setattr__(self, "gamma", 1.0)
            object.__setattr__(self, "c", 0.5)
        else:
            if not 0 < self.gamma <= 1:
                raise ValueError("cone-angle exponent must lie in (0, 1]")
            if self.c <= 0:
                raise ValueError("profile scale must be positive")

    @property
    def kappa(self):
        """Soliton-field coefficient: X = r d_r = 2 kappa d_x."""
        return 1.0 / self.gamma

    @property
    def is_flat(self):
        return self.gamma == 1.0 and (self.family == CONE_ANGLE or self.k == 1)

    @property
    def link_scalar(self):
        """Scalar curvature R(g_S) of the link (constant under the symmetry)."""
        n = self.n
        round_part = (2 * n - 1) * (2 * n - 2)
        if n == 1:
            return 0.0
        return round_part + 4 * n * (n - 1) * (1 - self.gamma) / self.gamma

    @property
    def link_volume(self):
        return self.gamma ** self.n * sphere_volume(self.n) / self.k

    def potential(self, x):
        return self.c * np.exp(self.gamma * np.asarray(x, dtype=float))

    def r_squared(self, x):
        """Intrinsic cone radius squared: r^2 = 2 P_C(x)."""
        return 2.0 * self.potential(x)

    def x_of_r_squared(self, r2):
        return np.log(np.asarray(r2, dtype=float) / (2 * self.c)) / self.gamma

    def describe(self):
        if self.family == FLAT_QUOTIENT:
            return f"C^{self.n}/Z_{self.k}"
        return f"cone-angle(n={self.n}, gamma={self.gamma:g})"


def flat_quotient(n, k):
    return ConeModel(n=n, family=FLAT_QUOTIENT, k=k)


def cone_angle(n, gamma, c=0.5):
    return ConeModel(n=n, family=CONE_ANGLE, gamma=gamma, c=c)


@dataclass(frozen=True)
class RicciPotential:
    """v = B log r + v_S with constant v_S (link average under the symmetry)."""

    B: float
    v_S: float


def cone_potential(model: ConeModel, grid: Grid) -> GridFunction:
    """P_C = c e^{gamma x} with exact derivatives attached."""
    x = grid.x
    base = model.potential(x)
    derivs = {j: model.gamma ** j * base for j in range(1, 5)}
    return GridFunction(grid, base, derivs)


def ricci_potential_values(model: ConeModel, x):
    """v(x) with the convention v = -log(omega^n / omega_flat^n); 0 for n = 1.

    For n = 1 the log r term is pluriharmonic, so v is reported identically
    zero, matching Ric(g_C) = 0 off the apex.
    """
    x = np.asarray(x, dtype=float)
    if model.n == 1:
        return np.zeros_like(x)
    n, c, gam = model.n, model.c, model.gamma
    return (n * (1 - gam) * x - n * math.log(2 * c * gam)
            - math.log(gam))


def ricci_slope(model: ConeModel) -> RicciPotential:
    """Slope B and constant v_S of the Ricci potential v = B log r + v_S.

    B comes from the link formula
        B = (R(g_S) - (2n-1)(2n-2)) / (2(n-1))          (n >= 2)
    and is zero for n = 1 (flat off the apex). The constant is v at the
    intrinsic radius r = 1.
    """
    n = model.n
    if n < 1:
        raise DimensionError(str(n))
    if n == 1:
        return RicciPotential(0.0, 0.0)
    B = (model.link_scalar - (2 * n - 1) * (2 * n - 2)) / (2 * (n - 1))
    x1 = model.x_of_r_squared(1.0)
    v1 = float(ricci_potential_values(model, x1))
    # v_S = v - B log r at r = 1
    return RicciPotential(B, v1)


def ricci_slope_from_profile(model: ConeModel, grid: Grid) -> float:
    """B recomputed as r d_r v from the -log-volume potential (dual route)."""
    if model.n == 1:
        return 0.0
    v = GridFunction(grid, ricci_potential_values(model, grid.x))
    slopes = 2 * model.kappa * v.deriv(1).values
    return float(np.median(slopes))


def ricci_potential_residual(model: ConeModel, grid: Grid) -> float:
    """Sup residual of the trace of Ric(omega_C) = i ddbar v on {r^2 >= 1}."""
    P = cone_potential(model, grid)
    v = GridFunction(grid, ricci_potential_values(model, grid.x))
    res = laplacian(P, v, model.n).values - ricci_scalar(P, model.n).values
    mask = model.r_squared(grid.x) >= 1.0
    mask[:6] = False
    mask[-6:] = False
    return float(np.abs(res[mask]).max()) if mask.any() else 0.0


def check_quasi_calabi_yau(model: ConeModel, grid: Grid, tol=1e-8) -> EstimateReport:
    """Measure A_0, A_1, A_2 in |v| <= A_0(log r + 1), |grad^k v| <= A_k r^-k.

    Evaluated on {r^2 >= 1} with real gradient norms against g_C; the
    second derivative uses the eigenvalue-sup convention. Report-only.
    """
    P = cone_potential(model, grid)
    x = grid.x
    v = GridFunction(grid, ricci_potential_values(model, x))
    r2 = model.r_squared(x)
    mask = r2 >= 1.0
    mask[:6] = False
    mask[-6:] = False
    if not mask.any():
        raise ValueError("grid does not reach the region {r^2 >= 1}")
    logr = 0.5 * np.log(r2[mask])
    a0 = float(np.max(np.abs(v.values[mask]) / (logr + 1.0)))
    grad = np.sqrt(2.0 * grad_norm_sq(P, v).values[mask])
    a1 = float(np.max(grad * np.sqrt(r2[mask])))
    hess = hessian_eigensup(P, v).values[mask]
    a2 = float(np.max(hess * r2[mask]))
    residual = ricci_potential_residual(model, grid)
    return EstimateReport(
        name="quasi_calabi_yau",
        constants={"A0": a0, "A1": a1, "A2": a2, "B": ricci_slope(model).B},
        worst_violation=tol - residual,
        tolerance=tol,
        notes="admissibility predicate is a configured table, not derived",
    )


def admissible(model: ConeModel) -> bool:
    """Quasi-Calabi-Yau + smooth-canonical-model table.

    flat-quotient(k): admissible iff k > n (the resolution carries an
    exceptional set and the expander closes with a_0 = k - n > 0).
    cone-angle: configured for n = 1 only, where any angle deficit
    gamma < 1 is admitted.
    """
    if model.family == FLAT_QUOTIENT:
        return model.k > model.n
    if model.n == 1:
        return model.gamma < 1.0
    raise UnknownModel(
        f"no canonical-model predicate configured for {model.describe()}")
