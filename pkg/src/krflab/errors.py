"""Exception hierarchy shared by all modules."""


class KRFLabError(Exception):
    """Base class for all library errors."""


class NonKahler(KRFLabError):
    """A potential fails positivity (P' > 0 and P'' > 0) somewhere.

    Carries the offending node indices when known.
    """

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = nodes if nodes is not None else []


class DimensionError(KRFLabError):
    """Complex dimension out of range."""


class UnknownModel(KRFLabError):
    """Cone family without a configured admissibility predicate."""


class NonAdmissible(KRFLabError):
    """Cone model fails the admissibility predicate."""


class ShootingFailure(KRFLabError):
    """No shooting parameters meet the outer asymptotics within tolerance."""


class FloorViolation(KRFLabError):
    """Scalar curvature floor n + min R <= 0 (wrong solution branch)."""


class GridUnderflow(KRFLabError):
    """A shifted argument exits the grid and no asymptotic extension applies."""


class StepRejected(KRFLabError):
    """Implicit step failed (Newton divergence or positivity loss)."""


class HorizonReached(KRFLabError):
    """Flow attempted to step past its validity horizon T'."""


class ParamError(KRFLabError):
    """Region parameters violate the standing constraints."""


class WindowError(KRFLabError):
    """Tangent-probe window incompatible with the probe times."""


class MissingArtifacts(KRFLabError):
    """Report aggregation could not find expected run artifacts."""


class ConfigError(KRFLabError):
    """Invalid run configuration."""
