"""Exception types shared across the package."""


class DqError(Exception):
    """Base class for all computational errors raised by dqest."""


class DegenerateSample(DqError):
    """The sample is constant, so the requested quantity is undefined."""


class DegenerateDenominator(DqError):
    """A ratio estimator has a vanishing denominator (e.g. S equal to t everywhere)."""


class ZeroDenominator(DqError):
    """The sum of marginal risk values is zero, so the DR ratio is undefined."""


class NonPositiveDensity(DqError):
    """A density plug-in evaluated to zero or less at a point where it is divided by."""


class AssumptionViolated(DqError):
    """A model-level assumption (moments, regularity, uniqueness) does not hold."""


class NotCentered(AssumptionViolated):
    """The closed-form DR requires a zero location vector."""


class FitFailed(DqError):
    """The AR(1)-GARCH(1,1) likelihood could not be optimised."""
