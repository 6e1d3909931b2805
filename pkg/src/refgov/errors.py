"""Exception types raised by the toolkit."""


class RefgovError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(RefgovError):
    pass


class NotSchur(RefgovError):
    pass


class IndexOutOfRange(RefgovError):
    pass


class NonPSDInput(RefgovError):
    pass


class NonPDInput(RefgovError):
    pass


class InvalidProbability(RefgovError):
    pass


class EmptyTightenedSet(RefgovError):
    pass


class UnboundedSet(RefgovError):
    pass


class SolverError(RefgovError):
    pass


class SingularMatrix(RefgovError):
    pass


class EmptySet(RefgovError):
    pass


class NotDeterminedWithinCap(RefgovError):
    pass


class InfeasibleStart(RefgovError):
    pass


class KappaOutOfRange(RefgovError):
    pass


class SingularResidualCovariance(RefgovError):
    pass


class AllZeroLikelihoods(RefgovError):
    pass


class IntervalIncomplete(RefgovError):
    pass


class InfeasibleRecovery(RefgovError):
    pass


class TimingViolation(RefgovError):
    pass


class DimensionTooLarge(RefgovError):
    pass


class ConfigError(RefgovError):
    pass
