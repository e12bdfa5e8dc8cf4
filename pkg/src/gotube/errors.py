"""Exception types raised by the gotube package."""


class GoTubeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GoTubeError):
    """A run configuration violates its constraints."""


class UnknownSystemError(GoTubeError):
    """The requested system name is not registered."""


class WeightFormatError(GoTubeError):
    """A network weight file does not match the expected schema."""


class IntegrationDomainError(GoTubeError):
    """The vector field or its Jacobian produced non-finite values."""


class IntegrationBlowupError(GoTubeError):
    """Adaptive stepping failed before reaching the target time.

    ``last_valid_time`` is the largest time at which every affected
    trajectory still had a finite state.
    """

    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class InsufficientSamplesError(GoTubeError):
    """Too few distinct points to draw difference quotients from."""


class DegenerateSampleError(GoTubeError):
    """A sample with zero variance cannot support a distribution fit."""


class ContractViolation(GoTubeError):
    """An internal invariant failed, indicating a bug in the caller."""


class BudgetExceededError(GoTubeError):
    """The sample budget ran out before the coverage target was met.

    ``partial_tube`` holds the bounding balls completed before the
    failing timestep and ``achieved_coverage`` the best coverage seen
    at that timestep.
    """

    def __init__(self, message, partial_tube=None, achieved_coverage=None):
        super().__init__(message)
        self.partial_tube = partial_tube
        self.achieved_coverage = achieved_coverage
