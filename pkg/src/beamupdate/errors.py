"""Exception hierarchy shared by the linear-algebra kernels, designers and CLI."""


class BeamformingError(Exception):
    """Base class for every error raised by :mod:`beamupdate`."""


class SingularUpdate(BeamformingError):
    """An incremental update hit a (numerically) singular pivot."""


class RankDeficient(BeamformingError):
    """A channel matrix lost full column rank."""


class EmptyResult(BeamformingError):
    """The operation would leave a system with no users."""


class DegenerateChannel(BeamformingError):
    """A user channel is identically zero."""


class Infeasible(BeamformingError):
    """The direction set cannot meet the SINR targets with nonnegative powers."""

    def __init__(self, message, beta=None):
        super().__init__(message)
        self.beta = beta


class ConvergenceFailure(BeamformingError):
    """An iterative routine stopped at its iteration cap."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(BeamformingError):
    """Invalid experiment configuration."""
