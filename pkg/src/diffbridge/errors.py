"""Exception hierarchy shared by every module of the package."""


class BridgeError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(BridgeError):
    """A covariance or diffusion matrix failed factorisation."""


class SingularObservationBlock(BridgeError):
    """The covariance block being conditioned on is singular."""


class InadmissibleState(BridgeError):
    """A simulated state left the model's admissible domain."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ProposalRejected(InadmissibleState):
    """A proposed bridge could not be completed; the sampler treats it as a rejection."""


class DegenerateStep(BridgeError):
    """A step with singular covariance was asked to explain a state it cannot reach."""


class NonFiniteState(BridgeError):
    """ODE integration produced NaN or Inf."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class SingularFundamentalMatrix(BridgeError):
    """The LNA fundamental matrix became numerically singular."""


class InitialisationFailed(BridgeError):
    """No admissible proposal could be drawn to start a chain."""


class ZeroVarianceError(BridgeError):
    """ESS requested for a constant series."""


class UnknownModel(BridgeError):
    pass


class BadParameterCount(BridgeError):
    pass


class BadConfig(BridgeError):
    """Configuration errors; ``errors`` holds every problem found, not just the first."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))
