"""Exception hierarchy shared by all modules."""


class McresError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(McresError):
    pass


class BadParams(ConfigError):
    pass


class NonDiagonalizable(McresError):
    pass


class AmbiguousDegeneracy(McresError):
    """Raised when more than two thresholds coincide within tolerance."""


class OnSpectrum(McresError):
    pass


class OutsideDisk(McresError):
    pass


class ChannelOnThresholdCollision(McresError):
    pass


class DecayViolation(McresError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotSignDefinite(McresError):
    pass


class NotCaseB(McresError):
    pass


class NumericalError(McresError):
    """Base class for failures of the numerical machinery (exit code 3)."""


class NotConverged(NumericalError):
    pass


class SingularOnContour(NumericalError):
    pass


class BoundaryZero(NumericalError):
    pass


class RankAmbiguous(NumericalError):
    pass


class AtPole(NumericalError):
    pass


class OmegaTooLarge(McresError):
    pass


class EpsilonOnSpectrum(McresError):
    pass
