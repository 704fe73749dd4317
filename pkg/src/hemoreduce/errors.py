"""Exception hierarchy shared across the pipeline."""


class HemoreduceError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDimension(HemoreduceError):
    pass


class ResolutionTooCoarse(HemoreduceError):
    pass


class HOutOfRange(HemoreduceError):
    pass


class UnstableDt(HemoreduceError):
    pass


class PoissonNoConvergence(HemoreduceError):
    def __init__(self, iterations, residual):
        super().__init__(
            f"pressure Poisson solve stalled after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class NoSteadyState(HemoreduceError):
    pass


class LengthMismatch(HemoreduceError):
    pass


class AlreadyHomogenized(HemoreduceError):
    pass


class MissingInletValues(HemoreduceError):
    pass


class NotSymmetric(HemoreduceError):
    pass


class RankDeficient(HemoreduceError):
    pass


class BasisMismatch(HemoreduceError):
    pass


class SingularPressureSystem(HemoreduceError):
    pass


class BlowUp(HemoreduceError):
    pass


class PowerIterationNoConvergence(HemoreduceError):
    pass


class SingularNormalEquations(HemoreduceError):
    pass


class HorizonTooShort(HemoreduceError):
    pass


class ZeroReferenceNorm(HemoreduceError):
    pass


class MissingPhase(HemoreduceError):
    pass


class BadMagic(HemoreduceError):
    pass


class TruncatedPayload(HemoreduceError):
    def __init__(self, offset, message=""):
        super().__init__(message or f"file truncated at byte offset {offset}")
        self.offset = offset


class VersionMismatch(HemoreduceError):
    pass


class IoFailure(HemoreduceError):
    pass


class ConfigError(HemoreduceError):
    pass


class MissingArtifact(HemoreduceError):
    def __init__(self, path, needed_command):
        super().__init__(
            f"missing artifact {path}; run the `{needed_command}` subcommand first"
        )
        self.path = path
        self.needed_command = needed_command
