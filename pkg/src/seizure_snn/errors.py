"""Exception types raised across the toolchain."""


class SeizureSNNError(Exception):
    """Base class for all package errors."""


class EDFError(SeizureSNNError):
    """EDF container problem located at a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TruncatedHeader(EDFError):
    pass


class MalformedNumericField(EDFError):
    pass


class InconsistentRecordCount(EDFError):
    pass


class UnrepresentableAmplitude(SeizureSNNError):
    pass


class InvalidBand(SeizureSNNError):
    pass


class UnknownChannel(SeizureSNNError):
    def __init__(self, label: str):
        super().__init__(f"unknown channel {label!r}")
        self.label = label


class NonFiniteSample(SeizureSNNError):
    pass


class ConfigViolation(SeizureSNNError):
    pass


class ShapeMismatch(SeizureSNNError):
    pass


class NonFiniteLoss(SeizureSNNError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class DegenerateWeights(UserWarning):
    """Emitted (as a warning) when a neuron group has only zero inputs."""


class ConfigError(SeizureSNNError):
    pass


class ArtifactMissing(SeizureSNNError):
    pass


class ValidationFailed(SeizureSNNError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))
