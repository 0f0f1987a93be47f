"""Exception types shared across the package."""


class FairSamplingError(Exception):
    pass


class ConfigError(FairSamplingError, ValueError):
    """Invalid configuration or arguments."""


class DataError(FairSamplingError, ValueError):
    """Malformed or unusable input data."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SamplerExhaustedError(FairSamplingError, RuntimeError):
    """Rejection sampling ran out of retries for a draw that must succeed."""


class DivergenceError(FairSamplingError, FloatingPointError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CheckpointError(FairSamplingError, OSError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic tag or unreadable header."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDimensionError(CheckpointError):
    """Declared dimensions disagree with the payload or with the caller's expectation."""


class ContractError(FairSamplingError, ValueError):
    """A caller-supplied sample or group contradicts the interaction matrix."""
