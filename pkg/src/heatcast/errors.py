"""Exception hierarchy. Every error is a ValueError so callers written against
plain ValueError keep working."""

from typing import Iterable, Optional


class HeatcastError(ValueError):
    """Base class for all heatcast failures."""


class ContractViolation(HeatcastError):
    """A numerical precondition (usually a shape) was not met."""


class ParseError(HeatcastError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(HeatcastError):
    pass


class DegenerateChannelError(HeatcastError):
    def __init__(self, channel: str):
        self.channel = channel
        super().__init__(f"Channel '{channel}' has zero variance and cannot be normalized.")


class EmptyDatasetError(HeatcastError):
    pass


class DivergenceError(HeatcastError):
    def __init__(self, sample_index: int, loss: float):
        self.sample_index = sample_index
        self.loss = loss
        super().__init__(f"Training diverged at sample {sample_index} (loss={loss}).")


class ConfigurationError(HeatcastError):
    pass


class FormatError(HeatcastError):
    pass


class DomainError(HeatcastError):
    pass


class PartialDayError(HeatcastError):
    def __init__(self, dates: Iterable[str]):
        self.dates = list(dates)
        super().__init__(f"Days without exactly 24 predictions: {', '.join(self.dates)}")


class DegenerateSamplesError(HeatcastError):
    pass
