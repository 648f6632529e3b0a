"""Exception types shared across the toolkit."""


class NacforgeError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(NacforgeError):
    """A layer's declared input does not match the incoming shape."""


class NonPositiveDim(NacforgeError):
    """Shape inference produced a spatial size <= 0."""


class UnknownModel(NacforgeError):
    """Requested builtin model name does not exist."""


class SpaceMismatch(NacforgeError):
    """Genomes from different search spaces were combined."""


class DomainError(NacforgeError):
    """An argument violated a numeric precondition."""


class NumericOverflow(NacforgeError):
    """A forward pass produced non-finite values."""


class GraphNotRecorded(NacforgeError):
    """backward() called on a tensor with no recorded graph."""


class NumericDivergence(NacforgeError):
    """Training loss became non-finite."""


class EmptyDataset(NacforgeError):
    """Operation requires at least one sample."""


class ParseError(NacforgeError):
    """A data file row could not be parsed."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class SchemaError(NacforgeError):
    """A data file does not match the expected schema."""


class NothingLeftToPrune(NacforgeError):
    """All prunable weights are already masked."""


class InsufficientArchive(NacforgeError):
    """Archive holds fewer candidates than the selection requires."""


class AllTrialsFailed(NacforgeError):
    """Every hyperparameter trial diverged; no usable config."""


class ConfigError(NacforgeError):
    """Run configuration is invalid; message names the field."""
