"""Exception hierarchy shared by all deepagg modules.

``DeepAggError`` subclasses signal data problems (bad files, mismatched
shapes, degenerate inputs) and map to CLI exit code 3.  Argument and
configuration validation uses plain ``ValueError`` and maps to exit code 2.
"""


class DeepAggError(Exception):
    """Base class for all data-level errors raised by this package."""


class MalformedFile(DeepAggError):
    """File does not match the expected binary or text layout."""


class DimensionMismatch(DeepAggError):
    """Declared and actual sizes disagree, or operands have unequal shapes."""


class NonFiniteValue(DeepAggError):
    """A tensor, map, or descriptor contains NaN or infinity."""


class IoFailure(DeepAggError):
    """Underlying read or write failed."""


class DuplicateId(DeepAggError):
    """An image id occurs more than once where ids must be unique."""


class MissingFile(DeepAggError):
    """A manifest entry points at a file that does not exist."""


class DegenerateDescriptor(DeepAggError):
    """Aggregation produced the zero vector; the image has no usable signal."""


class ModelDimMismatch(DeepAggError):
    """Whitening model dimensions do not match the descriptor they are applied to."""


class InsufficientSamples(DeepAggError):
    """Too few descriptors to fit whitening parameters."""


class EmptyPositives(DeepAggError):
    """A query's ground truth lists no positive images."""


class MalformedGroundTruth(DeepAggError):
    """Ground-truth directory is missing files or contains unparsable lines."""


class ZeroVariance(DeepAggError):
    """A constant vector has no defined Pearson correlation."""


class RankDeficientWarning(UserWarning):
    """Covariance spectrum has directions dominated by the regularizer."""
