"""Exception hierarchy for the videothreads library.

Every failure mode that callers may want to catch individually gets its own
class; all of them descend from VideoThreadsError so a blanket handler is one
except-clause away.
"""


class VideoThreadsError(Exception):
    """Base class for all errors raised by this library."""


class ShapeError(VideoThreadsError):
    """An array argument has the wrong rank or incompatible dimensions."""


class NonFiniteError(VideoThreadsError):
    """An array argument contains NaN or infinity."""


class NotSymmetricError(VideoThreadsError):
    """A matrix required to be symmetric is not (beyond tolerance)."""


class ZeroNormRowError(VideoThreadsError):
    """A row that must have positive norm is (numerically) zero.

    The offending row index is available as ``.row``.
    """

    def __init__(self, row: int, context: str = "input"):
        self.row = row
        super().__init__(f"row {row} of {context} has zero norm")


class ZeroDegreeError(VideoThreadsError):
    """An adjacency row sums to zero, so the degree normalization is undefined."""


class ConvergenceError(VideoThreadsError):
    """An iterative kernel exceeded its iteration budget."""


class ClusteringError(VideoThreadsError):
    """Invalid clustering request (empty input, K out of range, bad metric)."""


class GraphError(VideoThreadsError):
    """Invalid video-graph construction or transformation request."""


class DataError(VideoThreadsError):
    """Base class for file reading/writing failures."""


class BadMagicError(DataError):
    """A binary file does not start with the expected magic bytes."""


class TruncatedFileError(DataError):
    """A binary file ends before its header-declared payload."""


class PayloadShapeError(DataError):
    """A binary file's payload disagrees with its header dimensions."""


class TimestampOrderError(DataError):
    """Timestamps in a file are not strictly increasing."""


class SchemaError(DataError):
    """A JSON document violates its schema.

    The offending field path is available as ``.field``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyBatchError(VideoThreadsError):
    """A loss was asked to score a batch with no contributing pairs."""


class GradientError(VideoThreadsError):
    """A gradient computation produced non-finite values."""


class TrainingDivergedError(VideoThreadsError):
    """Training aborted because the loss became non-finite.

    The epoch at which divergence was detected is available as ``.epoch``.
    """

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite at epoch {epoch}")


class ConfigError(VideoThreadsError):
    """A run configuration file contains unknown or invalid keys."""


class TaskError(VideoThreadsError):
    """Invalid zero-shot task request (bad query, empty candidates, ...)."""
