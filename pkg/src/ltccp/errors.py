"""Exception hierarchy shared by every stage of the pipeline."""


class LtccpError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1
    kind = "error"


class UsageError(LtccpError, ValueError):
    exit_code = 2
    kind = "usage"


class ConfigError(UsageError):
    kind = "config"


class MissingInputError(LtccpError, FileNotFoundError):
    exit_code = 3
    kind = "missing_input"


class SchemaError(LtccpError, ValueError):
    exit_code = 4
    kind = "schema"


class IngestionError(SchemaError):
    kind = "ingestion"


class ShapeError(LtccpError, ValueError):
    """A tensor or feature dimension does not match what it is combined with."""

    exit_code = 5
    kind = "dimension"


class MetricError(LtccpError, ValueError):
    exit_code = 6
    kind = "metric"


class TrainingError(LtccpError, RuntimeError):
    exit_code = 7
    kind = "training"


class MismatchError(LtccpError, ValueError):
    """Predictions and ground truth (or two models) cover different papers."""

    exit_code = 8
    kind = "test_set_mismatch"
