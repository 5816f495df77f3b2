"""Exception types shared across the package."""


class MycoprobeError(Exception):
    """Base class for every error raised by this package."""


# ---- embedding / metadata files ----

class MagicMismatch(MycoprobeError):
    """File does not start with the EMB1 (or CKP1) magic bytes."""


class DimMismatch(MycoprobeError):
    """Row payload disagrees with the header dimension, or table shapes disagree."""


class NonFiniteValue(MycoprobeError):
    """A NaN or infinite value where only finite floats are allowed."""


class DuplicateRowId(MycoprobeError):
    """Row identifiers must be unique within a table."""


class IoFailure(MycoprobeError):
    """Underlying filesystem write or read failed."""


class SchemaViolation(MycoprobeError):
    """A metadata line does not conform to the documented schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownSplit(SchemaViolation):
    """Split value outside {train, val, test}."""


class EmptyTrainingSet(MycoprobeError):
    """No train-split records to build a label space from."""


class InconsistentTaxonomy(MycoprobeError):
    """Same species under two genera (or genus under two families): corrupt metadata."""


# ---- sampling ----

class UnknownClassIndex(MycoprobeError):
    """A row class index falls outside [0, C)."""


# ---- augmentation ----

class NonPositiveAlpha(MycoprobeError):
    """Beta concentration must be > 0."""


class EmptyBatch(MycoprobeError):
    """Batch operations need at least one row."""


# ---- model ----

class ShapeMismatch(MycoprobeError):
    """Operand shapes do not line up."""


class NonFiniteOutput(MycoprobeError):
    """A forward pass produced NaN or infinity."""


class IndexOutOfRange(MycoprobeError):
    """A target class index falls outside [0, C)."""


# ---- training ----

class EmptyDataset(MycoprobeError):
    """Training requires non-empty train and validation data."""


class DivergedLoss(MycoprobeError):
    """Training loss became non-finite or exceeded the divergence threshold."""


class MissingObjectiveLabels(MycoprobeError):
    """A record lacks genus/species/poisonous while those objectives are enabled."""


# ---- metrics ----

class MissingLabels(MycoprobeError):
    """The prediction set carries no true labels."""


class KOutOfRange(MycoprobeError):
    """k must satisfy 1 <= k <= number of classes."""


# ---- zero-shot protocol ----

class RejectedResponse(MycoprobeError):
    """Fewer than half of the returned items matched the candidate list."""


class ExhaustedRetries(MycoprobeError):
    """Every attempt at a prompting round was rejected."""


class TransportFailure(MycoprobeError):
    """The completion transport could not produce a response."""
