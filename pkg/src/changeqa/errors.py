"""Exception types shared across the pipeline."""


class ChangeQAError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ChangeQAError):
    """Raster dimensions do not line up."""


class SchemaError(ChangeQAError):
    """Data violates a declared schema (class count, key set, value range)."""


class FormatError(ChangeQAError):
    """File content is not in the expected on-disk format."""


class EmptyRegionError(ChangeQAError):
    """A crop rectangle or pixel region has zero area."""


class UndefinedSimilarityError(ChangeQAError):
    """Cosine similarity requested against a zero vector."""


class BackendError(ChangeQAError):
    """An encoder/judge/generator backend failed after bounded retries."""


class ProtocolError(BackendError):
    """A backend replied with something outside its wire contract."""


class NoExemplarsError(ChangeQAError):
    """Retrieval pool is empty (possibly after group restriction)."""


class DiagnosticsUnavailableError(ChangeQAError):
    """Group diagnostics need both in-group and out-group exemplars."""


class DegenerateDataError(ChangeQAError):
    """Input cannot support the requested computation (e.g. single-class ROC)."""


class IncompleteAnnotationError(ChangeQAError):
    """Annotation data is missing required ranks or verdicts."""


class GenerationError(ChangeQAError):
    """Remote question generation produced no parseable reply."""


class DuplicateAnnotationError(ChangeQAError):
    """A (sample, annotator) pair was annotated twice."""
