"""Exception hierarchy shared by every engine module.

All engine failures derive from EngineError so callers (CLI, HTTP facade)
can map them to structured error bodies. ``retriable`` marks failures that
a caller may retry without changing the request.
"""


class EngineError(Exception):
    retriable = False


class TransportError(EngineError):
    """A remote encoder/generator call failed at the network or HTTP level."""

    retriable = True


class SchemaError(EngineError):
    """A vector, matrix, or payload does not match the configured dimensions."""


class DataError(EngineError):
    """Payload was structurally valid but carried unusable values (NaN, Inf)."""


class FormatError(EngineError):
    """An on-disk file does not match its expected binary or JSON layout."""


class CorruptionError(EngineError):
    """A checksum mismatch: the file bytes are not what was written."""


class NotFoundError(EngineError):
    """A case index outside the store, or a missing resource."""


class DegenerateInputError(EngineError):
    """Input on which the requested math is undefined (e.g. zero-norm vector)."""


class EmptyStoreError(EngineError):
    """A query was issued against a store with no entries."""


class AssetError(EngineError):
    """A stored case's image payload could not be read."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class InsufficientDataError(EngineError):
    """Too few samples for the requested statistic."""


class DegenerateVarianceError(EngineError):
    """All paired differences identical: the t statistic is undefined."""


class EmptyOutputError(EngineError):
    """The generator returned an empty string."""


class PreconditionError(EngineError, ValueError):
    """An argument violated a documented precondition."""
