"""Exception types shared across the package."""


class UstError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(UstError):
    """Structurally invalid model data (dimension mismatch, bad matrix, ...)."""


class SpanError(UstError):
    """A timestamp lies outside the span an object or model is defined on."""


class ConsistencyError(UstError):
    """An observation has zero probability under the object's model."""

    def __init__(self, object_id, time, message=None):
        self.object_id = object_id
        self.time = time
        super().__init__(
            message
            or f"object {object_id!r}: observation at t={time} has zero probability"
        )


class ParameterError(UstError):
    """A query or estimator parameter is outside its admissible domain."""


class TooLargeError(UstError):
    """A brute-force enumeration would exceed its instance-size guard."""


class GenerationError(UstError):
    """The synthetic data generator failed to produce a valid instance."""


class LoadError(UstError):
    """A database file is malformed or violates a model invariant."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")
