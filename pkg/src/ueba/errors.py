"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class UebaError(Exception):
    """Base class. ``context`` is surfaced verbatim in CLI error JSON."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), **self.context}


class DimensionError(UebaError, ValueError):
    pass


class NonFiniteError(UebaError, FloatingPointError):
    pass


class GraphStructureError(UebaError, ValueError):
    pass


class ConfigError(UebaError, ValueError):
    pass


class TrainingError(UebaError, RuntimeError):
    pass


class StoreError(UebaError, RuntimeError):
    pass


class SchemaError(UebaError, ValueError):
    pass
