"""Domain errors. All are ValueError subclasses so the CLI boundary can catch them uniformly."""

from __future__ import annotations


class StudyFormatError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class ParallelPlanesError(GeometryError):
    pass


class ShapeMismatchError(ValueError):
    pass


class DegenerateStackError(ValueError):
    pass


class MissingViewError(ValueError):
    def __init__(self, role: str, study_id: str = "") -> None:
        self.role = role
        self.study_id = study_id
        where = f" in study {study_id}" if study_id else ""
        super().__init__(f"view {role} is not available{where}")


class NumericFaultError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class FeedbackError(ValueError):
    pass
