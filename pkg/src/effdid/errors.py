"""Exception hierarchy.

Every error raised on an expected failure path carries a stable ``category``
name and a CLI exit code, so the command line can report it without a stack
trace.
"""

from __future__ import annotations


class EffDidError(Exception):
    """Base class for all domain errors."""

    category = "EffDidError"
    exit_code = 1

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context

    def record(self) -> dict:
        out = {"error": self.category, "message": str(self)}
        for key, value in self.context.items():
            out[key] = value if isinstance(value, (int, float, str, bool)) else repr(value)
        return out


class UsageError(EffDidError):
    category = "UsageError"
    exit_code = 2


class ConfigError(EffDidError):
    category = "ConfigError"
    exit_code = 3


# -- data validation -----------------------------------------------------------


class ValidationError(EffDidError):
    category = "ValidationError"
    exit_code = 10


class NonBinaryIndicator(ValidationError):
    category = "NonBinaryIndicator"
    exit_code = 11


class NonFiniteValue(ValidationError):
    category = "NonFiniteValue"
    exit_code = 12


class EmptyCell(ValidationError):
    category = "EmptyCell"
    exit_code = 13

    def __init__(self, d: int, t: int):
        super().__init__(f"no observations in cell (d={d}, t={t})", d=d, t=t)
        self.cell = (d, t)


class EmptyGroup(ValidationError):
    category = "EmptyGroup"
    exit_code = 14

    def __init__(self, d: int):
        super().__init__(f"no observations in group d={d}", d=d)
        self.group = d


class InconsistentDimension(ValidationError):
    category = "InconsistentDimension"
    exit_code = 15


class CsvFormatError(ValidationError):
    category = "CsvFormatError"
    exit_code = 16


class InvalidFoldCount(EffDidError):
    category = "InvalidFoldCount"
    exit_code = 17


class IncompatiblePair(EffDidError):
    category = "IncompatiblePair"
    exit_code = 18


# -- first stage ---------------------------------------------------------------


class SingleClass(EffDidError):
    category = "SingleClass"
    exit_code = 20


class NoConvergence(EffDidError):
    category = "NoConvergence"
    exit_code = 21

    def __init__(self, message: str, last_norm: float):
        super().__init__(message, last_norm=last_norm)
        self.last_norm = last_norm


class DegeneratePath(EffDidError):
    category = "DegeneratePath"
    exit_code = 22


class DimensionOverflow(EffDidError):
    category = "DimensionOverflow"
    exit_code = 23


class InvalidLearnerSpec(ConfigError):
    category = "InvalidLearnerSpec"
    exit_code = 24


class EmptyTrainingCell(EffDidError):
    category = "EmptyTrainingCell"
    exit_code = 25


# -- scores and estimation -----------------------------------------------------


class MissingNuisance(EffDidError):
    category = "MissingNuisance"
    exit_code = 30


class DegenerateDenominator(EffDidError):
    category = "DegenerateDenominator"
    exit_code = 31


# -- simulation ----------------------------------------------------------------


class InfeasibleSpec(EffDidError):
    category = "InfeasibleSpec"
    exit_code = 40


class UnknownTarget(EffDidError):
    category = "UnknownTarget"
    exit_code = 41


class UnsupportedPair(EffDidError):
    category = "UnsupportedPair"
    exit_code = 42


class SinglePeriod(EffDidError):
    category = "SinglePeriod"
    exit_code = 43


class ReplicationFailed(EffDidError):
    category = "ReplicationFailed"
    exit_code = 44

    def __init__(self, index: int, cause: Exception):
        name = getattr(cause, "category", type(cause).__name__)
        super().__init__(f"replication {index} failed: {name}: {cause}", replication=index, cause=name)
        self.index = index
        self.cause = cause


def all_categories() -> list[type[EffDidError]]:
    """Every concrete error class, ordered by exit code."""
    seen = {}
    stack = [EffDidError]
    while stack:
        cls = stack.pop()
        seen[cls.category] = cls
        stack.extend(cls.__subclasses__())
    return sorted(seen.values(), key=lambda c: c.exit_code)
