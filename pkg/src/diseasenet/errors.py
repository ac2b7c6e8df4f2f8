"""Exception hierarchy shared by every pipeline stage.

Each exception carries the CLI exit status it maps to, so the command line
front end can translate failures without a lookup table.
"""

from __future__ import annotations


class DiseaseNetError(Exception):
    exit_code = 1


class ConfigError(DiseaseNetError):
    exit_code = 2


class DataError(DiseaseNetError):
    exit_code = 3


class SchemaError(DataError):
    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyJoinError(DataError):
    pass


class ImputationError(DataError):
    pass


class DomainError(DataError, ValueError):
    pass


class InsufficientDataError(DataError):
    def __init__(self, message: str, zero_variance: bool = False):
        super().__init__(message)
        self.zero_variance = zero_variance


class StageOrderError(DiseaseNetError):
    exit_code = 4
