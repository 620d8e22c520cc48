"""Exception hierarchy shared by all modules.

Every error carries a short machine-parseable code. The CLI maps each class
to a distinct exit code and prints a single ``CODE: message`` line, so that
scripted callers can branch on failures without parsing prose.
"""

from __future__ import annotations


class PossivError(Exception):
    """Base class for all library errors."""

    code = "E_INTERNAL"
    exit_code = 1

    def one_line(self) -> str:
        return f"{self.code}: {self}"


class ConfigurationError(PossivError):
    """Bad user input: unknown column, malformed violation spec, invalid flag."""

    code = "E_CONFIG"
    exit_code = 2


class ParseError(PossivError):
    """A cell in an input file failed to parse; message carries row/column."""

    code = "E_PARSE"
    exit_code = 3


class DataError(PossivError):
    """Data violates a structural requirement (rank, finiteness, size)."""

    code = "E_DATA"
    exit_code = 4


class DegeneracyError(PossivError):
    """A variance or covariance that must be positive (definite) is not."""

    code = "E_DEGENERATE"
    exit_code = 5


class NumericalError(PossivError):
    """An iterative solver failed to converge within its cap."""

    code = "E_NUMERIC"
    exit_code = 6
