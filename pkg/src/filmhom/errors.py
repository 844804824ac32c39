"""Exception types shared across the solvers."""


class FilmHomError(Exception):
    """Base class for all package errors."""


class NonConvergence(FilmHomError):
    """Iteration budget exhausted with the gradient above tolerance."""


class LineSearchStall(FilmHomError):
    """Backtracking shrank the step below the minimum without sufficient decrease."""


class BudgetExceeded(FilmHomError):
    """A requested grid would exceed the configured node cap."""


class FingerprintMismatch(FilmHomError):
    """A cache was queried with a law different from the one it was built for."""


class SchemaMismatch(FilmHomError):
    """A table file carries an unsupported schema_version."""


class ParseError(FilmHomError):
    """A table file could not be decoded."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class HypothesisFailure(FilmHomError):
    """A material law violated one of the growth/periodicity/continuity checks."""

    def __init__(self, hypothesis, witness):
        super().__init__(f"{hypothesis} failed at {witness}")
        self.hypothesis = hypothesis
        self.witness = witness


class ConfigError(FilmHomError):
    """Invalid run configuration."""
