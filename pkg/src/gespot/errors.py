"""Exception types shared across the package."""


class GespotError(Exception):
    """Base class for all gespot errors."""


class ParseError(GespotError):
    """Malformed input file. Carries the 1-based line number (0 = empty file)."""

    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class InvariantViolation(GespotError):
    """A domain object failed one of its structural invariants."""


class ConfigError(GespotError, ValueError):
    """Invalid or infeasible configuration."""


class SpecError(GespotError, ValueError):
    """Model architecture specification is inconsistent."""


class ShapeError(GespotError, ValueError):
    """An array does not have the shape a function requires."""


class EmptyCorpusError(GespotError, ValueError):
    pass


class SingleSubjectError(GespotError, ValueError):
    """A by-subject split is impossible with fewer than two subjects."""


class SequenceTooShortError(GespotError, ValueError):
    pass


class OutOfRangeError(GespotError, ValueError):
    """A frame index falls outside the valid range."""


class InvalidMorError(GespotError, ValueError):
    pass


class InvalidFpsError(GespotError, ValueError):
    pass


class NoGroundTruthError(GespotError, ValueError):
    pass


class NoMatchesError(GespotError, ValueError):
    pass
