"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class CitegradeError(Exception):
    """Base class for all toolkit errors."""


class AlignmentError(CitegradeError):
    """Parallel sequences (ratings, labels, citations) disagree in length or mask."""


class DegenerateInstanceError(CitegradeError):
    """An instance has no statements to evaluate."""


class TemplateError(CitegradeError):
    """A prompt template placeholder has no binding, or a binding is unusable."""


class TransportError(CitegradeError):
    """A provider call failed after exhausting retries."""


class FixtureMissingError(CitegradeError):
    """Playback mode has no recorded completion for the requested key."""


class ParseError(CitegradeError):
    """Judge output could not be parsed into the expected structure.

    Carries the offending span so malformed transcripts can be triaged.
    """

    def __init__(self, message: str, span: str = ""):
        super().__init__(message if not span else f"{message}: {span!r}")
        self.span = span


class AttributionIncompleteError(CitegradeError):
    """The attribution transcript is missing labels for one or more statements."""


class RatingIncompleteError(CitegradeError):
    """The editing/rating transcript is missing blocks for an applicable statement."""


class UnderdeterminedError(CitegradeError):
    """Too few rows to fit the requested regression."""


class InsufficientDataError(CitegradeError):
    """Too few observations to fit or estimate the requested quantity."""


class UndefinedCorrelationError(CitegradeError):
    """A correlation is undefined for the given inputs (constant or all-tied data)."""


class EmptyComparisonError(CitegradeError):
    """Meta-evaluation found zero pairable values."""


class IngestError(CitegradeError):
    """An input record violates the on-disk schema."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
