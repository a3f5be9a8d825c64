"""Domain types and scenario/aggregation rules shared by every pipeline stage."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from statistics import fmean

from .errors import AlignmentError, DegenerateInstanceError, ParseError


class ContextLabel(IntEnum):
    """Provenance of a response statement. Only RETRIEVAL statements are citable."""

    QUERY = 1
    RETRIEVAL = 2
    RESPONSE = 3
    PARAMETRIC = 4

    @property
    def applicable(self) -> bool:
        return self is ContextLabel.RETRIEVAL


class Scenario(Enum):
    """Aggregation regime: FULL penalizes uncited citable statements, CITED masks them."""

    FULL = "full"
    CITED = "cited"


class EditOp(Enum):
    DELETE = "delete"
    ADD = "add"


class EditReason(Enum):
    MISLEADING = "misleading"
    SUBSTANDARD = "substandard"
    REDUNDANT = "redundant"
    EVIDENCE = "evidence"
    REFINEMENT = "refinement"
    CREDIBILITY = "credibility"


DELETE_REASONS = frozenset({EditReason.MISLEADING, EditReason.SUBSTANDARD, EditReason.REDUNDANT})
ADD_REASONS = frozenset({EditReason.EVIDENCE, EditReason.REFINEMENT, EditReason.CREDIBILITY})


@dataclass(frozen=True)
class EditAction:
    """One delete/add operation on a single citation id with a typed reason."""

    op: EditOp
    citation: int
    reason: EditReason

    def __post_init__(self) -> None:
        if self.op is EditOp.DELETE and self.reason not in DELETE_REASONS:
            raise ParseError(f"delete action with add reason {self.reason.value}")
        if self.op is EditOp.ADD and self.reason not in ADD_REASONS:
            raise ParseError(f"add action with delete reason {self.reason.value}")
        if self.citation < 0:
            raise ParseError(f"negative citation id {self.citation}")
        if self.citation == 0 and self.op is not EditOp.ADD:
            raise ParseError("citation id 0 is only valid for add actions")


@dataclass(frozen=True)
class Passage:
    """A retrieved source passage, addressed by its 1-based citation index."""

    id: int
    text: str
    title: str | None = None

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValueError(f"passage id must be >= 1, got {self.id}")


@dataclass(frozen=True)
class Statement:
    """A sentence-level response unit with its extracted citation set."""

    index: int
    text_with_citations: str
    text_clean: str
    citations: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"statement index must be >= 1, got {self.index}")
        if any(c < 1 for c in self.citations):
            raise ValueError("statement citations must be >= 1")


@dataclass(frozen=True)
class HumanAnnotation:
    """Aggregated human judgments: majority-voted contexts, mean ratings, pooled edits."""

    contexts: tuple[ContextLabel, ...]
    likert: tuple[float | None, ...]
    edits: tuple[tuple[EditAction, ...], ...]

    def __post_init__(self) -> None:
        if not (len(self.contexts) == len(self.likert) == len(self.edits)):
            raise AlignmentError("human annotation fields must align per statement")
        for ctx, rating in zip(self.contexts, self.likert):
            if rating is not None and ctx is not ContextLabel.RETRIEVAL:
                raise ValueError("only retrieval statements may carry a citation rating")


@dataclass(frozen=True)
class EvalInstance:
    """A query, its ordered retrieved passages, and one model response with citations."""

    instance_id: str
    query: str
    passages: tuple[Passage, ...]
    response_raw: str
    statements: tuple[Statement, ...] = ()
    human: HumanAnnotation | None = None
    model: str = "unknown"
    dataset: str = "unknown"

    def __post_init__(self) -> None:
        ids = [p.id for p in self.passages]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"passage ids must be contiguous from 1, got {ids}")
        for stmt in self.statements:
            bad = {c for c in stmt.citations if c > self.max_id}
            if bad:
                raise ValueError(f"statement {stmt.index} cites unknown passages {sorted(bad)}")

    @property
    def max_id(self) -> int:
        return len(self.passages)

    def citations_per_statement(self) -> list[frozenset[int]]:
        return [s.citations for s in self.statements]


@dataclass(frozen=True)
class StatementRating:
    """Per-statement rating with its edit actions and scenario applicability flags.

    ``likert``/``normalized`` are None when the statement is N/A for citation
    evaluation; ``normalized`` is the affine map of ``likert`` onto [0, 1].
    """

    statement_index: int
    actions: tuple[EditAction, ...] = ()
    likert: int | None = None
    normalized: float | None = None
    applicable_full: bool = False
    applicable_cited: bool = False

    def __post_init__(self) -> None:
        if self.likert is not None:
            expected = normalize_rating(self.likert)
            if self.normalized is None or abs(self.normalized - expected) > 1e-12:
                raise ValueError(f"normalized must equal (likert - 1)/4, got {self.normalized}")
        if self.applicable_cited and not self.applicable_full:
            raise ValueError("cited applicability implies full applicability")

    def applicable(self, scenario: Scenario) -> bool:
        return self.applicable_full if scenario is Scenario.FULL else self.applicable_cited


def normalize_rating(likert: int) -> float:
    """Map a 1-5 Likert rating onto [0, 1] via (likert - 1)/4."""
    if likert not in (1, 2, 3, 4, 5):
        raise ValueError(f"likert rating must be in 1..5, got {likert}")
    return (likert - 1) / 4


def mask_for_scenario(
    ratings: list[StatementRating],
    contexts: list[ContextLabel],
    citations: list[frozenset[int]],
    scenario: Scenario,
) -> list[StatementRating]:
    """Apply the scenario's applicability mask, nulling scores of masked statements.

    FULL keeps every retrieval-attributed statement; CITED additionally requires
    a non-empty citation set. Both flags are recomputed so the cited mask is
    always a subset of the full mask.
    """
    if not (len(ratings) == len(contexts) == len(citations)):
        raise AlignmentError(
            f"ratings/contexts/citations lengths differ: "
            f"{len(ratings)}/{len(contexts)}/{len(citations)}"
        )
    masked = []
    for rating, ctx, cits in zip(ratings, contexts, citations):
        full = ctx is ContextLabel.RETRIEVAL
        cited = full and len(cits) > 0
        keep = full if scenario is Scenario.FULL else cited
        masked.append(
            dataclasses.replace(
                rating,
                likert=rating.likert if keep else None,
                normalized=rating.normalized if keep else None,
                applicable_full=full,
                applicable_cited=cited,
            )
        )
    return masked


def aggregate_response(ratings: list[StatementRating], scenario: Scenario) -> float | None:
    """Mean-pool normalized scores over applicable statements; None when none apply."""
    values = [
        r.normalized for r in ratings if r.applicable(scenario) and r.normalized is not None
    ]
    if not values:
        return None
    return fmean(values)


def response_stats(instance: EvalInstance) -> tuple[int, float]:
    """Return (statement count, fraction of statements without citations)."""
    if not instance.statements:
        raise DegenerateInstanceError(f"instance {instance.instance_id} has no statements")
    length = len(instance.statements)
    uncited = sum(1 for s in instance.statements if not s.citations)
    return length, uncited / length
