"""Edit-then-rate citation scoring and the calibrated action-distance model.

The judge proposes per-statement citation edits and a 1-5 rating in a single
pass; the same generated actions also feed a linear model over action-kind
frequencies, and the two scores can be blended. A statement's edit actions
plus its untouched ("keep") citations form the frequency denominator, so a
perfect citation set yields a pure-keep vector instead of a degenerate one.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from statistics import fmean

from . import prompts
from .attribution import attribute_contexts
from .core import (
    ContextLabel,
    EditAction,
    EditOp,
    EditReason,
    EvalInstance,
    Scenario,
    StatementRating,
    aggregate_response,
    mask_for_scenario,
    normalize_rating,
    response_stats,
)
from .errors import AlignmentError, ParseError, RatingIncompleteError
from .gateway import (
    Judge,
    PromptTemplate,
    PromptTemplateId,
    TaggedBlock,
    parse_tagged_blocks,
    render_prompt,
)

logger = logging.getLogger(__name__)

EDITING_PROMPT = PromptTemplate(
    template_id=PromptTemplateId.EDITING_RATING, body=prompts.EDITING_RATING_TEMPLATE
)

ACTION_KINDS = (
    "delete_misleading",
    "delete_substandard",
    "delete_redundant",
    "add_evidence",
    "add_refinement",
    "add_credibility",
    "keep",
)

_KIND_INDEX = {
    (EditOp.DELETE, EditReason.MISLEADING): 0,
    (EditOp.DELETE, EditReason.SUBSTANDARD): 1,
    (EditOp.DELETE, EditReason.REDUNDANT): 2,
    (EditOp.ADD, EditReason.EVIDENCE): 3,
    (EditOp.ADD, EditReason.REFINEMENT): 4,
    (EditOp.ADD, EditReason.CREDIBILITY): 5,
}

_DELETE_REASON_BY_NUMBER = {
    1: EditReason.MISLEADING,
    2: EditReason.SUBSTANDARD,
    3: EditReason.REDUNDANT,
}
_ADD_REASON_BY_NUMBER = {
    1: EditReason.EVIDENCE,
    2: EditReason.REFINEMENT,
    3: EditReason.CREDIBILITY,
}

_REASON_PHRASE_RE = re.compile(r"\b(DELETE|ADD)\s+REASON\s+([0-9]+)", re.IGNORECASE)
_REASON_KEYWORDS = {
    "misleading": EditReason.MISLEADING,
    "substandard": EditReason.SUBSTANDARD,
    "redundant": EditReason.REDUNDANT,
    "evidence": EditReason.EVIDENCE,
    "refinement": EditReason.REFINEMENT,
    "credibility": EditReason.CREDIBILITY,
}


@dataclass(frozen=True)
class ActionFeatureVector:
    """Normalized frequency of each action kind, keep included."""

    freq: tuple[float, ...]
    parametric_flag: bool = False

    def __post_init__(self) -> None:
        if len(self.freq) != len(ACTION_KINDS):
            raise ValueError(f"feature vector must have {len(ACTION_KINDS)} entries")
        if any(f < 0 for f in self.freq):
            raise ValueError("frequencies must be non-negative")
        total = sum(self.freq)
        if total != 0 and abs(total - 1.0) > 1e-9:
            raise ValueError(f"frequencies must sum to 1 or be all zero, got {total}")


@dataclass(frozen=True)
class EditDistModel:
    """Per-action-kind distances plus bias; raw scores clamp to the Likert range."""

    d: tuple[float, ...]
    b: float
    clamp_range: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self) -> None:
        if len(self.d) != len(ACTION_KINDS):
            raise ValueError(f"model must have {len(ACTION_KINDS)} coefficients")
        values = (*self.d, self.b, *self.clamp_range)
        if any(v != v or v in (float("inf"), float("-inf")) for v in values):
            raise ValueError("model coefficients must be finite")


@dataclass(frozen=True)
class EnsembleModel:
    """Interpolation weight on the edit-then-rate score; the rest goes to the linear model."""

    lam: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


def action_from_block(block: TaggedBlock) -> EditAction:
    """Convert a DELETE/ADD child block into a typed action.

    The reason is matched by the instructed "DELETE REASON k"/"ADD REASON k"
    phrase first, then by a case-insensitive reason keyword.
    """
    op = EditOp.DELETE if block.tag == "DELETE" else EditOp.ADD
    citation = block.int_attr("citation")
    body = block.body
    m = _REASON_PHRASE_RE.search(body)
    reason: EditReason | None = None
    if m is not None:
        phrase_op, number = m.group(1).upper(), int(m.group(2))
        if (phrase_op == "DELETE") != (op is EditOp.DELETE):
            raise ParseError(f"<{block.tag}> body names a {phrase_op} reason", body)
        table = _DELETE_REASON_BY_NUMBER if op is EditOp.DELETE else _ADD_REASON_BY_NUMBER
        reason = table.get(number)
        if reason is None:
            raise ParseError(f"unknown {phrase_op} reason number {number}", body)
    else:
        lowered = body.casefold()
        for keyword, candidate in _REASON_KEYWORDS.items():
            if keyword in lowered:
                reason = candidate
                break
    if reason is None:
        raise ParseError(f"<{block.tag}> body carries no recognizable reason", body)
    return EditAction(op=op, citation=citation, reason=reason)


def _actions_from_editing_block(block: TaggedBlock) -> tuple[EditAction, ...]:
    return tuple(action_from_block(child) for child in block.children)


def build_editing_prompt(instance: EvalInstance) -> str:
    response_text = " ".join(s.text_with_citations for s in instance.statements)
    return render_prompt(
        EDITING_PROMPT,
        {
            "User Query": instance.query,
            "Retrieved Passages": prompts.render_passages(instance.passages),
            "Response Sentences": response_text,
            "Citations": prompts.render_citation_blocks(instance.statements),
        },
    )


def _ratings_from_transcript(
    text: str, instance: EvalInstance, labels: list[ContextLabel]
) -> list[StatementRating]:
    blocks = parse_tagged_blocks(text, {"editing", "rating"})
    editing_by_id: dict[int, TaggedBlock] = {}
    likert_by_id: dict[int, int] = {}
    for block in blocks:
        sid = block.int_attr("sentence_id")
        if block.tag == "editing":
            editing_by_id[sid] = block
        else:
            m = re.search(r"-?\d+", block.body)
            if m is None:
                raise ParseError("rating block body carries no rating", block.body)
            likert = int(m.group(0))
            if likert < 1 or likert > 5:
                raise ParseError(f"likert rating {likert} outside 1..5", block.body)
            likert_by_id[sid] = likert

    ratings: list[StatementRating] = []
    missing: list[int] = []
    for stmt, label in zip(instance.statements, labels):
        if label is not ContextLabel.RETRIEVAL:
            ratings.append(StatementRating(statement_index=stmt.index))
            continue
        editing = editing_by_id.get(stmt.index)
        likert = likert_by_id.get(stmt.index)
        if editing is None or likert is None:
            missing.append(stmt.index)
            continue
        actions = _actions_from_editing_block(editing)
        ratings.append(
            StatementRating(
                statement_index=stmt.index,
                actions=actions,
                likert=likert,
                normalized=normalize_rating(likert),
                applicable_full=True,
                applicable_cited=bool(stmt.citations),
            )
        )
    if missing:
        raise RatingIncompleteError(
            f"no editing/rating blocks for applicable sentences {missing}"
        )
    return ratings


def rate_itercoe(
    instance: EvalInstance, labels: list[ContextLabel], judge: Judge
) -> list[StatementRating]:
    """Run the edit-then-rate pass and parse per-statement actions and ratings.

    Statements not attributed to retrieval are N/A regardless of what the judge
    returns. A transcript missing blocks for an applicable statement triggers
    one fresh retry before the instance fails.
    """
    if len(labels) != len(instance.statements):
        raise AlignmentError(
            f"labels/statements lengths differ: {len(labels)}/{len(instance.statements)}"
        )
    if not any(label is ContextLabel.RETRIEVAL for label in labels):
        return [StatementRating(statement_index=s.index) for s in instance.statements]
    prompt = build_editing_prompt(instance)
    for fresh in (False, True):
        text = judge.complete_text(prompt, fresh=fresh)
        try:
            return _ratings_from_transcript(text, instance, labels)
        except RatingIncompleteError:
            if fresh:
                raise
    raise AssertionError("unreachable")


def kept_citation_count(citations: frozenset[int], actions: tuple[EditAction, ...]) -> int:
    """Citations untouched by any delete: |original| - |distinct delete targets among them|."""
    deleted = {a.citation for a in actions if a.op is EditOp.DELETE}
    return len(citations) - len(deleted & citations)


def action_features(actions: list[EditAction], kept_citations: int) -> ActionFeatureVector:
    """Count actions per kind (keep counted once per kept citation) and normalize.

    An add targeting citation id 0 marks the statement as needing parametric
    evidence; it lands in the add-evidence bucket and sets the flag.
    """
    if kept_citations < 0:
        raise ValueError(f"kept_citations must be >= 0, got {kept_citations}")
    counts = [0.0] * len(ACTION_KINDS)
    parametric = False
    for action in actions:
        if action.op is EditOp.ADD and action.citation == 0:
            parametric = True
            counts[3] += 1
        else:
            counts[_KIND_INDEX[(action.op, action.reason)]] += 1
    counts[6] = float(kept_citations)
    total = sum(counts)
    if total == 0:
        return ActionFeatureVector(freq=(0.0,) * len(ACTION_KINDS), parametric_flag=parametric)
    return ActionFeatureVector(
        freq=tuple(c / total for c in counts), parametric_flag=parametric
    )


def rate_editdist(features: ActionFeatureVector, model: EditDistModel) -> float:
    """Score action frequencies with the linear model, clamp to 1..5, map to [0, 1]."""
    raw = sum(d * f for d, f in zip(model.d, features.freq)) + model.b
    low, high = model.clamp_range
    clamped = min(max(raw, low), high)
    return (clamped - low) / (high - low)


def rate_ensemble(
    itercoe: float | None, editdist: float | None, ens: EnsembleModel
) -> float | None:
    """Blend the two scores; N/A propagates."""
    if itercoe is None or editdist is None:
        return None
    return ens.lam * itercoe + (1.0 - ens.lam) * editdist


@dataclass(frozen=True)
class MethodScores:
    full: float | None
    cited: float | None


@dataclass(frozen=True)
class InstanceEvaluation:
    """Everything one instance's rating pass produced, for both scenarios."""

    instance_id: str
    labels: tuple[ContextLabel, ...]
    ratings: tuple[StatementRating, ...]
    editdist_scores: tuple[float | None, ...]
    ensemble_scores: tuple[float | None, ...]
    itercoe: MethodScores
    editdist: MethodScores
    ensemble: MethodScores
    length: int
    missing_ratio: float
    warnings: tuple[str, ...] = ()


def _aggregate_scores(
    scores: list[float | None], ratings: list[StatementRating], scenario: Scenario
) -> float | None:
    values = [
        s for s, r in zip(scores, ratings) if r.applicable(scenario) and s is not None
    ]
    return fmean(values) if values else None


def evaluate_instance(
    instance: EvalInstance,
    judge: Judge,
    editdist_model: EditDistModel | None = None,
    ensemble_model: EnsembleModel | None = None,
) -> InstanceEvaluation:
    """Attribute, edit-rate, score and aggregate one instance for both scenarios.

    Without an ``editdist_model`` the linear-model and ensemble scores are N/A;
    both scenario aggregates always come from the single rating pass.
    """
    labels = attribute_contexts(instance, judge)
    ratings = rate_itercoe(instance, labels, judge)
    citations = instance.citations_per_statement()

    warnings: list[str] = []
    editdist_scores: list[float | None] = []
    for stmt, rating in zip(instance.statements, ratings):
        adds = {a.reason for a in rating.actions if a.op is EditOp.ADD}
        has_delete = any(a.op is EditOp.DELETE for a in rating.actions)
        if EditReason.REFINEMENT in adds and not has_delete:
            message = (
                f"statement {stmt.index}: add-refinement without a paired delete"
            )
            warnings.append(message)
            logger.warning("%s: %s", instance.instance_id, message)
        if rating.normalized is None or editdist_model is None:
            editdist_scores.append(None)
            continue
        kept = kept_citation_count(stmt.citations, rating.actions)
        features = action_features(list(rating.actions), kept)
        editdist_scores.append(rate_editdist(features, editdist_model))

    if editdist_model is not None:
        for rating, score in zip(ratings, editdist_scores):
            if (rating.normalized is None) != (score is None):
                raise AlignmentError("rating methods disagree on the N/A mask")

    ensemble_scores: list[float | None] = [None] * len(ratings)
    if ensemble_model is not None and editdist_model is not None:
        ensemble_scores = [
            rate_ensemble(r.normalized, e, ensemble_model)
            for r, e in zip(ratings, editdist_scores)
        ]

    itercoe_full = aggregate_response(
        mask_for_scenario(ratings, labels, citations, Scenario.FULL), Scenario.FULL
    )
    itercoe_cited = aggregate_response(
        mask_for_scenario(ratings, labels, citations, Scenario.CITED), Scenario.CITED
    )
    length, missing_ratio = response_stats(instance)
    return InstanceEvaluation(
        instance_id=instance.instance_id,
        labels=tuple(labels),
        ratings=tuple(ratings),
        editdist_scores=tuple(editdist_scores),
        ensemble_scores=tuple(ensemble_scores),
        itercoe=MethodScores(full=itercoe_full, cited=itercoe_cited),
        editdist=MethodScores(
            full=_aggregate_scores(editdist_scores, ratings, Scenario.FULL),
            cited=_aggregate_scores(editdist_scores, ratings, Scenario.CITED),
        ),
        ensemble=MethodScores(
            full=_aggregate_scores(ensemble_scores, ratings, Scenario.FULL),
            cited=_aggregate_scores(ensemble_scores, ratings, Scenario.CITED),
        ),
        length=length,
        missing_ratio=missing_ratio,
        warnings=tuple(warnings),
    )
