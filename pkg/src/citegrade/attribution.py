"""Whole-response context attribution: one judge pass labels every statement.

All statements go into a single prompt so the judge can resolve coreference
across them; citations are stripped from statement texts beforehand to avoid
biasing the judge toward the retrieval context.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import prompts
from .core import ContextLabel, EvalInstance
from .errors import AlignmentError, AttributionIncompleteError, DegenerateInstanceError, ParseError
from .gateway import Judge, PromptTemplate, PromptTemplateId, parse_tagged_blocks, render_prompt

ATTRIBUTION_PROMPT = PromptTemplate(
    template_id=PromptTemplateId.ATTRIBUTION, body=prompts.ATTRIBUTION_TEMPLATE
)

_INT_RE = re.compile(r"-?\d+")


def build_attribution_prompt(instance: EvalInstance) -> str:
    return render_prompt(
        ATTRIBUTION_PROMPT,
        {
            "User Query": instance.query,
            "Retrieved Passages": prompts.render_passages(instance.passages),
            "Response Sentences": prompts.render_sentences(
                s.text_clean for s in instance.statements
            ),
        },
    )


def _labels_from_transcript(text: str, n_statements: int) -> list[ContextLabel]:
    blocks = parse_tagged_blocks(text, {"category"})
    by_id: dict[int, ContextLabel] = {}
    for block in blocks:
        sid = block.int_attr("sentence_id")
        if sid < 1 or sid > n_statements:
            raise ParseError(f"category block for unknown sentence_id {sid}", block.body)
        if sid in by_id:
            raise ParseError(f"duplicate category block for sentence_id {sid}", block.body)
        m = _INT_RE.search(block.body)
        if m is None:
            raise ParseError("category block body carries no label", block.body)
        value = int(m.group(0))
        if value not in (1, 2, 3, 4):
            raise ParseError(f"category {value} outside 1..4", block.body)
        by_id[sid] = ContextLabel(value)
    missing = sorted(set(range(1, n_statements + 1)) - by_id.keys())
    if missing:
        raise AttributionIncompleteError(f"no category blocks for sentences {missing}")
    return [by_id[i] for i in range(1, n_statements + 1)]


def attribute_contexts(instance: EvalInstance, judge: Judge) -> list[ContextLabel]:
    """Label every statement with its context type in one judge pass.

    An incomplete transcript triggers one fresh retry (bypassing the cache)
    before the instance fails; there is no silent default label.
    """
    if not instance.statements:
        raise DegenerateInstanceError(f"instance {instance.instance_id} has no statements")
    prompt = build_attribution_prompt(instance)
    for fresh in (False, True):
        text = judge.complete_text(prompt, fresh=fresh)
        try:
            return _labels_from_transcript(text, len(instance.statements))
        except AttributionIncompleteError:
            if fresh:
                raise
    raise AssertionError("unreachable")


def applicability(labels: list[ContextLabel]) -> list[bool]:
    """Pointwise citability: true iff the statement is attributed to retrieval."""
    return [label is ContextLabel.RETRIEVAL for label in labels]


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ConfusionReport:
    """Binary applicable/not-applicable confusion against gold labels."""

    applicable: ClassMetrics
    not_applicable: ClassMetrics
    macro: ClassMetrics
    n_items: int


def _prf(tp: int, fp: int, fn: int) -> ClassMetrics:
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassMetrics(precision=precision, recall=recall, f1=f1)


def attribution_confusion(
    pred: list[ContextLabel], gold: list[ContextLabel]
) -> ConfusionReport:
    """Collapse {query, response, parametric} into one class and score both classes."""
    if len(pred) != len(gold):
        raise AlignmentError(f"pred/gold lengths differ: {len(pred)}/{len(gold)}")
    tp = fp = fn = tn = 0
    for p, g in zip(pred, gold):
        p_app = p is ContextLabel.RETRIEVAL
        g_app = g is ContextLabel.RETRIEVAL
        if p_app and g_app:
            tp += 1
        elif p_app and not g_app:
            fp += 1
        elif not p_app and g_app:
            fn += 1
        else:
            tn += 1
    applicable = _prf(tp, fp, fn)
    not_applicable = _prf(tn, fn, fp)
    macro = ClassMetrics(
        precision=(applicable.precision + not_applicable.precision) / 2,
        recall=(applicable.recall + not_applicable.recall) / 2,
        f1=(applicable.f1 + not_applicable.f1) / 2,
    )
    return ConfusionReport(
        applicable=applicable, not_applicable=not_applicable, macro=macro, n_items=len(pred)
    )
