"""Deterministic response post-processing: thinking-block removal, statement
segmentation, and bracket-citation extraction/stripping.

Segmentation is rule-based so results are identical across platforms; the
abbreviation list approximates a statistical sentence tokenizer's behavior.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core import Statement

_THINK_OPEN = "<thinking>"
_THINK_CLOSE = "</thinking>"

_CITATION_RE = re.compile(r"\[(\d+)\]")
_CITATION_SPAN_RE = re.compile(r"\[\d+\]")
_TRAILING_CITATION_RE = re.compile(r"\s*\[\d+\]")

DEFAULT_ABBREVIATIONS = frozenset(
    {
        "e.g.", "i.e.", "etc.", "cf.", "vs.", "al.", "ca.", "approx.",
        "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "no.", "fig.", "figs.",
        "eq.", "sec.", "vol.", "pp.", "jr.", "sr.", "inc.", "ltd.", "co.",
    }
)


@dataclass(frozen=True)
class SegmenterConfig:
    """Controls statement segmentation."""

    abbreviation_list: frozenset[str] = DEFAULT_ABBREVIATIONS
    min_statement_chars: int = 2

    def __post_init__(self) -> None:
        if self.min_statement_chars < 1:
            raise ValueError("min_statement_chars must be >= 1")


DEFAULT_SEGMENTER = SegmenterConfig()


def strip_thinking(response_raw: str) -> str:
    """Remove every ``<thinking>...</thinking>`` span, inclusive.

    An unmatched opening marker removes through the end of the text. Runs of
    horizontal whitespace left at the seams are collapsed and the result is
    trimmed, which makes the operation idempotent.
    """
    parts = []
    i = 0
    while True:
        start = response_raw.find(_THINK_OPEN, i)
        if start < 0:
            parts.append(response_raw[i:])
            break
        parts.append(response_raw[i:start])
        end = response_raw.find(_THINK_CLOSE, start + len(_THINK_OPEN))
        if end < 0:
            break
        i = end + len(_THINK_CLOSE)
    text = "".join(parts)
    text = re.sub(r"[ \t]{2,}", " ", text)
    return text.strip()


def _ends_with_abbreviation(text: str, dot_index: int, abbreviations: frozenset[str]) -> bool:
    token_start = text.rfind(" ", 0, dot_index) + 1
    token = text[token_start : dot_index + 1]
    return token.casefold() in abbreviations


def segment_statements(response: str, cfg: SegmenterConfig = DEFAULT_SEGMENTER) -> list[str]:
    """Split a response into statements at sentence-final punctuation.

    A boundary is sentence-final punctuation (``. ! ?``), optionally followed
    by bracketed citations, then whitespace and an uppercase letter or digit.
    Abbreviation-list entries never end a statement. Joining the output with
    single spaces reproduces the whitespace-normalized input exactly.
    """
    text = " ".join(response.split())
    if not text:
        return []
    abbreviations = frozenset(a.casefold() for a in cfg.abbreviation_list)
    n = len(text)
    boundaries = []
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        j = i + 1
        while True:
            m = _TRAILING_CITATION_RE.match(text, j)
            if not m:
                break
            j = m.end()
        if j >= n or text[j] != " ":
            continue
        nxt = text[j + 1]
        if not (nxt.isupper() or nxt.isdigit()):
            continue
        if ch == "." and _ends_with_abbreviation(text, i, abbreviations):
            continue
        boundaries.append(j)

    segments = []
    start = 0
    for b in boundaries:
        segment = text[start:b]
        if len(segment) < cfg.min_statement_chars:
            continue
        segments.append(segment)
        start = b + 1
    segments.append(text[start:])
    return segments


def scan_citations(statement: str, max_id: int) -> tuple[set[int], list[int]]:
    """Extract in-range ``[k]`` citation ids plus the out-of-range ids dropped."""
    if max_id < 1:
        raise ValueError(f"max_id must be >= 1, got {max_id}")
    kept: set[int] = set()
    dropped: list[int] = []
    for m in _CITATION_RE.finditer(statement):
        k = int(m.group(1))
        if 1 <= k <= max_id:
            kept.add(k)
        else:
            dropped.append(k)
    return kept, dropped


def extract_citations(statement: str, max_id: int) -> set[int]:
    """All distinct ids cited as ``[k]`` with 1 <= k <= max_id."""
    kept, _ = scan_citations(statement, max_id)
    return kept


def strip_citations(statement: str) -> str:
    """Remove every ``[digits]`` span, collapsing the whitespace left behind."""
    out = _CITATION_SPAN_RE.sub("", statement)
    out = re.sub(r" {2,}", " ", out)
    out = re.sub(r" +([.!?,;:])", r"\1", out)
    return out.strip()


def derive_statements(
    response_raw: str, max_id: int, cfg: SegmenterConfig = DEFAULT_SEGMENTER
) -> tuple[Statement, ...]:
    """Post-process a raw response into Statement values.

    Thinking blocks are removed first, then the response is segmented and each
    statement's citations are extracted (out-of-range ids silently dropped).
    """
    cleaned = strip_thinking(response_raw)
    statements = []
    for idx, segment in enumerate(segment_statements(cleaned, cfg), start=1):
        citations = extract_citations(segment, max_id)
        statements.append(
            Statement(
                index=idx,
                text_with_citations=segment,
                text_clean=strip_citations(segment),
                citations=frozenset(citations),
            )
        )
    return tuple(statements)
