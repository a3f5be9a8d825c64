"""Correlation and agreement statistics for meta-evaluation.

Kendall's coefficient uses the tie-adjusted tau-b form since Likert data is
tie-heavy; Spearman is Pearson over midranks. Krippendorff's alpha supports
missing entries and nominal/interval distance functions.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import EmptyComparisonError, UndefinedCorrelationError


def _as_pair(x: Sequence[float], y: Sequence[float], min_n: int) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.ndim != 1 or ya.ndim != 1:
        raise ValueError("inputs must be one-dimensional")
    if len(xa) != len(ya):
        raise ValueError(f"input lengths differ: {len(xa)}/{len(ya)}")
    if len(xa) < min_n:
        raise UndefinedCorrelationError(f"need at least {min_n} observations, got {len(xa)}")
    return xa, ya


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; undefined for constant inputs."""
    xa, ya = _as_pair(x, y, min_n=2)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt((xc * xc).sum()))
    sy = float(np.sqrt((yc * yc).sum()))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return float((xc * yc).sum() / (sx * sy))


def midranks(values: Sequence[float]) -> np.ndarray:
    """Ranks starting at 1, with ties sharing the average of their positions."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=float)
    i = 0
    n = len(v)
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of midrank-transformed inputs."""
    xa, ya = _as_pair(x, y, min_n=2)
    return pearson(midranks(xa), midranks(ya))


def _tied_pair_count(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tau-b: (concordant - discordant) / sqrt((n0 - n1)(n0 - n2)).

    n0 is the total pair count and n1/n2 the tied-pair counts within x/y.
    Quadratic in n; fine at corpus scale.
    """
    xa, ya = _as_pair(x, y, min_n=2)
    n = len(xa)
    dx = np.sign(xa[:, None] - xa[None, :]).astype(np.int8)
    dy = np.sign(ya[:, None] - ya[None, :]).astype(np.int8)
    product = dx * dy
    upper = np.triu_indices(n, k=1)
    concordant = int((product[upper] > 0).sum())
    discordant = int((product[upper] < 0).sum())
    n0 = n * (n - 1) // 2
    n1 = _tied_pair_count(xa)
    n2 = _tied_pair_count(ya)
    if n0 == n1 or n0 == n2:
        raise UndefinedCorrelationError("tau-b is undefined when all pairs are tied")
    return (concordant - discordant) / math.sqrt((n0 - n1) * (n0 - n2))


def krippendorff_alpha(
    ratings: Sequence[Sequence[object]], level: str = "nominal"
) -> float:
    """Chance-corrected agreement over a raters-by-items matrix with missing entries.

    Missing entries are None (or NaN). Distance is 0/1 for ``nominal`` and
    squared difference for ``interval``. Items with fewer than two observed
    values do not pair and are skipped.
    """
    if level not in ("nominal", "interval"):
        raise ValueError(f"level must be 'nominal' or 'interval', got {level!r}")
    if len(ratings) < 2:
        raise ValueError("need at least two raters")
    n_items = max((len(row) for row in ratings), default=0)
    units: list[list[object]] = []
    for item in range(n_items):
        values = []
        for row in ratings:
            if item >= len(row):
                continue
            v = row[item]
            if v is None or (isinstance(v, float) and math.isnan(v)):
                continue
            values.append(v)
        if len(values) >= 2:
            units.append(values)
    n = sum(len(u) for u in units)
    if n == 0:
        raise UndefinedCorrelationError("no pairable values")

    if level == "nominal":
        observed = 0.0
        for unit in units:
            counts = Counter(unit)
            m = len(unit)
            disagreements = m * m - sum(c * c for c in counts.values())
            observed += disagreements / (m - 1)
        observed /= n
        pooled = Counter(v for unit in units for v in unit)
        expected = (n * n - sum(c * c for c in pooled.values())) / (n * (n - 1))
    else:
        observed = 0.0
        for unit in units:
            v = np.asarray(unit, dtype=float)
            m = len(v)
            disagreements = 2 * m * float((v * v).sum()) - 2 * float(v.sum()) ** 2
            observed += disagreements / (m - 1)
        observed /= n
        pooled_v = np.asarray([v for unit in units for v in unit], dtype=float)
        expected = (
            2 * n * float((pooled_v * pooled_v).sum()) - 2 * float(pooled_v.sum()) ** 2
        ) / (n * (n - 1))

    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


@dataclass(frozen=True)
class CorrelationReport:
    """The three correlations over paired non-N/A values, plus pairing diagnostics."""

    level: str
    scenario: str | None
    pearson: float
    spearman: float
    kendall: float
    n_pairs: int
    n_dropped: int

    def row(self) -> tuple[str, ...]:
        return (
            self.level,
            self.scenario or "-",
            f"{self.pearson:.6f}",
            f"{self.spearman:.6f}",
            f"{self.kendall:.6f}",
            str(self.n_pairs),
            str(self.n_dropped),
        )


def meta_evaluate(
    metric_scores: Mapping[object, float | None],
    human_scores: Mapping[object, float | None],
    level: str = "response",
    scenario: str | None = None,
) -> CorrelationReport:
    """Correlate metric scores with human scores over their shared non-N/A keys.

    Keys where exactly one side has a value (mask disagreement or a missing
    record) are dropped and counted separately.
    """
    xs: list[float] = []
    ys: list[float] = []
    dropped = 0
    for key in sorted(set(metric_scores) | set(human_scores), key=repr):
        m = metric_scores.get(key)
        h = human_scores.get(key)
        if m is not None and h is not None:
            xs.append(float(m))
            ys.append(float(h))
        elif m is not None or h is not None:
            dropped += 1
    if not xs:
        raise EmptyComparisonError("zero pairable values between metric and human scores")
    return CorrelationReport(
        level=level,
        scenario=scenario,
        pearson=pearson(xs, ys),
        spearman=spearman(xs, ys),
        kendall=kendall_tau(xs, ys),
        n_pairs=len(xs),
        n_dropped=dropped,
    )
