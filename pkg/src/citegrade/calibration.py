"""Fits the action-distance model and the ensemble weight on annotated dev data.

Normal equations are exact at this scale (seven features); rank-deficient
designs fall back to a tiny ridge so degenerate dev sets still fit. Model files
are plain-text key-value records so fitted coefficients can ship as fixtures.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, UndefinedCorrelationError, UnderdeterminedError
from .rating import ACTION_KINDS, ActionFeatureVector, EditDistModel, EnsembleModel
from .stats import pearson

RIDGE_EPSILON = 1e-8
_CONDITION_LIMIT = 1e12


def fit_ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares coefficients and intercept via the normal equations.

    The design is augmented with a ones column for the intercept and solved as
    a symmetric positive-definite system; a rank-deficient or ill-conditioned
    normal matrix gets RIDGE_EPSILON added to its diagonal.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {X.shape} and {y.shape}")
    n, p = X.shape
    if n <= p + 1:
        raise UnderdeterminedError(f"need more than {p + 1} rows to fit {p} features, got {n}")
    Xa = np.hstack([X, np.ones((n, 1))])
    normal = Xa.T @ Xa
    rhs = Xa.T @ y
    ridged = False
    if not np.isfinite(normal).all():
        raise ValueError("design matrix contains non-finite values")
    if np.linalg.cond(normal) > _CONDITION_LIMIT:
        ridged = True
    if not ridged:
        try:
            np.linalg.cholesky(normal)
        except np.linalg.LinAlgError:
            ridged = True
    if ridged:
        normal = normal + RIDGE_EPSILON * np.eye(p + 1)
    solution = np.linalg.solve(normal, rhs)
    return solution[:-1], float(solution[-1])


def fit_edit_distances(
    dev: list[tuple[ActionFeatureVector, float]]
) -> EditDistModel:
    """Regress human Likert ratings on action-kind frequencies."""
    if not dev:
        raise InsufficientDataError("empty dev set")
    for _, likert in dev:
        if not 1.0 <= likert <= 5.0:
            raise ValueError(f"human likert ratings must lie in [1, 5], got {likert}")
    X = np.asarray([fv.freq for fv, _ in dev], dtype=float)
    y = np.asarray([likert for _, likert in dev], dtype=float)
    d, b = fit_ols(X, y)
    return EditDistModel(d=tuple(float(v) for v in d), b=b)


def fit_ensemble_lambda(
    dev: list[tuple[float, float, float]], grid_step: float = 0.01
) -> EnsembleModel:
    """Grid-search the blend weight maximizing Pearson with human ratings.

    Ties between grid points break toward 0.5. All triples must be fully
    observed; masking happens upstream.
    """
    if len(dev) < 3:
        raise InsufficientDataError(f"need at least 3 dev triples, got {len(dev)}")
    itercoe = np.asarray([t[0] for t in dev], dtype=float)
    editdist = np.asarray([t[1] for t in dev], dtype=float)
    human = [t[2] for t in dev]
    steps = round(1.0 / grid_step)
    correlations: list[tuple[float, float]] = []
    for i in range(steps + 1):
        lam = i / steps
        blend = lam * itercoe + (1.0 - lam) * editdist
        try:
            correlations.append((lam, pearson(blend, human)))
        except UndefinedCorrelationError:
            continue
    if not correlations:
        raise UndefinedCorrelationError("every candidate blend is constant on dev")
    best = max(c for _, c in correlations)
    tied = [lam for lam, c in correlations if c >= best - 1e-12]
    return EnsembleModel(lam=min(tied, key=lambda lam: (abs(lam - 0.5), lam)))


def save_model_file(path: str | Path, values: dict[str, float]) -> None:
    """One ``name<TAB>value`` line per coefficient; floats use repr for round-trip."""
    lines = [f"{name}\t{value!r}" for name, value in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model_file(path: str | Path) -> dict[str, float]:
    values: dict[str, float] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, _, value = line.partition("\t")
        if not value:
            raise ValueError(f"malformed model line {line!r}")
        values[name.strip()] = float(value)
    return values


def save_editdist_model(path: str | Path, model: EditDistModel) -> None:
    record = dict(zip(ACTION_KINDS, model.d))
    record["bias"] = model.b
    save_model_file(path, record)


def load_editdist_model(path: str | Path) -> EditDistModel:
    values = load_model_file(path)
    missing = [k for k in (*ACTION_KINDS, "bias") if k not in values]
    if missing:
        raise ValueError(f"model file {path} missing entries {missing}")
    return EditDistModel(d=tuple(values[k] for k in ACTION_KINDS), b=values["bias"])


def save_ensemble_model(path: str | Path, model: EnsembleModel) -> None:
    save_model_file(path, {"lambda": model.lam})


def load_ensemble_model(path: str | Path) -> EnsembleModel:
    values = load_model_file(path)
    if "lambda" not in values:
        raise ValueError(f"model file {path} missing 'lambda'")
    return EnsembleModel(lam=values["lambda"])
