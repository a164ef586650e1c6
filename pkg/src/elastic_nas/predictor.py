"""Accuracy prediction for the search loop: one-hot features + ridge regression.

The size objective is never predicted; it is exact arithmetic in `archspace`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .archspace import ArchGenome, SearchSpaceSpec, validate_genome

LAMBDA_FLOOR = 1e-6
DEFAULT_LAMBDA = 1e-3


def feature_length(space: SearchSpaceSpec) -> int:
    return len(space.layer_choices) + space.dims.max_layers * len(space.inter_choices)


def featurize(genome: ArchGenome, space: SearchSpaceSpec) -> np.ndarray:
    """One-hot encoding with inactive slot blocks zeroed.

    Layout: layer-count block, then one block of |inter_choices| bits per
    layer slot. Slots at or beyond the layer count stay all-zero, so
    phenotype-equal genomes map to identical vectors.
    """
    validate_genome(genome, space)
    n_inter = len(space.inter_choices)
    x = np.zeros(feature_length(space))
    x[space.layer_choices.index(genome.layer_count)] = 1.0
    base = len(space.layer_choices)
    for slot in range(genome.layer_count):
        idx = space.inter_choices.index(genome.inter_sizes[slot])
        x[base + slot * n_inter + idx] = 1.0
    return x


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float
    n_train: int


def fit(records: list[tuple[np.ndarray, float]], lam: float = DEFAULT_LAMBDA) -> RidgeModel:
    """Closed-form ridge on centered features; lam is floored at 1e-6."""
    if len(records) < 2:
        raise ValueError("need at least 2 records to fit")
    lam = max(float(lam), LAMBDA_FLOOR)
    x = np.asarray([r[0] for r in records], dtype=np.float64)
    y = np.asarray([r[1] for r in records], dtype=np.float64)
    xm = x.mean(axis=0)
    ym = float(y.mean())
    xc = x - xm
    yc = y - ym
    a = xc.T @ xc + lam * np.eye(x.shape[1])
    rhs = xc.T @ yc
    w = np.linalg.solve(a, rhs)
    resid = np.linalg.norm(a @ w - rhs)
    if resid > 1e-8 * max(np.linalg.norm(rhs), 1.0):
        raise ArithmeticError(f"normal-equation residual {resid:.3e} too large")
    return RidgeModel(weights=w, intercept=ym - float(w @ xm), lam=lam, n_train=len(records))


def predict(model: RidgeModel, genome: ArchGenome, space: SearchSpaceSpec) -> float:
    """Predicted accuracy, clamped to [0, 1]."""
    raw = float(model.weights @ featurize(genome, space)) + model.intercept
    return min(1.0, max(0.0, raw))


def predict_features(model: RidgeModel, x: np.ndarray) -> float:
    raw = float(model.weights @ x) + model.intercept
    return min(1.0, max(0.0, raw))


def cv_mae(records: list[tuple[np.ndarray, float]], folds: int = 5, lam: float = DEFAULT_LAMBDA) -> float:
    """Mean absolute error over deterministic contiguous folds."""
    n = len(records)
    if n < folds:
        raise ValueError(f"need at least {folds} records for {folds}-fold CV")
    errors = []
    bounds = [round(i * n / folds) for i in range(folds + 1)]
    for f in range(folds):
        lo, hi = bounds[f], bounds[f + 1]
        train = records[:lo] + records[hi:]
        model = fit(train, lam)
        for x, y in records[lo:hi]:
            errors.append(abs(predict_features(model, x) - y))
    return float(np.mean(errors))
