"""Downstream metrics and the fits used to relate them to pretraining loss."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import stats

from molpretrain.errors import InputError, ShapeError
from molpretrain.featurize.normalizer import NormStats


def _pair(a: np.ndarray, b: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {a.size} values vs {b.size} values")
    if a.size == 0:
        raise InputError(f"{what} needs at least one value")
    return a, b


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Balanced weights ``N / (2 * N_c)`` for the classes 0 and 1.

    Raises
    ------
    InputError
        If the labels are not binary or only one class is present
    """
    labels = np.asarray(labels).reshape(-1)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise InputError("binary labels must be 0 or 1")
    counts = np.bincount(labels.astype(np.int64), minlength=2)
    if (counts == 0).any():
        raise InputError(f"both classes must be present in the train split, got counts {counts.tolist()}")
    return labels.size / (2.0 * counts)


def rmse(pred: np.ndarray, label: np.ndarray, norm: NormStats | None = None) -> float:
    """Root mean squared error, on the original scale when ``norm`` is given.

    With ``norm`` the predictions are taken to be standardised and are mapped
    back with :meth:`NormStats.invert` before comparing with ``label``.
    """
    pred, label = _pair(pred, label, "rmse")
    if norm is not None:
        pred = norm.invert(pred.reshape(-1, 1)).reshape(-1)
    return float(np.sqrt(np.mean((pred - label) ** 2)))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Exact ROC-AUC as the Mann-Whitney statistic.

    The fraction of (positive, negative) pairs in which the positive scores
    higher, with ties counted as one half. Computed from mid-ranks, so it
    equals exhaustive pair counting.

    Raises
    ------
    InputError
        If one of the classes is absent
    """
    scores, labels = _pair(scores, labels, "roc_auc")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise InputError("roc_auc labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise InputError("roc_auc needs both classes")
    ranks = stats.rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r: float


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """Ordinary least squares line through ``(x, y)`` and the Pearson correlation.

    Raises
    ------
    InputError
        With fewer than two points or constant ``x``
    """
    x, y = _pair(x, y, "linear_fit")
    if x.size < 2:
        raise InputError("linear_fit needs at least two points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx <= 1e-300:
        raise InputError("linear_fit: x values are all equal")
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    syy = float(dy @ dy)
    r = float(dx @ dy) / np.sqrt(sxx * syy) if syy > 0 else 0.0
    return LinearFit(slope, intercept, float(np.clip(r, -1.0, 1.0)))


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x, y = _pair(x, y, "spearman")
    if x.size < 2:
        raise InputError("spearman needs at least two points")
    return float(stats.spearmanr(x, y)[0])
