"""Regression metrics and the series-similarity measures used in the case study."""

from __future__ import annotations

import numpy as np

from tenet.numerics import as_vec

EPS = 1e-9


class UndefinedMetricError(ValueError):
    pass


def _pair(preds, ys):
    p, y = as_vec(preds), as_vec(ys)
    if p.size != y.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} targets")
    if p.size == 0:
        raise ValueError("empty input")
    return p, y


def n_excluded(ys, eps=EPS) -> int:
    """Targets too close to zero to enter relative metrics."""
    return int(np.sum(np.abs(as_vec(ys)) <= eps))


def hit_rate(preds, ys, p: float, eps=EPS) -> float:
    """Percentage of predictions within ``p * |y|`` of the target.

    Targets with ``|y| <= eps`` are left out of numerator and denominator.
    """
    pr, y = _pair(preds, ys)
    keep = np.abs(y) > eps
    if not keep.any():
        raise UndefinedMetricError("hit rate undefined: every target is zero")
    hits = np.abs(pr[keep] - y[keep]) <= p * np.abs(y[keep])
    return 100.0 * hits.mean()


def mre(preds, ys, eps=EPS) -> float:
    pr, y = _pair(preds, ys)
    keep = np.abs(y) > eps
    if not keep.any():
        raise UndefinedMetricError("MRE undefined: every target is zero")
    return float(np.mean(np.abs(pr[keep] - y[keep]) / np.abs(y[keep])))


def mse(preds, ys) -> float:
    pr, y = _pair(preds, ys)
    return float(np.mean((pr - y) ** 2))


def pearson(a, b) -> float:
    x, y = _pair(a, b)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise UndefinedMetricError("correlation undefined for a constant series")
    return float(xc @ yc / (sx * sy))


def intersection(a, b) -> float:
    x, y = _pair(a, b)
    return float(np.minimum(x, y).sum())


def l2_distance(a, b) -> float:
    """Euclidean distance; what the case-study table labels "squared error"."""
    x, y = _pair(a, b)
    return float(np.linalg.norm(x - y))


def moving_average(series, window: int = 3) -> np.ndarray:
    """Centred moving average, windows truncated at the edges."""
    x = as_vec(series)
    if x.size == 0:
        raise ValueError("empty series")
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, x.size)
    return (c[hi] - c[lo]) / (hi - lo)
