"""Evaluation metrics: set distance, detection error, prediction accuracy.

The set distance is one-sided: ``E(A||B) = sup_{b in B} inf_{a in A}
|a - b|`` measures how well A covers B (0 iff every b has an exact match
in A).  Detection error and the prediction bias/MSE follow the Monte Carlo
study's definitions; detection error is reported on the rescaled domain
t/n and only for fits that found at least as many changes as the truth.
"""

from __future__ import annotations

import math

import numpy as np

from .model import ChangePointSet, CoefficientPath, Dataset

__all__ = [
    "set_distance",
    "detection_error",
    "prediction_metrics",
    "jump_summary",
]


def set_distance(a: ChangePointSet, b: ChangePointSet) -> float:
    """One-sided distance ``sup_{t in b} min_{s in a} |s - t|``.

    Returns ``inf`` when a is empty (nothing covers b); b must be nonempty.
    """
    if len(b) == 0:
        raise ValueError("reference set must be nonempty")
    if len(a) == 0:
        return math.inf
    av = np.asarray(a.indices, dtype=float)
    bv = np.asarray(b.indices, dtype=float)
    return float(np.abs(av[:, None] - bv[None, :]).min(axis=0).max())


def detection_error(
    est: ChangePointSet, truth: ChangePointSet, n: int
) -> float | None:
    """Mean rescaled distance from each true change to its nearest estimate.

    Defined only when at least ``|truth|`` changes were detected (None
    otherwise, so callers can exclude the replication from averages).
    """
    k = len(truth)
    if k == 0:
        raise ValueError("truth must contain at least one change-point")
    if len(est) < k:
        return None
    ev = np.asarray(est.indices, dtype=float)
    tv = np.asarray(truth.indices, dtype=float)
    nearest = np.abs(ev[:, None] - tv[None, :]).min(axis=0)
    return float(nearest.sum() / (k * n))


def prediction_metrics(
    truth_path: CoefficientPath, est_path: CoefficientPath, data: Dataset
) -> tuple[float, float]:
    """Empirical bias and MSE of fitted values against the true signal.

    bias = mean(x_i' beta*_i - x_i' beta^_i), MSE = mean of the squares.
    """
    if truth_path.beta.shape != est_path.beta.shape:
        raise ValueError("paths have different shapes")
    if truth_path.beta.shape != data.x.shape:
        raise ValueError("paths do not match the dataset")
    diff = truth_path.fitted_values(data.x) - est_path.fitted_values(data.x)
    return float(diff.mean()), float((diff**2).mean())


def jump_summary(counts) -> tuple[int, int, int]:
    """(min, median, max) of detected change counts; the median is the
    lower-middle order statistic for even lengths."""
    counts = sorted(int(c) for c in counts)
    if not counts:
        raise ValueError("empty count list")
    return counts[0], counts[(len(counts) - 1) // 2], counts[-1]
