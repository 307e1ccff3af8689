"""Tuning-parameter selection strategies.

Four rules: the theory rate ``lambda_as(n) = (log n)^{5/2} / n``; the
known-target rule seeking the largest penalty that still detects K changes;
the simulation-only oracle minimizing true-signal MSE over a grid; and a
BIC rule for real data.  Grid/bisection brackets are scale-free: the upper
end is the smallest power of two yielding zero changes, the lower end is
2^16 below it.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .detect import DetectorConfig, detect_two_stage
from .metrics import prediction_metrics
from .model import CoefficientPath, Dataset, TrueSegmentation
from .objective import PenaltySpec, check_loss
from .solver import FitResult, solve

__all__ = [
    "lambda_as",
    "lambda_for_k_changes",
    "lambda_oracle_mse",
    "lambda_bic",
    "default_grid",
    "PipelineFit",
]

_BRACKET_SPAN = 2**16


def lambda_as(n: int) -> float:
    """Theory-rate tuning value ``(log n)^{5/2} / n`` (natural log)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return math.log(n) ** 2.5 / n


class PipelineFit:
    """Uniform view over the three estimation pipelines.

    ``kind`` is one of ``fused`` (single-stage quantile), ``adaptive``
    (two-stage; the same lambda drives both stages) or ``squared`` (the
    conditional-mean baseline).  Exposes the detected change set and the
    full coefficient path regardless of pipeline.
    """

    def __init__(self, kind: str, lam: float, data: Dataset, config: DetectorConfig):
        if kind not in ("fused", "adaptive", "squared"):
            raise ValueError(f"unknown pipeline kind {kind!r}")
        self.kind = kind
        self.lam = lam
        self._stage1 = None
        self.diagnostics: dict = {}
        if kind == "adaptive":
            stage1, stage2, diag = detect_two_stage(data, lam, lam, config)
            self._stage1 = stage1
            self.diagnostics = diag
            self.changes = stage2.changes
            self.path = stage2.coefficient_path()
            self.converged = diag["stage2_converged"]
            self.fit: FitResult = diag["stage2_fit"]
        else:
            loss = "quantile" if kind == "fused" else "squared"
            penalty = PenaltySpec(lam=lam, loss=loss, tau=config.tau)
            fit = solve(data, penalty, config.solver)
            self.fit = fit
            self.changes = fit.active_set
            self.path = fit.path
            self.converged = fit.converged

    @property
    def n_changes(self) -> int:
        return len(self.changes)


def _fit_pipeline(
    data: Dataset, lam: float, pipeline: str, config: DetectorConfig, warm=None
) -> PipelineFit:
    if warm is not None and pipeline != "adaptive":
        config = replace(config, solver=replace(config.solver, warm_start=warm))
    return PipelineFit(pipeline, lam, data, config)


def _bracket_high(data, pipeline, config):
    """Smallest power of two with zero detected changes."""
    lam = 1.0
    fit = _fit_pipeline(data, lam, pipeline, config)
    if fit.n_changes == 0:
        while lam > 2.0**-30:
            candidate = _fit_pipeline(data, lam / 2.0, pipeline, config)
            if candidate.n_changes > 0:
                break
            lam /= 2.0
            fit = candidate
        return lam, fit
    while lam < 2.0**40:
        lam *= 2.0
        fit = _fit_pipeline(data, lam, pipeline, config)
        if fit.n_changes == 0:
            return lam, fit
    return lam, fit


def default_grid(data: Dataset, pipeline: str = "fused", config: DetectorConfig | None = None, num: int = 30) -> np.ndarray:
    """Log-spaced grid between the scale-free bracket ends."""
    if config is None:
        config = DetectorConfig()
    hi, _ = _bracket_high(data, pipeline, config)
    lo = hi / _BRACKET_SPAN
    return np.geomspace(lo, hi, num)


def lambda_for_k_changes(
    data: Dataset,
    k: int,
    config: DetectorConfig | None = None,
    pipeline: str = "fused",
    max_bisect: int = 40,
) -> tuple[float, PipelineFit]:
    """Largest penalty whose fit detects (as close as possible to) K changes.

    Bisects log-lambda between the scale-free bracket ends, maintaining
    count >= K at the low end; among evaluated penalties those hitting K
    exactly win (largest such), otherwise the nearest count with ties
    toward larger lambda.
    """
    if k < 0:
        raise ValueError("K must be >= 0")
    if data.n < 2:
        raise ValueError("empty data")
    if config is None:
        config = DetectorConfig()
    hi, hi_fit = _bracket_high(data, pipeline, config)
    if k == 0:
        return hi, hi_fit
    evaluated = [(hi, hi_fit)]
    lo = hi / _BRACKET_SPAN
    lo_fit = _fit_pipeline(data, lo, pipeline, config)
    evaluated.append((lo, lo_fit))
    if lo_fit.n_changes < k:
        # even the weakest penalty cannot reach K; fall through to nearest
        pass
    else:
        llo, lhi = math.log(lo), math.log(hi)
        warm = lo_fit.fit
        for _ in range(max_bisect):
            lmid = 0.5 * (llo + lhi)
            mid = math.exp(lmid)
            fit = _fit_pipeline(data, mid, pipeline, config, warm=warm)
            warm = fit.fit
            evaluated.append((mid, fit))
            if fit.n_changes >= k:
                llo = lmid
            else:
                lhi = lmid
            if fit.n_changes == k and (lhi - llo) < 1e-3:
                break
    exact = [(lam, f) for lam, f in evaluated if f.n_changes == k]
    if exact:
        return max(exact, key=lambda t: t[0])
    best = min(
        evaluated, key=lambda t: (abs(t[1].n_changes - k), -t[0])
    )
    return best[0], best[1]


def lambda_oracle_mse(
    data: Dataset,
    truth: TrueSegmentation,
    grid,
    pipeline: str = "fused",
    config: DetectorConfig | None = None,
) -> tuple[float, PipelineFit]:
    """Grid value minimizing the true-signal MSE (simulation-only oracle).

    Ties break toward the larger penalty.
    """
    if truth is None:
        raise ValueError("the MSE oracle requires the true segmentation")
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    if grid.size == 0:
        raise ValueError("empty grid")
    if config is None:
        config = DetectorConfig()
    truth_path = CoefficientPath.from_beta(truth.coefficient_path(data.n))
    best = None
    warm = None
    for lam in grid:
        fit = _fit_pipeline(data, float(lam), pipeline, config, warm=warm)
        warm = fit.fit
        _, mse = prediction_metrics(truth_path, fit.path, data)
        if best is None or mse < best[2]:
            best = (float(lam), fit, mse)
    return best[0], best[1]


def lambda_bic(
    data: Dataset,
    grid,
    pipeline: str = "fused",
    config: DetectorConfig | None = None,
) -> tuple[float, PipelineFit]:
    """Information-criterion selection over a grid (data-driven fallback).

    Minimizes ``n*log(loss/n) + |changes| * p * log(n)`` where the loss is
    the fitted check loss (or residual sum of squares for the squared
    pipeline); ties break toward the larger penalty.
    """
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    if grid.size == 0:
        raise ValueError("empty grid")
    if config is None:
        config = DetectorConfig()
    n, p = data.n, data.p
    best = None
    warm = None
    for lam in grid:
        fit = _fit_pipeline(data, float(lam), pipeline, config, warm=warm)
        warm = fit.fit
        resid = data.y - fit.path.fitted_values(data.x)
        if pipeline == "squared":
            loss = float(resid @ resid)
        else:
            loss = float(np.sum(check_loss(resid, config.tau)))
        loss = max(loss, 1e-12)
        bic = n * math.log(loss / n) + fit.n_changes * p * math.log(n)
        if best is None or bic < best[2]:
            best = (float(lam), fit, bic)
    return best[0], best[1]
