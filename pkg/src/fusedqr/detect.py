"""Estimation pipelines: single-stage and two-stage adaptive detection.

Stage 1 solves the unweighted fused problem, reads off the raw change-point
set, merges clustered estimates (neighbours closer than a gap g collapse
onto the cluster head) and assigns per-segment coefficients.  Stage 2
rebuilds per-difference weights ``w_i = max(||theta_i||_inf, d_n)^(-gamma)``
from the merged stage-1 path and solves the weighted problem; its change
set is the final estimate.  An optional refit replaces the shrunken
penalized coefficients with exact per-segment quantile regressions.

Default rate sequences: ``d_n = n^(-1/2)`` (weight floor), merge gap
``ceil(log(n)^2)`` and ``delta_n = (log n)^3 / n`` (diagnostics only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ChangePointSet, CoefficientPath, Dataset, TrueSegmentation
from .objective import PenaltySpec
from .solver import FitResult, SolverConfig, quantile_regression, solve

__all__ = [
    "DetectorConfig",
    "SegmentedFit",
    "AdaptiveWeights",
    "extract_change_points",
    "merge_clustered",
    "segment_coefficients",
    "adaptive_weights",
    "detect_two_stage",
    "refit_segments",
    "assumption_diagnostics",
]


@dataclass(frozen=True)
class DetectorConfig:
    """Pipeline tuning: quantile level, weight construction and merging.

    ``d_n``, ``merge_gap`` and ``delta_n`` are rules of n by default; pass
    explicit values to override.
    """

    tau: float = 0.5
    gamma: float = 1.0
    d_n: float | None = None
    merge_gap: int | None = None
    k_max: int | None = None
    refit: bool = False
    delta_n: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.merge_gap is not None and self.merge_gap < 1:
            raise ValueError("merge gap must be >= 1")

    def d_n_value(self, n: int) -> float:
        return self.d_n if self.d_n is not None else n ** -0.5

    def merge_gap_value(self, n: int) -> int:
        if self.merge_gap is not None:
            return int(self.merge_gap)
        return max(1, math.ceil(math.log(n) ** 2))

    def delta_n_value(self, n: int) -> float:
        return self.delta_n if self.delta_n is not None else math.log(n) ** 3 / n


@dataclass(frozen=True)
class SegmentedFit:
    """Change-point set plus one coefficient vector per segment."""

    changes: ChangePointSet
    phase_coeffs: np.ndarray
    n: int
    source: str = "penalized"

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.phase_coeffs, dtype=float))
        if coeffs.shape[0] != len(self.changes) + 1:
            raise ValueError("need exactly one phase per segment")
        coeffs.flags.writeable = False
        object.__setattr__(self, "phase_coeffs", coeffs)

    @property
    def p(self) -> int:
        return self.phase_coeffs.shape[1]

    def coefficient_path(self) -> CoefficientPath:
        """Expand the per-segment coefficients to a full n-row path."""
        pts = np.array(self.changes.indices, dtype=int)
        phase = np.searchsorted(pts, np.arange(1, self.n + 1), side="right")
        return CoefficientPath.from_beta(self.phase_coeffs[phase])

    def segments(self) -> list:
        """(start, end, coeffs) triples with 1-based half-open spans."""
        bounds = self.changes.segment_bounds(self.n)
        return [
            (start, end, self.phase_coeffs[k])
            for k, (start, end) in enumerate(bounds)
        ]


@dataclass(frozen=True)
class AdaptiveWeights:
    """Per-difference weights for the second stage plus the rate b_n.

    ``omega`` has length n with entries meaningful for indices 2..n;
    ``b_n = n*lambda/I_min + I_min^(-1/2)`` with I_min the minimal segment
    length of the merged stage-1 change set.
    """

    omega: np.ndarray
    b_n: float

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        om.flags.writeable = False
        object.__setattr__(self, "omega", om)


def extract_change_points(result: FitResult) -> ChangePointSet:
    """Change-point indices of a fit (support of the sparse differences)."""
    return result.active_set


def merge_clustered(changes: ChangePointSet, g: int) -> ChangePointSet:
    """Drop estimates closer than g to their raw predecessor.

    Index t_j is kept iff ``t_j - t_{j-1} >= g`` where ``t_{j-1}`` is the
    previous element of the unmerged input (``t_0 = 1``), so a cluster
    collapses onto its first member while the head of the cluster survives
    through its own long gap.
    """
    if g < 1:
        raise ValueError("merge gap must be >= 1")
    kept = []
    prev = 1
    for t in changes.indices:
        if t - prev >= g:
            kept.append(t)
        prev = t
    return ChangePointSet(indices=tuple(kept))


def segment_coefficients(result: FitResult, merged: ChangePointSet) -> SegmentedFit:
    """Per-segment coefficients for a merged change set.

    Each merged segment reports the penalized estimate of the final raw
    sub-segment it contains, i.e. the fitted coefficient at the last
    observation before the next merged change-point.
    """
    raw = set(result.active_set.indices)
    if not set(merged.indices) <= raw:
        raise ValueError("merged set must be a subset of the raw change set")
    n = result.path.n
    bounds = merged.segment_bounds(n)
    coeffs = np.array([result.path.beta[end - 2] for _, end in bounds])
    return SegmentedFit(changes=merged, phase_coeffs=coeffs, n=n)


def adaptive_weights(
    stage1: SegmentedFit, config: DetectorConfig, lam: float
) -> AdaptiveWeights:
    """Weights ``(max(||theta_i||_inf, d_n))^(-gamma)`` from a stage-1 fit."""
    n = stage1.n
    d_n = config.d_n_value(n)
    if d_n <= 0:
        raise ValueError("d_n must be positive")
    theta = stage1.coefficient_path().theta
    mags = np.abs(theta).max(axis=1)
    omega = np.empty(n)
    omega[0] = 1.0
    omega[1:] = np.maximum(mags[1:], d_n) ** -config.gamma
    i_min = stage1.changes.min_gap(n)
    b_n = n * lam / i_min + i_min ** -0.5
    return AdaptiveWeights(omega=omega, b_n=b_n)


def refit_segments(data: Dataset, changes: ChangePointSet, tau: float) -> SegmentedFit:
    """Unpenalized per-segment quantile regression (removes shrinkage bias).

    Each segment must contain at least p observations; shorter segments are
    undetermined and raise.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    coeffs = []
    for start, end in changes.segment_bounds(data.n):
        length = end - start
        if length < data.p:
            raise ValueError(
                f"segment [{start}, {end}) has {length} observations, "
                f"fewer than p = {data.p}: phase undetermined"
            )
        sl = slice(start - 1, end - 1)
        coeffs.append(quantile_regression(data.x[sl], data.y[sl], tau))
    return SegmentedFit(
        changes=changes, phase_coeffs=np.array(coeffs), n=data.n, source="refit"
    )


def _segmented_from_fit(result: FitResult) -> SegmentedFit:
    """Segment view of a fit whose change set needs no merging."""
    n = result.path.n
    bounds = result.active_set.segment_bounds(n)
    coeffs = np.array([result.path.beta[end - 2] for _, end in bounds])
    return SegmentedFit(changes=result.active_set, phase_coeffs=coeffs, n=n)


def stage2_with_weights(
    data: Dataset,
    weights: AdaptiveWeights,
    lam: float,
    config: DetectorConfig,
    warm_start=None,
) -> FitResult:
    """Weighted fused solve given precomputed stage-1 weights.

    Split out of :func:`detect_two_stage` so the weight dependence on the
    first stage can be exercised (and stubbed) directly.
    """
    penalty = PenaltySpec(
        lam=lam, weights=weights.omega, loss="quantile", tau=config.tau
    )
    solver_cfg = config.solver
    if warm_start is not None:
        from dataclasses import replace as _replace

        solver_cfg = _replace(solver_cfg, warm_start=warm_start)
    return solve(data, penalty, solver_cfg)


def detect_two_stage(
    data: Dataset,
    lambda1: float,
    lambda2: float,
    config: DetectorConfig | None = None,
) -> tuple[SegmentedFit, SegmentedFit, dict]:
    """Two-stage adaptive fused detection.

    Stage 1: unweighted solve at ``lambda1``, change extraction, cluster
    merging, coefficient assignment.  Stage 2: solve at ``lambda2`` with
    weights built from the merged stage-1 path; its change set is the final
    estimate.  Returns both segment fits and a diagnostics dict (solver
    convergence, the K_max precondition flag and the finite-n values of the
    two rate conditions on the weight sequences).
    """
    if config is None:
        config = DetectorConfig()
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("penalty levels must be nonnegative")
    n = data.n
    penalty1 = PenaltySpec(lam=lambda1, loss="quantile", tau=config.tau)
    fit1 = solve(data, penalty1, config.solver)
    raw = extract_change_points(fit1)
    g = config.merge_gap_value(n)
    merged = merge_clustered(raw, g)
    stage1 = segment_coefficients(fit1, merged)

    weights = adaptive_weights(stage1, config, lambda1)
    fit2 = stage2_with_weights(data, weights, lambda2, config, warm_start=fit1)
    stage2 = _segmented_from_fit(fit2)
    if config.refit:
        stage2 = refit_segments(data, stage2.changes, config.tau)

    d_n = config.d_n_value(n)
    delta_n = config.delta_n_value(n)
    i_max = merged.max_gap(n)
    rate = max(d_n, weights.b_n) ** config.gamma
    diagnostics = {
        "stage1_converged": fit1.converged,
        "stage2_converged": fit2.converged,
        "stage1_iterations": fit1.iterations,
        "stage2_iterations": fit2.iterations,
        "stage1_raw_count": len(raw),
        "stage1_merged_count": len(merged),
        "stage2_count": len(stage2.changes),
        "stage1_raw": list(raw.indices),
        "merge_gap": g,
        "k_max": config.k_max,
        "k_max_exceeded": (
            config.k_max is not None and len(merged) > config.k_max
        ),
        "b_n": weights.b_n,
        "d_n": d_n,
        "delta_n": delta_n,
        "shrinkage_rate_condition": lambda2 / (delta_n * rate),
        "detection_rate_condition": n * lambda2 / (rate * math.sqrt(i_max)),
        "kkt_max_violation": max(fit2.kkt_max_violation, fit1.kkt_max_violation),
        "stage1_kkt": fit1.kkt_max_violation,
        "stage2_kkt": fit2.kkt_max_violation,
        "weights_min": float(weights.omega[1:].min()) if n > 1 else 1.0,
        "weights_max": float(weights.omega[1:].max()) if n > 1 else 1.0,
        "stage1_fit": fit1,
        "stage2_fit": fit2,
    }
    return stage1, stage2, diagnostics


def assumption_diagnostics(
    data: Dataset,
    segmentation: TrueSegmentation | None = None,
    delta_n: float | None = None,
    max_endpoints: int = 200,
) -> dict:
    """Runtime checks of the design and identification conditions.

    Reports the maximal covariate row norm (the theory wants it below 1,
    which realistic designs routinely violate; flagged, never enforced),
    eigenvalue bounds of windowed second-moment matrices over sampled
    windows, and, when the truth is supplied, the jump-size range and the
    minimal-segment condition ``I_min >= n * delta_n``.
    """
    n, p = data.n, data.p
    x = data.x
    row_norms = np.linalg.norm(x, axis=1)
    max_norm = float(row_norms.max())

    # prefix sums of x_i x_i' make any window's second moment O(p^2)
    outer = np.einsum("ij,ik->ijk", x, x)
    prefix = np.concatenate([np.zeros((1, p, p)), np.cumsum(outer, axis=0)])
    if n + 1 <= max_endpoints:
        endpoints = np.arange(n + 1)
    else:
        endpoints = np.unique(np.linspace(0, n, max_endpoints).astype(int))
    m_hat = math.inf
    m_big = -math.inf
    for a_idx in range(len(endpoints) - 1):
        a = endpoints[a_idx]
        for b in endpoints[a_idx + 1 :]:
            if b - a < p:
                continue
            second = (prefix[b] - prefix[a]) / (b - a)
            eig = np.linalg.eigvalsh(second)
            m_hat = min(m_hat, float(eig[0]))
            m_big = max(m_big, float(eig[-1]))
    report = {
        "max_row_norm": max_norm,
        "row_norm_below_one": max_norm < 1.0,
        "m0_hat": m_hat,
        "M0_hat": m_big,
        "windows_sampled": True,
    }
    if segmentation is not None:
        jumps = segmentation.jump_norms()
        dn = delta_n if delta_n is not None else math.log(n) ** 3 / n
        report.update(
            {
                "min_jump_norm": float(jumps.min()) if jumps.size else math.inf,
                "max_jump_norm": float(jumps.max()) if jumps.size else 0.0,
                "i_min": segmentation.min_gap(n),
                "n_delta_n": n * dn,
                "min_gap_condition": segmentation.min_gap(n) >= n * dn,
            }
        )
    return report
