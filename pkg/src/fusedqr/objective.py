"""Loss and penalty evaluation for the fused regression objectives.

The fitting criterion is the empirical quantile process (sum of check-loss
residuals) plus a fused group penalty ``n * lambda * sum_i w_i * ||beta_i -
beta_{i-1}||`` over consecutive coefficient differences, with the Euclidean
norm taken across the p components of each difference.  A squared-error
variant (``0.5 * sum r_i^2``) is provided as the conditional-mean baseline;
the 1/2 factor is an internal convention and is documented in the result
schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import CoefficientPath, Dataset

__all__ = [
    "PenaltySpec",
    "check_loss",
    "quantile_process",
    "objective",
    "subgradient_check",
]


@dataclass(frozen=True)
class PenaltySpec:
    """Tuning parameter, per-difference weights and loss kind.

    ``weights`` has length n with entries for indices 2..n meaningful (the
    first entry is ignored; the first coefficient vector is never
    penalized).  ``None`` means all-ones, the plain non-adaptive penalty.
    """

    lam: float
    weights: np.ndarray | None = field(default=None)
    loss: str = "quantile"
    tau: float = 0.5

    def __post_init__(self):
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError("lambda must be finite and nonnegative")
        if self.loss not in ("quantile", "squared"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.loss == "quantile" and not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.ndim != 1:
                raise ValueError("weights must be a vector")
            if not np.isfinite(w[1:]).all() or np.any(w[1:] <= 0):
                raise ValueError("weights for indices 2..n must be positive and finite")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)

    def weight_vector(self, n: int) -> np.ndarray:
        """Weights for indices 2..n as a 0-based array of length n-1."""
        if self.weights is None:
            return np.ones(n - 1)
        if self.weights.shape[0] != n:
            raise ValueError(
                f"weights have length {self.weights.shape[0]}, expected {n}"
            )
        return self.weights[1:]


def check_loss(u, tau: float):
    """Check function ``u * (tau - 1{u < 0})``; accepts scalars or arrays."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return out if out.ndim else float(out)


def quantile_process(data: Dataset, path: CoefficientPath, tau: float) -> float:
    """Sum of check-loss residuals ``sum_i rho_tau(y_i - x_i' beta_i)``."""
    if path.beta.shape != data.x.shape:
        raise ValueError("path and dataset dimensions differ")
    resid = data.y - path.fitted_values(data.x)
    return float(np.sum(check_loss(resid, tau)))


def _penalty_term(path: CoefficientPath, penalty: PenaltySpec, n: int) -> float:
    w = penalty.weight_vector(n)
    jumps = np.linalg.norm(path.theta[1:], axis=1)
    return n * penalty.lam * float(w @ jumps)


def objective(data: Dataset, path: CoefficientPath, penalty: PenaltySpec) -> float:
    """Loss plus fused group penalty for a candidate coefficient path."""
    if path.beta.shape != data.x.shape:
        raise ValueError("path and dataset dimensions differ")
    if not np.isfinite(path.beta).all():
        raise ValueError("non-finite coefficient path")
    resid = data.y - path.fitted_values(data.x)
    if penalty.loss == "quantile":
        loss = float(np.sum(check_loss(resid, penalty.tau)))
    else:
        loss = 0.5 * float(resid @ resid)
    return loss + _penalty_term(path, penalty, data.n)


def _check_loss_dirderiv(u: np.ndarray, h: np.ndarray, tau: float) -> float:
    # One-sided derivative of rho_tau(u + t*h) at t = 0+, exact at kinks.
    pos = (u > 0) | ((u == 0) & (h > 0))
    slope = np.where(pos, tau, tau - 1.0)
    return float(np.sum(slope * h))


def subgradient_check(
    data: Dataset,
    path: CoefficientPath,
    penalty: PenaltySpec,
    direction: np.ndarray,
) -> float:
    """One-sided directional derivative of the objective in theta coordinates.

    At a minimizer of the convex objective the returned value is >= 0 (up to
    tolerance) for every direction; a negative value certifies descent.
    """
    direction = np.asarray(direction, dtype=float)
    if direction.shape != path.theta.shape:
        raise ValueError("direction and path shapes differ")
    if np.linalg.norm(direction) == 0:
        raise ValueError("zero direction")
    n = data.n
    # Perturbing theta by t*d shifts beta by t*cumsum(d) and the residuals
    # by -t * x_i' cumsum(d)_i.
    dbeta = np.cumsum(direction, axis=0)
    dfit = np.einsum("ij,ij->i", data.x, dbeta)
    resid = data.y - path.fitted_values(data.x)
    if penalty.loss == "quantile":
        dloss = _check_loss_dirderiv(resid, -dfit, penalty.tau)
    else:
        dloss = float(-resid @ dfit)
    w = penalty.weight_vector(n)
    theta = path.theta[1:]
    d = direction[1:]
    norms = np.linalg.norm(theta, axis=1)
    active = norms > 0
    dpen = np.where(
        active,
        np.einsum("ij,ij->i", theta, d) / np.where(active, norms, 1.0),
        np.linalg.norm(d, axis=1),
    )
    return dloss + n * penalty.lam * float(w @ dpen)
