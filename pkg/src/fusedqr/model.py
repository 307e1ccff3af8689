"""Data model for piecewise-constant-coefficient regression.

The observed model is ``y_i = x_i' beta_i + eps_i`` where the coefficient
vectors ``beta_1, ..., beta_n`` are constant between change-points.  Two
equivalent parameterizations are used throughout: the per-observation
coefficients ``beta`` and their consecutive differences ``theta`` (with
``theta_1 = beta_1``), related by a prefix sum.  The structured design
matrices tying the two together are never built densely; fitted values in
the theta parameterization are computed as ``x_i' cumsum(theta)_i``.

All indices exposed by this module are 1-based, matching the observation
numbering ``i = 1, ..., n``.  Internally numpy arrays are 0-based.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "Dataset",
    "CoefficientPath",
    "ChangePointSet",
    "TrueSegmentation",
    "ErrorDistribution",
    "ScenarioSpec",
    "build_paper_scenario",
    "build_stock_scenario",
    "sample_dataset",
    "beta_from_theta",
    "theta_from_beta",
    "load_dataset_csv",
    "write_dataset_csv",
]

#: Phase coefficients of the two-covariate benchmark scenario, in order.
PAPER_2D_PHASES = ((0.0, 1.0), (2.4, -6.0), (-1.1, 2.0), (0.5, 0.0))
#: Change locations of the benchmark scenario on the rescaled domain [0, 1].
PAPER_2D_FRACTIONS = (0.2, 0.5, 0.7)

_STOCK_N = 251
_STOCK_CHANGES = (83, 125, 166)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Responses ``y`` and covariate rows ``x`` (intercept column first).

    Parameters
    ----------
    y : array of shape (n,)
        Observed responses.
    x : array of shape (n, p)
        Covariate rows; the first column must be a common nonzero constant
        (the intercept), and every entry must be finite.
    """

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = _readonly(np.atleast_1d(self.y))
        x = _readonly(np.atleast_2d(self.x))
        if y.ndim != 1 or x.ndim != 2:
            raise ValueError("y must be 1-d and x must be 2-d")
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if y.shape[0] < 2:
            raise ValueError("need at least n >= 2 observations")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise ValueError("dataset contains non-finite values")
        c0 = x[0, 0]
        if c0 == 0.0 or not np.all(x[:, 0] == c0):
            raise ValueError(
                "first covariate column must be a common nonzero constant "
                "(the intercept column)"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def intercept_value(self) -> float:
        return float(self.x[0, 0])


def beta_from_theta(theta: np.ndarray) -> np.ndarray:
    """Recover the coefficient path from consecutive differences.

    ``beta_i = sum_{s<=i} theta_s``; the inverse of :func:`theta_from_beta`.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.size == 0:
        raise ValueError("empty path")
    return np.cumsum(theta, axis=0)


def theta_from_beta(beta: np.ndarray) -> np.ndarray:
    """Consecutive differences of a coefficient path (``theta_1 = beta_1``)."""
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        raise ValueError("empty path")
    theta = np.empty_like(beta)
    theta[0] = beta[0]
    theta[1:] = np.diff(beta, axis=0)
    return theta


@dataclass(frozen=True)
class CoefficientPath:
    """Per-observation coefficients ``beta`` and differences ``theta``.

    The two arrays are redundant by construction (``beta = cumsum(theta)``);
    both are kept because solvers and change-point extraction work in theta
    while predictions work in beta.
    """

    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        beta = _readonly(np.atleast_2d(self.beta))
        theta = _readonly(np.atleast_2d(self.theta))
        if beta.shape != theta.shape:
            raise ValueError("beta and theta shapes differ")
        recon = np.cumsum(theta, axis=0)
        scale = 1.0 + np.abs(beta).max(initial=0.0)
        if np.abs(recon - beta).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("theta is not the difference path of beta")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_beta(cls, beta: np.ndarray) -> "CoefficientPath":
        beta = np.atleast_2d(np.asarray(beta, dtype=float))
        return cls(beta=beta, theta=theta_from_beta(beta))

    @classmethod
    def from_theta(cls, theta: np.ndarray) -> "CoefficientPath":
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return cls(beta=beta_from_theta(theta), theta=theta)

    @property
    def n(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    def fitted_values(self, x: np.ndarray) -> np.ndarray:
        """Per-observation fitted values ``x_i' beta_i``."""
        x = np.asarray(x, dtype=float)
        if x.shape != self.beta.shape:
            raise ValueError("x and beta shapes differ")
        return np.einsum("ij,ij->i", x, self.beta)


@dataclass(frozen=True)
class ChangePointSet:
    """Sorted 1-based change-point indices, each in {2, ..., n}.

    Index i is a change-point when ``beta_i != beta_{i-1}`` (equivalently
    ``theta_i != 0``); index 1 can never be one.
    """

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 2 for i in idx):
            raise ValueError("change-point indices start at 2")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_iterable(cls, it) -> "ChangePointSet":
        return cls(indices=tuple(sorted(int(i) for i in it)))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i) -> bool:
        return int(i) in self.indices

    def segment_bounds(self, n: int) -> list:
        """Half-open 1-based segments [start, end) partitioning {1..n}."""
        pts = [1, *self.indices, n + 1]
        return list(zip(pts[:-1], pts[1:]))

    def min_gap(self, n: int) -> int:
        """Shortest segment length induced on {1..n} (n for the empty set)."""
        pts = [1, *self.indices, n + 1]
        return int(min(b - a for a, b in zip(pts, pts[1:])))

    def max_gap(self, n: int) -> int:
        """Longest segment length induced on {1..n} (n for the empty set)."""
        pts = [1, *self.indices, n + 1]
        return int(max(b - a for a, b in zip(pts, pts[1:])))


@dataclass(frozen=True)
class TrueSegmentation:
    """Ground-truth change structure on the rescaled domain.

    Change locations are stored as fractions in (0, 1); the index of the
    first observation of phase k+1 at sample size n is ``floor(f_k * n) + 1``
    (observation i belongs to phase k+1 exactly when ``f_k < i/n <= f_{k+1}``).
    """

    change_fractions: tuple
    phase_coeffs: np.ndarray

    def __post_init__(self):
        fr = tuple(float(f) for f in self.change_fractions)
        if any(not 0.0 < f < 1.0 for f in fr):
            raise ValueError("change fractions must lie in (0, 1)")
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise ValueError("change fractions must be strictly increasing")
        coeffs = _readonly(np.atleast_2d(self.phase_coeffs))
        if coeffs.shape[0] != len(fr) + 1:
            raise ValueError("need one more phase than change fractions")
        jumps = np.linalg.norm(np.diff(coeffs, axis=0), axis=1)
        if len(fr) and jumps.min() == 0.0:
            raise ValueError("adjacent phase coefficients must differ")
        object.__setattr__(self, "change_fractions", fr)
        object.__setattr__(self, "phase_coeffs", coeffs)

    @property
    def n_changes(self) -> int:
        return len(self.change_fractions)

    @property
    def p(self) -> int:
        return self.phase_coeffs.shape[1]

    def change_indices(self, n: int) -> np.ndarray:
        """1-based indices where a new phase starts (``floor(f*n) + 1``)."""
        return np.array(
            [int(math.floor(f * n)) + 1 for f in self.change_fractions],
            dtype=int,
        )

    def phase_of_index(self, i: int, n: int) -> int:
        """0-based phase number of 1-based observation index ``i``."""
        return int(np.searchsorted(self.change_indices(n), i, side="right"))

    def coefficient_path(self, n: int) -> np.ndarray:
        """Per-observation true coefficients, shape (n, p)."""
        changes = self.change_indices(n)
        phase = np.searchsorted(changes, np.arange(1, n + 1), side="right")
        return self.phase_coeffs[phase]

    def min_gap(self, n: int) -> int:
        """Shortest true segment length at sample size n."""
        pts = [1, *self.change_indices(n).tolist(), n + 1]
        return int(min(b - a for a, b in zip(pts, pts[1:])))

    def max_gap(self, n: int) -> int:
        """Longest true segment length at sample size n."""
        pts = [1, *self.change_indices(n).tolist(), n + 1]
        return int(max(b - a for a, b in zip(pts, pts[1:])))

    def jump_norms(self) -> np.ndarray:
        """Euclidean norms of consecutive phase-coefficient differences."""
        return np.linalg.norm(np.diff(self.phase_coeffs, axis=0), axis=1)


_DISTRIBUTIONS = {
    "normal": stats.norm(),
    "t3": stats.t(3),
    "cauchy": stats.cauchy(),
}


@dataclass(frozen=True)
class ErrorDistribution:
    """Error law together with the shift putting its tau-quantile at zero.

    ``tau_shift`` is the analytic tau-quantile of the base distribution;
    sampling subtracts it so that ``P[eps < 0] = tau`` holds exactly.
    """

    kind: str
    tau_shift: float = 0.0

    def __post_init__(self):
        if self.kind not in _DISTRIBUTIONS:
            raise ValueError(
                f"unknown error distribution {self.kind!r}; "
                f"expected one of {sorted(_DISTRIBUTIONS)}"
            )

    @classmethod
    def for_tau(cls, kind: str, tau: float) -> "ErrorDistribution":
        if not 0.0 < tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        # All supported laws are symmetric about 0: the analytic median is
        # exactly 0 (scipy's numerical ppf can be off by an ulp).
        shift = 0.0 if tau == 0.5 else float(_DISTRIBUTIONS[kind].ppf(tau))
        return cls(kind=kind, tau_shift=shift)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        dist = _DISTRIBUTIONS[self.kind]
        return dist.rvs(size=size, random_state=rng) - self.tau_shift


@dataclass(frozen=True)
class ScenarioSpec:
    """A fully specified data-generating scenario.

    ``covariates`` is only set for custom scenarios; the named scenarios
    derive their design deterministically (paper-2d) or from the seed
    (stock-synthetic).
    """

    name: str
    n: int
    error: ErrorDistribution
    seed: int
    segmentation: TrueSegmentation
    covariates: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.name not in ("paper-2d", "stock-synthetic", "custom"):
            raise ValueError(f"unknown scenario name {self.name!r}")
        if self.covariates is not None:
            object.__setattr__(self, "covariates", _readonly(self.covariates))

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "n": self.n,
            "error": {"kind": self.error.kind, "tau_shift": self.error.tau_shift},
            "seed": self.seed,
            "segmentation": {
                "change_fractions": list(self.segmentation.change_fractions),
                "phase_coeffs": self.segmentation.phase_coeffs.tolist(),
            },
            "covariates": None
            if self.covariates is None
            else self.covariates.tolist(),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        d = json.loads(text)
        seg = TrueSegmentation(
            change_fractions=tuple(d["segmentation"]["change_fractions"]),
            phase_coeffs=np.asarray(d["segmentation"]["phase_coeffs"]),
        )
        cov = d.get("covariates")
        return cls(
            name=d["name"],
            n=int(d["n"]),
            error=ErrorDistribution(d["error"]["kind"], d["error"]["tau_shift"]),
            seed=int(d["seed"]),
            segmentation=seg,
            covariates=None if cov is None else np.asarray(cov, dtype=float),
        )


def build_paper_scenario(
    n: int, error_kind: str = "normal", seed: int = 0, tau: float = 0.5
) -> ScenarioSpec:
    """Two-covariate benchmark with four phases and changes at 0.2/0.5/0.7.

    Covariate rows are ``(1, i/n)``; phase coefficients are
    ``(0, 1), (2.4, -6), (-1.1, 2), (0.5, 0)``.
    """
    if n < 10:
        raise ValueError("paper-2d scenario needs n >= 10 (four phases)")
    seg = TrueSegmentation(
        change_fractions=PAPER_2D_FRACTIONS,
        phase_coeffs=np.asarray(PAPER_2D_PHASES, dtype=float),
    )
    return ScenarioSpec(
        name="paper-2d",
        n=n,
        error=ErrorDistribution.for_tau(error_kind, tau),
        seed=seed,
        segmentation=seg,
    )


def build_stock_scenario(
    seed: int, error_kind: str = "normal", tau: float = 0.5
) -> ScenarioSpec:
    """Synthetic stand-in for the three-stock regression example.

    n = 251 and p = 3 with changes starting at indices 83 (first coefficient
    -1 -> 1), 125 (second coefficient -1 -> 1) and 166 (first coefficient
    back to -1).  The third coefficient is the constant 1.  Covariate rows
    are ``(1, z2, z3)`` with standardized pseudo-random draws z.
    """
    n = _STOCK_N
    phases = np.array(
        [
            [-1.0, -1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
        ]
    )
    # A phase starting at index t corresponds to the fraction (t - 1) / n,
    # inverting floor(f*n) + 1 = t.
    fractions = tuple((t - 1) / n for t in _STOCK_CHANGES)
    seg = TrueSegmentation(change_fractions=fractions, phase_coeffs=phases)
    return ScenarioSpec(
        name="stock-synthetic",
        n=n,
        error=ErrorDistribution.for_tau(error_kind, tau),
        seed=seed,
        segmentation=seg,
    )


def _scenario_design(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.name == "paper-2d":
        i = np.arange(1, spec.n + 1, dtype=float)
        return np.column_stack([np.ones(spec.n), i / spec.n])
    if spec.name == "stock-synthetic":
        p = spec.segmentation.p
        z = rng.standard_normal((spec.n, p - 1))
        return np.column_stack([np.ones(spec.n), z])
    if spec.covariates is None:
        raise ValueError("custom scenario requires explicit covariates")
    return np.asarray(spec.covariates, dtype=float)


def sample_dataset(
    spec: ScenarioSpec, tau: float, noiseless: bool = False
) -> tuple[Dataset, TrueSegmentation]:
    """Draw one dataset from a scenario.

    The error stream is shifted so its tau-quantile is exactly zero; passing
    ``noiseless=True`` zeroes the errors (the design draw, if any, still
    consumes the same RNG stream so the covariates match the noisy twin).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    rng = np.random.default_rng(spec.seed)
    x = _scenario_design(spec, rng)
    error = spec.error
    if error.tau_shift != float(_DISTRIBUTIONS[error.kind].ppf(tau)):
        error = ErrorDistribution.for_tau(error.kind, tau)
    beta_true = spec.segmentation.coefficient_path(spec.n)
    signal = np.einsum("ij,ij->i", x, beta_true)
    eps = np.zeros(spec.n) if noiseless else error.sample(rng, spec.n)
    return Dataset(y=signal + eps, x=x), spec.segmentation


def load_dataset_csv(path) -> Dataset:
    """Read a dataset from CSV with header ``y,x1,...,xp``.

    ``x1`` must be the constant intercept column; missing or non-numeric
    values are rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty CSV file") from None
        header = [h.strip() for h in header]
        expected = ["y"] + [f"x{j}" for j in range(1, len(header))]
        if header != expected or len(header) < 2:
            raise ValueError(
                f"CSV header must be y,x1,...,xp; got {','.join(header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise ValueError(
                    f"line {lineno}: missing or non-numeric value"
                ) from None
            rows.append(vals)
    if not rows:
        raise ValueError("CSV contains no data rows")
    data = np.asarray(rows, dtype=float)
    return Dataset(y=data[:, 0], x=data[:, 1:])


def write_dataset_csv(path, dataset: Dataset) -> None:
    """Write a dataset in the format accepted by :func:`load_dataset_csv`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{j}" for j in range(1, dataset.p + 1)])
        for yi, xi in zip(dataset.y, dataset.x):
            writer.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])
