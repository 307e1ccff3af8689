"""Solver: proximal maps, ADMM vs LP oracle, optimality-condition checks."""

import numpy as np
import pytest

from fusedqr.model import ChangePointSet, CoefficientPath, Dataset, build_paper_scenario, sample_dataset
from fusedqr.objective import PenaltySpec, objective, subgradient_check
from fusedqr.solver import (
    FitResult,
    SolverConfig,
    kkt_residuals,
    lp_oracle_p1,
    prox_check_loss,
    prox_group_norm,
    quantile_regression,
    solve,
)

TIGHT = SolverConfig(max_iter=50000, tol_primal=1e-9, tol_dual=1e-9)


def golden_section(f, lo, hi, iters=200):
    """Golden-section minimizer for unimodal scalar functions.

    Runs in 50-digit arithmetic so the argmin is localized far below the
    1e-8 comparison tolerance (double precision value comparisons alone
    cannot resolve an argmin beyond ~sqrt(eps)).
    """
    import mpmath as mp

    with mp.workdps(50):
        invphi = (mp.sqrt(5) - 1) / 2
        a, b = mp.mpf(lo), mp.mpf(hi)
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(iters):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = f(d)
        return float((a + b) / 2)


def tiny_data():
    return Dataset(y=[0.0, 10.0], x=[[1.0], [1.0]])


class TestProxCheckLoss:
    def test_positive_branch(self):
        assert prox_check_loss(3.0, 1.0, 0.5) == pytest.approx(2.5)

    def test_dead_zone(self):
        assert prox_check_loss(0.0, 1.0, 0.5) == 0.0

    def test_negative_branch(self):
        assert prox_check_loss(-3.0, 1.0, 0.5) == pytest.approx(-2.5)

    def test_matches_numeric_minimization(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            w = rng.normal() * 5
            sigma = rng.uniform(0.05, 5.0)
            tau = rng.uniform(0.05, 0.95)
            f = lambda z: z * (tau - (1 if z < 0 else 0)) + (z - w) ** 2 / (2 * sigma)
            span = abs(w) + sigma + 1.0
            z_num = golden_section(f, -span, span)
            z_closed = prox_check_loss(w, sigma, tau)
            assert abs(z_closed - z_num) <= 1e-8 * (1 + abs(w))


class TestProxGroupNorm:
    def test_shrink_example(self):
        np.testing.assert_allclose(
            prox_group_norm(np.array([3.0, 4.0]), 2.0), [1.8, 2.4]
        )

    def test_collapses_to_zero(self):
        out = prox_group_norm(np.array([1.0, 1.0]), 5.0)
        assert np.all(out == 0.0)

    def test_identity_at_zero_kappa(self):
        w = np.array([0.3, -2.0, 1.0])
        np.testing.assert_array_equal(prox_group_norm(w, 0.0), w)

    def test_matches_numeric_minimization_on_ray(self):
        # By rotational symmetry the minimizer lies on the ray through w,
        # reducing the defining problem to a scalar one.
        rng = np.random.default_rng(12)
        for _ in range(200):
            d = rng.integers(1, 5)
            w = rng.normal(size=d) * 3
            kappa = rng.uniform(0.0, 4.0)
            nw = float(np.linalg.norm(w))
            if nw == 0:
                continue
            f = lambda t: kappa * abs(t) + (t - nw) ** 2 / 2
            t_num = golden_section(f, -1.0, nw + 1.0)
            z_num = t_num * w / nw
            z_closed = prox_group_norm(w, kappa)
            assert np.linalg.norm(z_closed - z_num) <= 1e-8 * (1 + nw)

    def test_matches_powell_minimization(self):
        from scipy.optimize import minimize

        rng = np.random.default_rng(13)
        for _ in range(25):
            d = rng.integers(1, 4)
            w = rng.normal(size=d) * 2
            kappa = rng.uniform(0.0, 3.0)
            f = lambda v: kappa * np.linalg.norm(v) + 0.5 * np.sum((v - w) ** 2)
            res = minimize(f, w, method="Powell", options={"xtol": 1e-12, "ftol": 1e-14})
            z_closed = prox_group_norm(w, kappa)
            assert f(z_closed) <= f(res.x) + 1e-10


class TestSolveTinyInstance:
    def test_exact_fit_with_one_change(self):
        data = tiny_data()
        penalty = PenaltySpec(lam=0.1, tau=0.5)
        res = solve(data, penalty, TIGHT)
        assert res.converged
        assert res.objective_value == pytest.approx(2.0, abs=1e-6)
        assert res.active_set.indices == (2,)
        np.testing.assert_allclose(res.path.beta, [[0.0], [10.0]], atol=1e-5)

    def test_huge_lambda_gives_constant_pooled_fit(self):
        data = tiny_data()
        res = solve(data, PenaltySpec(lam=1e6, tau=0.5), TIGHT)
        assert res.converged
        assert len(res.active_set) == 0
        # pooled median fit: any constant in [0, 10], loss 5
        from fusedqr.objective import quantile_process

        assert quantile_process(data, res.path, 0.5) == pytest.approx(5.0, abs=1e-5)

    def test_zero_lambda_interpolates(self):
        rng = np.random.default_rng(14)
        n = 16
        y = rng.normal(size=n) * 3
        data = Dataset(y=y, x=np.ones((n, 1)))
        res = solve(data, PenaltySpec(lam=0.0, tau=0.5), TIGHT)
        assert res.objective_value <= 1e-6
        assert len(res.active_set) >= n // 2


class TestLpOracle:
    def test_tiny_instance_objective(self):
        res = lp_oracle_p1(tiny_data(), PenaltySpec(lam=0.1, tau=0.5))
        assert res.objective_value == pytest.approx(2.0, abs=1e-9)
        assert res.active_set.indices == (2,)

    def test_huge_lambda_pooled_loss(self):
        res = lp_oracle_p1(tiny_data(), PenaltySpec(lam=1e6, tau=0.5))
        assert res.objective_value == pytest.approx(5.0, abs=1e-7)

    def test_four_point_instance_matches_solve(self):
        data = Dataset(y=[0.0, 0.0, 10.0, 10.0], x=np.ones((4, 1)))
        penalty = PenaltySpec(lam=0.05, tau=0.5)
        oracle = lp_oracle_p1(data, penalty)
        admm = solve(data, penalty, TIGHT)
        assert admm.objective_value == pytest.approx(
            oracle.objective_value, abs=1e-6
        )

    def test_rejects_p_not_one(self):
        data = Dataset(y=[0.0, 1.0], x=[[1.0, 2.0], [1.0, 3.0]])
        with pytest.raises(ValueError, match="p = 1"):
            lp_oracle_p1(data, PenaltySpec(lam=0.1, tau=0.5))

    def test_rejects_large_n(self):
        n = 51
        data = Dataset(y=np.arange(n, dtype=float), x=np.ones((n, 1)))
        with pytest.raises(ValueError, match="n <= 50"):
            lp_oracle_p1(data, PenaltySpec(lam=0.1, tau=0.5))


def random_p1_instance(rng):
    n = int(rng.integers(2, 13))
    c0 = rng.choice([-1.0, 0.5, 1.0, 2.0])
    y = rng.normal(size=n) * rng.uniform(0.5, 5.0)
    data = Dataset(y=y, x=np.full((n, 1), c0))
    tau = rng.choice([0.3, 0.5, 0.7])
    lam = float(10 ** rng.uniform(-3, 1.5))
    return data, PenaltySpec(lam=lam, tau=tau)


class TestOracleEquivalence:
    def test_random_instances(self):
        rng = np.random.default_rng(15)
        for _ in range(25):
            data, penalty = random_p1_instance(rng)
            oracle = lp_oracle_p1(data, penalty)
            admm = solve(data, penalty, TIGHT)
            assert admm.converged
            gap = abs(admm.objective_value - oracle.objective_value)
            assert gap <= 1e-6 * (1.0 + oracle.objective_value)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            data, penalty = random_p1_instance(rng)
            n = data.n
            w = rng.uniform(0.5, 2.0, size=n)
            scaled = PenaltySpec(
                lam=penalty.lam / 3.0, tau=penalty.tau, weights=3.0 * w
            )
            base = PenaltySpec(lam=penalty.lam, tau=penalty.tau, weights=w)
            a = lp_oracle_p1(data, base)
            b = lp_oracle_p1(data, scaled)
            assert a.objective_value == pytest.approx(
                b.objective_value, rel=1e-8, abs=1e-10
            )
            assert a.active_set.indices == b.active_set.indices


class TestKktResiduals:
    def test_huge_lambda_slack(self):
        res = solve(tiny_data(), PenaltySpec(lam=1e6, tau=0.5), TIGHT)
        assert res.kkt_max_violation <= 1e-8

    def test_oracle_optimum_passes(self):
        res = lp_oracle_p1(tiny_data(), PenaltySpec(lam=0.1, tau=0.5))
        assert res.kkt_max_violation <= 1e-8

    def test_perturbed_path_rejected(self):
        data = tiny_data()
        penalty = PenaltySpec(lam=0.1, tau=0.5)
        res = solve(data, penalty, TIGHT)
        shifted = CoefficientPath.from_beta(res.path.beta + 1.0)
        fake = FitResult(
            path=shifted,
            objective_value=objective(data, shifted, penalty),
            iterations=0,
            converged=True,
            active_set=res.active_set,
            kkt_max_violation=np.nan,
        )
        _, violation = kkt_residuals(data, fake, penalty)
        assert violation > 0.1

    def test_solver_results_pass_threshold(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            data, penalty = random_p1_instance(rng)
            res = solve(data, penalty, TIGHT)
            if res.converged:
                assert res.kkt_max_violation <= 1e-4


class TestSolverOnRegression:
    def test_noiseless_paper_scenario_moderate_lambda(self):
        spec = build_paper_scenario(60)
        data, seg = sample_dataset(spec, tau=0.5, noiseless=True)
        res = solve(data, PenaltySpec(lam=0.02, tau=0.5), TIGHT)
        assert res.converged
        # the true breaks must be within the detected set's neighbourhoods
        truth = seg.change_indices(60)
        assert len(res.active_set) >= 3
        for t in truth:
            assert min(abs(i - t) for i in res.active_set) <= 3

    def test_optimum_passes_directional_derivative_probe(self):
        rng = np.random.default_rng(18)
        spec = build_paper_scenario(30, seed=2)
        data, _ = sample_dataset(spec, tau=0.5)
        penalty = PenaltySpec(lam=0.05, tau=0.5)
        res = solve(data, penalty, TIGHT)
        assert res.converged
        for _ in range(20):
            d = rng.normal(size=res.path.theta.shape)
            d /= np.linalg.norm(d)
            assert subgradient_check(data, res.path, penalty, d) >= -1e-5

    def test_determinism(self):
        spec = build_paper_scenario(40, seed=4)
        data, _ = sample_dataset(spec, tau=0.5)
        pen = PenaltySpec(lam=0.05, tau=0.5)
        a = solve(data, pen, SolverConfig())
        b = solve(data, pen, SolverConfig())
        np.testing.assert_array_equal(a.path.beta, b.path.beta)
        assert a.iterations == b.iterations

    def test_warm_start_speeds_up(self):
        spec = build_paper_scenario(80, seed=6)
        data, _ = sample_dataset(spec, tau=0.5)
        pen1 = PenaltySpec(lam=0.05, tau=0.5)
        cold = solve(data, pen1, SolverConfig())
        pen2 = PenaltySpec(lam=0.045, tau=0.5)
        warm = solve(data, pen2, SolverConfig(warm_start=cold))
        cold2 = solve(data, pen2, SolverConfig())
        assert warm.iterations <= cold2.iterations
        assert warm.objective_value == pytest.approx(
            cold2.objective_value, rel=1e-3
        )

    def test_squared_loss_matches_direct_quadratic(self):
        # With a huge lambda the squared-loss fit is ordinary least squares.
        rng = np.random.default_rng(19)
        n = 40
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = x @ np.array([1.0, 2.0]) + 0.1 * rng.normal(size=n)
        data = Dataset(y=y, x=x)
        res = solve(data, PenaltySpec(lam=1e6, loss="squared"), TIGHT)
        ls = np.linalg.lstsq(x, y, rcond=None)[0]
        np.testing.assert_allclose(res.path.beta[0], ls, atol=1e-5)
        assert len(res.active_set) == 0


class TestQuantileRegressionHelper:
    def test_interpolates_two_points(self):
        x = np.array([[1.0, 0.0], [1.0, 1.0]])
        y = np.array([1.0, 3.0])
        phi = quantile_regression(x, y, 0.5)
        np.testing.assert_allclose(phi, [1.0, 2.0], atol=1e-9)

    def test_median_of_constant_design(self):
        y = np.array([1.0, 2.0, 9.0])
        phi = quantile_regression(np.ones((3, 1)), y, 0.5)
        assert phi[0] == pytest.approx(2.0, abs=1e-9)
