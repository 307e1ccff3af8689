"""Data model: scenarios, sampling, parameterizations, CSV round trip."""

import numpy as np
import pytest

from fusedqr.model import (
    ChangePointSet,
    CoefficientPath,
    Dataset,
    ErrorDistribution,
    ScenarioSpec,
    beta_from_theta,
    build_paper_scenario,
    build_stock_scenario,
    load_dataset_csv,
    sample_dataset,
    theta_from_beta,
    write_dataset_csv,
)


class TestDataset:
    def test_basic_shape(self):
        d = Dataset(y=[1.0, 2.0, 3.0], x=[[1, 0.1], [1, 0.2], [1, 0.3]])
        assert d.n == 3 and d.p == 2
        assert d.intercept_value == 1.0

    def test_rejects_varying_intercept(self):
        with pytest.raises(ValueError, match="intercept"):
            Dataset(y=[1.0, 2.0], x=[[1, 0.1], [2, 0.2]])

    def test_rejects_zero_intercept(self):
        with pytest.raises(ValueError, match="intercept"):
            Dataset(y=[1.0, 2.0], x=[[0, 0.1], [0, 0.2]])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            Dataset(y=[1.0, np.nan], x=[[1, 0.1], [1, 0.2]])

    def test_rejects_single_row(self):
        with pytest.raises(ValueError, match="n >= 2"):
            Dataset(y=[1.0], x=[[1.0]])

    def test_immutable(self):
        d = Dataset(y=[1.0, 2.0], x=[[1, 0.1], [1, 0.2]])
        with pytest.raises(ValueError):
            d.y[0] = 5.0


class TestParameterization:
    def test_prefix_sum_example(self):
        theta = [(1, 0), (0, 0), (2, -1)]
        beta = beta_from_theta(theta)
        np.testing.assert_allclose(beta, [(1, 0), (1, 0), (3, -1)])

    def test_constant_beta_gives_zero_theta(self):
        beta = np.tile([2.0, -1.0], (6, 1))
        theta = theta_from_beta(beta)
        np.testing.assert_allclose(theta[0], [2.0, -1.0])
        np.testing.assert_allclose(theta[1:], 0.0)

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            beta = rng.normal(size=(rng.integers(2, 30), rng.integers(1, 4)))
            recon = beta_from_theta(theta_from_beta(beta))
            assert np.abs(recon - beta).max() <= 1e-12 * (1 + np.abs(beta).max())

    def test_path_validates_consistency(self):
        with pytest.raises(ValueError, match="difference path"):
            CoefficientPath(beta=np.ones((3, 1)), theta=np.ones((3, 1)))


class TestChangePointSet:
    def test_sorted_and_bounds(self):
        s = ChangePointSet.from_iterable([7, 3])
        assert s.indices == (3, 7)
        with pytest.raises(ValueError):
            ChangePointSet(indices=(1, 5))

    def test_gaps(self):
        s = ChangePointSet(indices=(101, 251, 351))
        assert s.min_gap(500) == 100
        assert s.max_gap(500) == 150
        assert ChangePointSet(indices=()).min_gap(500) == 500

    def test_segment_bounds(self):
        s = ChangePointSet(indices=(3, 6))
        assert s.segment_bounds(8) == [(1, 3), (3, 6), (6, 9)]


class TestPaperScenario:
    def test_phase_jump_magnitudes(self):
        spec = build_paper_scenario(100)
        jumps = np.diff(spec.segmentation.phase_coeffs, axis=0)
        np.testing.assert_allclose(np.abs(jumps[0]), [2.4, 7.0])
        np.testing.assert_allclose(np.abs(jumps[1]), [3.5, 8.0])
        np.testing.assert_allclose(np.abs(jumps[2]), [1.6, 2.0])

    def test_change_indices_follow_floor_rule(self):
        # A new phase starts at floor(f*n) + 1.
        spec = build_paper_scenario(100)
        np.testing.assert_array_equal(
            spec.segmentation.change_indices(100), [21, 51, 71]
        )
        spec = build_paper_scenario(500)
        np.testing.assert_array_equal(
            spec.segmentation.change_indices(500), [101, 251, 351]
        )

    def test_three_true_jumps_in_path(self):
        spec = build_paper_scenario(100)
        path = spec.segmentation.coefficient_path(100)
        theta = theta_from_beta(path)
        assert (np.linalg.norm(theta[1:], axis=1) > 0).sum() == 3

    def test_noiseless_third_phase_value(self):
        # Within the third phase the response is -1.1 + 2 * (i/n).
        spec = build_paper_scenario(100)
        data, seg = sample_dataset(spec, tau=0.5, noiseless=True)
        for i in (51, 60, 70):
            assert data.y[i - 1] == pytest.approx(-1.1 + 2.0 * i / 100)

    def test_noiseless_phase1_value(self):
        spec = build_paper_scenario(100)
        data, _ = sample_dataset(spec, tau=0.5, noiseless=True)
        assert data.y[9] == pytest.approx(0.1)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError, match="n >= 10"):
            build_paper_scenario(9)


class TestStockScenario:
    def test_change_structure(self):
        spec = build_stock_scenario(seed=1)
        assert spec.n == 251
        seg = spec.segmentation
        np.testing.assert_array_equal(seg.change_indices(251), [83, 125, 166])
        path = seg.coefficient_path(251)
        # first coefficient: -1 -> 1 at 83 and back at 166
        assert path[99, 0] == 1.0
        assert path[81, 0] == -1.0
        assert path[200, 0] == -1.0
        # third coefficient never changes
        assert np.all(path[:, 2] == path[0, 2])

    def test_design_has_intercept(self):
        spec = build_stock_scenario(seed=3)
        data, _ = sample_dataset(spec, tau=0.5)
        assert np.all(data.x[:, 0] == 1.0)
        assert data.p == 3


class TestSampling:
    def test_same_seed_identical(self):
        spec = build_paper_scenario(60, error_kind="t3", seed=42)
        a, _ = sample_dataset(spec, tau=0.5)
        b, _ = sample_dataset(spec, tau=0.5)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x)

    def test_rejects_bad_tau(self):
        spec = build_paper_scenario(50)
        with pytest.raises(ValueError, match="tau"):
            sample_dataset(spec, tau=1.5)

    def test_median_shift_zero_for_symmetric(self):
        for kind in ("normal", "t3", "cauchy"):
            assert ErrorDistribution.for_tau(kind, 0.5).tau_shift == 0.0

    @pytest.mark.parametrize("kind", ["normal", "t3", "cauchy"])
    @pytest.mark.parametrize("tau", [0.3, 0.5, 0.7])
    def test_shifted_errors_hit_tau_quantile(self, kind, tau):
        n = 20000
        err = ErrorDistribution.for_tau(kind, tau)
        draws = err.sample(np.random.default_rng(7), n)
        frac_below = np.mean(draws < 0)
        assert abs(frac_below - tau) <= 3 * np.sqrt(tau * (1 - tau) / n)


class TestSerialization:
    def test_scenario_json_round_trip(self):
        spec = build_stock_scenario(seed=9, error_kind="cauchy")
        again = ScenarioSpec.from_json(spec.to_json())
        assert again.name == spec.name and again.seed == spec.seed
        assert again.error == spec.error
        np.testing.assert_array_equal(
            again.segmentation.phase_coeffs, spec.segmentation.phase_coeffs
        )

    def test_csv_round_trip(self, tmp_path):
        spec = build_paper_scenario(40, seed=5)
        data, _ = sample_dataset(spec, tau=0.5)
        path = tmp_path / "d.csv"
        write_dataset_csv(path, data)
        back = load_dataset_csv(path)
        np.testing.assert_array_equal(back.y, data.y)
        np.testing.assert_array_equal(back.x, data.x)

    def test_csv_rejects_missing_values(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1\n1.0,1.0\n,1.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_dataset_csv(path)

    def test_csv_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,z1\n1.0,1.0\n")
        with pytest.raises(ValueError, match="header"):
            load_dataset_csv(path)
