import numpy as np
import pytest
from scipy import stats

from spinodoid import sampling as sp

from conftest import make_random_model  # noqa: F401  (shared conftest import path)


class TestLatinHypercube:
    def test_one_point_per_stratum_1d(self):
        pts = sp.latin_hypercube(4, 1, np.random.default_rng(0))[:, 0]
        assert sorted(int(p * 4) for p in pts) == [0, 1, 2, 3]

    def test_exact_stratification_1000(self):
        pts = sp.latin_hypercube(1000, 3, np.random.default_rng(1))
        for ax in range(3):
            hist, _ = np.histogram(pts[:, ax], bins=10, range=(0, 1))
            assert np.all(hist == 100)

    def test_seed_reproducibility(self):
        a = sp.latin_hypercube(50, 2, np.random.default_rng(2))
        b = sp.latin_hypercube(50, 2, np.random.default_rng(2))
        assert np.array_equal(a, b)


class TestSimplexTransform:
    def test_fixed_point_at_ones(self):
        assert np.allclose(sp.simplex_transform(np.ones(3)), np.ones(3))

    def test_hand_value_m2(self):
        out = sp.simplex_transform(np.array([0.25, 0.5]))
        assert out == pytest.approx([0.5, 0.25])

    def test_descending_always(self):
        xi = np.random.default_rng(3).uniform(size=(1000, 3))
        out = sp.simplex_transform(xi)
        assert np.all(np.diff(out, axis=1) <= 0)
        assert np.all(out > 0)

    def test_matches_sorted_uniform_order_statistics(self):
        # oracle: marginals of descending-sorted independent uniforms
        rng = np.random.default_rng(4)
        n = 100_000
        out = sp.simplex_transform(rng.uniform(size=(n, 3)))
        sorted_uniform = np.sort(rng.uniform(size=(n, 3)), axis=1)[:, ::-1]
        for j in range(3):
            d = stats.ks_2samp(out[:, j], sorted_uniform[:, j]).statistic
            assert d < 0.01


class TestBias:
    def test_identity_at_one(self):
        v = np.random.default_rng(5).uniform(size=20)
        assert np.array_equal(sp.apply_bias(v, 1.0), v)

    def test_hand_value(self):
        assert sp.apply_bias(0.5, 1.6) == pytest.approx(0.5 ** 1.6)
        assert sp.apply_bias(0.5, 1.6) == pytest.approx(0.3299, abs=1e-4)

    def test_monotone_and_shrinking(self):
        rng = np.random.default_rng(6)
        v = np.sort(rng.uniform(size=50))
        out = sp.apply_bias(v, 1.6)
        assert np.all(np.diff(out) >= 0)
        assert np.all(out <= v)

    def test_invalid_bias_rejected(self):
        with pytest.raises(ValueError):
            sp.apply_bias(0.5, 0.8)


class TestToStructureParams:
    def test_inverse_of_domain_shift(self):
        s = sp.to_structure_params(np.array([0.0667]), 0.5)
        assert s.theta[0] == pytest.approx(20.0, abs=0.01)
        assert s.theta[1] == 0.0 and s.theta[2] == 0.0
        assert s.rho == pytest.approx(0.65)

    def test_boundary_clamped(self):
        s = sp.to_structure_params(np.array([1.0, 1.0]), 1.0)
        assert s.theta[0] == pytest.approx(89.9)
        assert s.rho == pytest.approx(0.999)
        s = sp.to_structure_params(np.array([0.0]), 0.0)
        assert s.theta[0] == pytest.approx(15.1)
        assert s.rho == pytest.approx(0.301)

    def test_axis_assignment(self):
        s = sp.to_structure_params(np.array([0.8, 0.4]), 0.5, axes=(2, 0))
        assert s.theta[2] == pytest.approx(75.0)
        assert s.theta[0] == pytest.approx(45.0)
        assert s.theta[1] == 0.0


class TestTypeCounts:
    @pytest.mark.parametrize("n,expected", [
        (75, (25, 25, 25)),
        (10, (4, 3, 3)),
        (3, (1, 1, 1)),
        (1, (1, 0, 0)),
        (2, (1, 1, 0)),
        (1000, (334, 333, 333)),
    ])
    def test_equal_parts_cubic_preferred(self, n, expected):
        assert sp.type_counts(n) == expected


class TestBuildDataset:
    def test_all_records_valid_and_sorted_in_tri_mode(self):
        plan = sp.SamplingPlan(n_samples=60, space="tri", seed=7)
        params = sp.build_dataset_params(plan)
        assert len(params) == 60
        for s in params:
            nonzero = [t for t in s.theta if t > 0]
            assert sorted(nonzero, reverse=True) == nonzero
            # descending values occupy the leading axes
            assert list(s.theta) == sorted(s.theta, reverse=True)

    def test_type_block_structure(self):
        plan = sp.SamplingPlan(n_samples=10, space="tri", seed=8)
        params = sp.build_dataset_params(plan)
        kinds = [s.n_nonzero for s in params]
        assert kinds == [3] * 4 + [2] * 3 + [1] * 3

    def test_full_space_randomizes_axes(self):
        plan = sp.SamplingPlan(n_samples=90, space="full", bias_theta=1.0,
                               bias_rho=1.0, seed=9)
        params = sp.build_dataset_params(plan)
        lamellar_axes = {tuple(t > 0 for t in s.theta)
                         for s in params if s.n_nonzero == 1}
        assert len(lamellar_axes) == 3  # every axis position occurs

    def test_deterministic(self):
        plan = sp.SamplingPlan(n_samples=12, seed=10)
        a = sp.build_dataset_params(plan)
        b = sp.build_dataset_params(plan)
        assert all(x == y for x, y in zip(a, b))

    def test_unbiased_lamellar_marginal_is_uniform(self):
        # m = 1, bias 1: the single angle is uniform on (15, 90)
        plan = sp.SamplingPlan(n_samples=30_000, space="tri", bias_theta=1.0,
                               bias_rho=1.0, seed=11)
        params = sp.build_dataset_params(plan)
        lam = np.array([s.theta[0] for s in params if s.n_nonzero == 1])
        d = stats.kstest(lam, stats.uniform(loc=15.0, scale=75.0).cdf).statistic
        assert d < 0.02

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            sp.SamplingPlan(n_samples=0)
        with pytest.raises(ValueError):
            sp.SamplingPlan(n_samples=5, bias_theta=0.5)
        with pytest.raises(ValueError):
            sp.SamplingPlan(n_samples=5, space="diagonal")
