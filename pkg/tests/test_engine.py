"""Tests for tube construction: cap radii, coverage, and the main loop."""

import math

import numpy as np
import pytest

from gotube.engine import (
    GoTubeConfig,
    compute_cap_radius,
    coverage_probability,
    run_gotube,
    spectral_norms,
    tube_metrics,
)
from gotube.errors import BudgetExceededError, ConfigError, ContractViolation
from gotube.geometry import ball_volume
from gotube.systems import brusselator, linear, vanderpol, zero


def _config(**overrides):
    base = dict(
        system=linear(),
        x0=np.array([1.0, -1.0]),
        radius=0.05,
        times=np.linspace(0.0, 1.0, 6),
        mu=1.1,
        gamma=0.1,
        batch_size=50,
        seed=42,
    )
    base.update(overrides)
    return GoTubeConfig(**base)


class TestCapRadius:
    def test_unit_case(self):
        """lam = dlam = 1 with slack 2 solves r + r^2 = 2 at r = 1."""
        assert compute_cap_radius(1.0, 1.0, 2.0) == pytest.approx(1.0, rel=1e-15)

    def test_zero_slack_gives_zero(self):
        assert compute_cap_radius(3.0, 2.0, 0.0) == 0.0
        assert compute_cap_radius(0.0, 0.0, 0.0) == 0.0

    def test_zero_quotient_bound_gives_linear_radius(self):
        assert compute_cap_radius(4.0, 0.0, 2.0) == pytest.approx(0.5, rel=1e-15)

    def test_no_stretching_information_gives_infinity(self):
        assert compute_cap_radius(0.0, 0.0, 1.0) == math.inf

    def test_unbounded_quotient_gives_zero(self):
        assert compute_cap_radius(1.0, math.inf, 2.0) == 0.0

    def test_solves_quadratic_for_random_triples(self):
        """The radius satisfies dlam r^2 + lam r = slack to 1e-9 relative."""
        rng = np.random.default_rng(42)
        lam = rng.uniform(1e-3, 10.0, size=1000)
        dlam = rng.uniform(0.0, 5.0, size=1000)
        slack = rng.uniform(1e-6, 10.0, size=1000)
        r = compute_cap_radius(lam, dlam, slack)
        residual = dlam * r * r + lam * r
        np.testing.assert_allclose(residual, slack, rtol=1e-9)

    def test_stable_for_tiny_quotient_bound(self):
        """A vanishing quotient bound approaches the linear limit smoothly."""
        r_limit = compute_cap_radius(2.0, 0.0, 1.0)
        r_tiny = compute_cap_radius(2.0, 1e-14, 1.0)
        assert abs(r_tiny - r_limit) < 1e-14

    def test_negative_inputs_rejected(self):
        with pytest.raises(ContractViolation):
            compute_cap_radius(1.0, 1.0, -0.1)
        with pytest.raises(ContractViolation):
            compute_cap_radius(-1.0, 1.0, 0.1)

    def test_vectorized_matches_scalar(self):
        lam = np.array([1.0, 0.0, 2.0])
        dlam = np.array([1.0, 0.0, 0.0])
        slack = np.array([2.0, 1.0, 3.0])
        vec = compute_cap_radius(lam, dlam, slack)
        for i in range(3):
            assert vec[i] == compute_cap_radius(
                float(lam[i]), float(dlam[i]), float(slack[i])
            )


class TestCoverageProbability:
    def test_empty_set_covers_nothing(self):
        assert coverage_probability(np.array([]), 3, 1.0) == 0.0

    def test_full_cap_covers_everything(self):
        assert coverage_probability(np.array([2.0]), 3, 1.0) == 1.0
        assert coverage_probability(np.array([0.1, math.inf]), 4, 1.0) == 1.0

    def test_two_hemispheres_cover_three_quarters(self):
        radii = np.full(2, math.sqrt(2.0))
        cov = coverage_probability(radii, 3, 1.0)
        np.testing.assert_allclose(cov, 0.75, rtol=1e-12)

    def test_matches_direct_product_for_small_sets(self):
        from gotube.geometry import cap_fraction

        rng = np.random.default_rng(42)
        radii = rng.uniform(0.0, 1.5, size=20)
        p = cap_fraction(4, radii, 1.0)
        direct = 1.0 - np.prod(1.0 - p)
        np.testing.assert_allclose(
            coverage_probability(radii, 4, 1.0), direct, rtol=1e-12
        )

    def test_accumulates_many_tiny_caps(self):
        """10^5 caps of probability 1e-5 give roughly 1 - exp(-1)."""
        from gotube.geometry import cap_fraction

        radii = np.full(100_000, 0.01)
        p = float(cap_fraction(2, 0.01, 1.0))
        expected = -math.expm1(100_000 * math.log1p(-p))
        np.testing.assert_allclose(
            coverage_probability(radii, 2, 1.0), expected, rtol=1e-12
        )


class TestSpectralNorms:
    def test_matches_svd_on_random_batch(self):
        rng = np.random.default_rng(42)
        mats = rng.normal(size=(50, 5, 5))
        mine = spectral_norms(mats)
        ref = np.linalg.svd(mats, compute_uv=False)[:, 0]
        np.testing.assert_allclose(mine, ref, rtol=1e-6)

    def test_survives_axis_aligned_leading_direction(self):
        """A symmetric matrix whose top eigenvector is (1, -1) still works."""
        m = np.array([[1.0, -0.9], [-0.9, 1.0]])
        np.testing.assert_allclose(spectral_norms(m), 1.9, rtol=1e-7)

    def test_identity_and_zero(self):
        assert spectral_norms(np.eye(4)) == pytest.approx(1.0, rel=1e-12)
        assert spectral_norms(np.zeros((3, 3))) == 0.0

    def test_scaling(self):
        rng = np.random.default_rng(42)
        m = rng.normal(size=(4, 4))
        np.testing.assert_allclose(
            spectral_norms(7.5 * m), 7.5 * spectral_norms(m), rtol=1e-6
        )

    def test_row_results_independent_of_batch(self):
        rng = np.random.default_rng(42)
        mats = rng.normal(size=(30, 4, 4))
        batch = spectral_norms(mats)
        solo = spectral_norms(mats[17])
        assert batch[17] == solo


class TestConfigValidation:
    def test_accepts_base_config(self):
        _config().validate()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"mu": 1.0},
            {"mu": 0.9},
            {"gamma": 0.0},
            {"gamma": 1.0},
            {"radius": 0.0},
            {"radius": -1.0},
            {"times": np.array([0.0])},
            {"times": np.array([0.0, 1.0, 1.0])},
            {"times": np.array([0.0, 2.0, 1.0])},
            {"x0": np.array([1.0, 2.0, 3.0])},
            {"x0": np.array([np.nan, 0.0])},
            {"batch_size": 0},
            {"max_samples": 10},
            {"abs_tol": 0.0},
            {"stats_n": 5},
            {"distance_weights": np.array([1.0, -1.0])},
        ],
    )
    def test_rejects_bad_values(self, overrides):
        with pytest.raises(ConfigError):
            _config(**overrides).validate()


class TestRunOnExactSystems:
    def test_zero_field_radius_is_mu_delta0(self):
        """With no motion every ball has radius mu * delta0."""
        cfg = GoTubeConfig(
            system=zero(2),
            x0=np.zeros(2),
            radius=0.1,
            times=np.linspace(0.0, 1.0, 6),
            mu=1.5,
            gamma=0.1,
            batch_size=50,
            seed=42,
        )
        tube = run_gotube(cfg)
        np.testing.assert_allclose(tube.radii, 1.5 * 0.1, rtol=1e-12)
        assert np.all(tube.coverages >= math.sqrt(0.9))

    def test_contraction_tracks_exponential_decay(self):
        """On dx/dt = -x the radius is mu * delta0 * exp(-t) within 0.1%."""
        cfg = _config(times=np.linspace(0.0, 2.0, 11), batch_size=100, seed=1)
        tube = run_gotube(cfg)
        exact = 1.1 * 0.05 * np.exp(-tube.times)
        assert np.all(tube.radii >= 0.999 * exact)
        assert np.all(tube.radii <= 1.001 * exact)


@pytest.fixture(scope="module")
def tube():
    cfg = GoTubeConfig(
        system=brusselator(),
        x0=np.array([1.0, 1.0]),
        radius=0.01,
        times=np.linspace(0.0, 2.0, 11),
        mu=1.1,
        gamma=0.1,
        batch_size=100,
        seed=7,
    )
    return run_gotube(cfg, collect_distances=True)


class TestRunInvariants:
    def test_radius_is_exactly_mu_times_max_distance(self, tube):
        np.testing.assert_array_equal(tube.radii, 1.1 * tube.max_distances)

    def test_every_sample_inside_its_ball(self, tube):
        for j, dists in enumerate(tube.sample_distances):
            assert np.all(dists <= tube.radii[j])
            assert dists.max() == tube.max_distances[j]

    def test_coverage_meets_split_target(self, tube):
        assert np.all(tube.coverages >= math.sqrt(1.0 - 0.1))

    def test_sample_counts_grow(self, tube):
        assert np.all(np.diff(tube.sample_counts) >= 0)
        assert tube.sample_counts[0] >= 100

    def test_balls_property_mirrors_arrays(self, tube):
        balls = tube.balls
        assert len(balls) == tube.times.size
        assert balls[3].radius == tube.radii[3]
        assert balls[3].n_samples == tube.sample_counts[3]
        np.testing.assert_array_equal(balls[3].center, tube.centers[3])

    def test_envelopes_bracket_centers(self, tube):
        low, high = tube.sample_envelopes
        assert np.all(low <= high)


class TestDeterminism:
    def test_identical_config_identical_tube(self):
        cfg_a = _config(seed=5)
        cfg_b = _config(seed=5)
        ta = run_gotube(cfg_a)
        tb = run_gotube(cfg_b)
        np.testing.assert_array_equal(ta.radii, tb.radii)
        np.testing.assert_array_equal(ta.centers, tb.centers)
        np.testing.assert_array_equal(ta.coverages, tb.coverages)
        np.testing.assert_array_equal(ta.sample_counts, tb.sample_counts)

    def test_different_seed_different_tube(self):
        ta = run_gotube(_config(seed=5))
        tb = run_gotube(_config(seed=6))
        assert not np.array_equal(ta.radii, tb.radii)


class TestBudget:
    def test_budget_exhaustion_carries_partial_tube(self):
        cfg = GoTubeConfig(
            system=vanderpol(),
            x0=np.array([1.0, 0.0]),
            radius=0.05,
            times=np.linspace(0.0, 4.0, 21),
            mu=1.1,
            gamma=0.1,
            batch_size=100,
            max_samples=300,
            seed=3,
        )
        with pytest.raises(BudgetExceededError) as info:
            run_gotube(cfg)
        partial = info.value.partial_tube
        assert partial is not None
        assert 0 < partial.times.size < 20
        assert partial.radii.size == partial.times.size
        assert 0.0 <= info.value.achieved_coverage < 1.0


class TestWeightedDistances:
    def test_weighted_run_completes(self):
        cfg = _config(distance_weights=np.array([4.0, 0.25]))
        tube = run_gotube(cfg, collect_distances=True)
        assert np.all(np.isfinite(tube.radii))
        assert np.all(tube.coverages >= math.sqrt(0.9))
        np.testing.assert_array_equal(tube.radii, 1.1 * tube.max_distances)

    def test_weights_change_the_radii(self):
        plain = run_gotube(_config())
        weighted = run_gotube(_config(distance_weights=np.array([4.0, 0.25])))
        assert not np.array_equal(plain.radii, weighted.radii)


class TestMetrics:
    def test_volumes_follow_radii(self):
        tube = run_gotube(_config())
        metrics = tube_metrics(tube)
        for j in range(tube.times.size):
            assert metrics.volumes[j] == ball_volume(2, float(tube.radii[j]))
        assert metrics.max_radius == tube.radii.max()
        assert metrics.average_volume == pytest.approx(metrics.volumes.mean())
        assert metrics.total_samples == tube.sample_counts[-1]
