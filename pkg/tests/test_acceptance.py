"""Acceptance suite: one test per release criterion.

Each test prints one `criterion NN: PASS` line (visible with ``-s`` or
in the captured output) and enforces the pinned tolerance and runtime
budget for that criterion.  Heavy criteria build real tubes, so the
whole file takes several minutes.
"""

import json
import time

import numpy as np
import pytest
from scipy.linalg import expm

import gotube.cli as cli
from gotube.artifacts import read_manifest, read_tube_csv
from gotube.engine import (
    GoTubeConfig,
    compute_cap_radius,
    run_gotube,
    tube_metrics,
)
from gotube.extremes import EmpiricalCdf, build_lower_bound, dkw_epsilon
from gotube.geometry import Ball, ball_volume, cap_fraction, sample_surface
from gotube.integration import integrate_augmented
from gotube.oracle import audit_tube, fd_sensitivity
from gotube.systems import (
    brusselator,
    ctrnn,
    dubins,
    linear,
    random_ctrnn_weights,
    vanderpol,
)


def _report(number: int, name: str, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    print(f"criterion {number:02d} {name}: PASS{suffix}")


class Budget:
    """Asserts the criterion's pinned wall-clock budget on exit."""

    def __init__(self, seconds: float):
        self.limit = seconds

    def __enter__(self):
        self.started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.elapsed = time.perf_counter() - self.started
        if exc_type is None:
            assert self.elapsed <= self.limit, (
                f"runtime {self.elapsed:.1f}s exceeds budget {self.limit:.0f}s"
            )
        return False


def test_criterion_01_radius_is_exactly_mu_times_sample_maximum():
    """Every radius equals mu * m_bar exactly and bounds every sample."""
    with Budget(60.0) as budget:
        cfg = GoTubeConfig(
            system=brusselator(),
            x0=np.array([1.0, 1.0]),
            radius=0.01,
            times=np.linspace(0.0, 1.0, 11),
            mu=1.1,
            gamma=0.1,
            batch_size=100,
            seed=0,
        )
        tube = run_gotube(cfg, collect_distances=True)
        np.testing.assert_array_equal(tube.radii, cfg.mu * tube.max_distances)
        for j, dists in enumerate(tube.sample_distances):
            assert np.all(dists <= tube.radii[j])
    _report(1, "tightness identity", f"{budget.elapsed:.1f}s")


def test_criterion_02_contraction_conservative_in_at_least_68_of_100_runs():
    """On dx/dt = -x the radius must cover delta0 * exp(-t) per run.

    gamma = 0.2 allows each run to fail with probability 0.2, so 100
    runs admit at most 32 failures (expectation 20 plus binomial
    3-sigma slack).
    """
    with Budget(300.0) as budget:
        delta0 = 0.1
        times = np.linspace(0.0, 2.0, 21)
        m_star = delta0 * np.exp(-times[1:])
        failures = 0
        for seed in range(100):
            cfg = GoTubeConfig(
                system=linear(),
                x0=np.array([1.0, -1.0]),
                radius=delta0,
                times=times,
                mu=1.05,
                gamma=0.2,
                batch_size=32,
                seed=seed,
            )
            tube = run_gotube(cfg)
            if not np.all(tube.radii >= m_star):
                failures += 1
        assert failures <= 32
    _report(2, "analytic-flow conservativeness",
            f"{failures}/100 failures, {budget.elapsed:.1f}s")


def test_criterion_03_brusselator_audit_violation_rate_below_1_percent():
    """A fresh 1e5-trajectory audit of a T = 5 Brusselator tube."""
    with Budget(600.0) as budget:
        cfg = GoTubeConfig(
            system=brusselator(),
            x0=np.array([1.0, 1.0]),
            radius=0.05,
            times=np.linspace(0.0, 5.0, 101),
            mu=1.1,
            gamma=0.1,
            batch_size=200,
            seed=0,
        )
        tube = run_gotube(cfg)
        report = audit_tube(tube, 100_000, np.random.default_rng(777))
        assert report.excluded == 0
        assert report.max_violation_rate <= 0.01
    _report(3, "empirical containment",
            f"max rate {report.max_violation_rate:.5f}, "
            f"worst ratio {report.worst_ratio:.4f}, {budget.elapsed:.1f}s")


def test_criterion_04_sensitivity_matches_finite_differences_and_expm():
    """Variational sensitivities vs central differences and expm."""
    with Budget(60.0) as budget:
        cases = [
            (vanderpol(), np.array([1.0, 0.5]), 2.0),
            (brusselator(), np.array([1.0, 1.0]), 2.0),
            (dubins(), np.array([0.0, 0.0, 0.5]), 2.0),
            (ctrnn(random_ctrnn_weights(8, seed=8)), np.zeros(8), 2.0),
        ]
        worst = 0.0
        for system, x0, t in cases:
            fd = fd_sensitivity(system, x0, t)
            sens = integrate_augmented(system, x0, 0.0, t).sensitivity
            rel = np.abs(fd - sens).max() / np.abs(sens).max()
            worst = max(worst, rel)
            assert rel <= 1e-4, system.name
        a = np.array([[0.0, 1.0], [-2.0, -0.5]])
        fd = fd_sensitivity(linear(a), np.array([0.3, -0.7]), 1.5)
        exact = expm(1.5 * a)
        rel_lin = np.abs(fd - exact).max() / np.abs(exact).max()
        assert rel_lin <= 1e-6
    _report(4, "sensitivity correctness",
            f"worst rel {worst:.2e}, linear {rel_lin:.2e}, "
            f"{budget.elapsed:.1f}s")


def test_criterion_05_cap_fraction_matches_monte_carlo():
    """Analytic cap fractions sit within 3 standard errors of counts."""
    with Budget(120.0) as budget:
        rng = np.random.default_rng(20240101)
        count = 1_000_000
        worst_sigma = 0.0
        for n in (2, 5, 10):
            points = sample_surface(Ball(center=np.zeros(n), radius=1.0), count, rng)
            anchor = np.zeros(n)
            anchor[0] = 1.0
            chords = np.linalg.norm(points - anchor, axis=1)
            for ratio in (0.3, 0.7, 1.0, 1.4):
                p = float(cap_fraction(n, ratio, 1.0))
                p_hat = float(np.mean(chords <= ratio))
                se = np.sqrt(p * (1.0 - p) / count)
                worst_sigma = max(worst_sigma, abs(p_hat - p) / se)
                assert abs(p_hat - p) <= 3.0 * se, (n, ratio)
            hemisphere = float(cap_fraction(n, np.sqrt(2.0), 1.0))
            assert abs(hemisphere - 0.5) <= 1e-12, n
    _report(5, "cap geometry",
            f"worst deviation {worst_sigma:.2f} SE, {budget.elapsed:.1f}s")


def test_criterion_06_cap_radius_solves_its_quadratic():
    """r satisfies dlam r^2 + lam r = slack to 1e-9 relative."""
    with Budget(1.0) as budget:
        rng = np.random.default_rng(123)
        lam = rng.uniform(1e-3, 50.0, size=10_000)
        dlam = rng.uniform(0.0, 20.0, size=10_000)
        slack = rng.uniform(1e-9, 100.0, size=10_000)
        r = compute_cap_radius(lam, dlam, slack)
        np.testing.assert_allclose(dlam * r * r + lam * r, slack, rtol=1e-9)
        assert compute_cap_radius(3.0, 2.0, 0.0) == 0.0
        assert compute_cap_radius(4.0, 0.0, 3.0) == 3.0 / 4.0
    _report(6, "cap-radius equation", f"{budget.elapsed:.2f}s")


def test_criterion_07_lower_envelope_dominance_and_coverage():
    """The certified envelope sits below the empirical cdf and, in at
    least 180 of 200 Gumbel experiments, below the true cdf."""
    with Budget(180.0) as budget:
        eps = dkw_epsilon(100, 0.05)
        assert abs(eps - 0.122387) <= 1e-6
        rng = np.random.default_rng(31337)
        conservative = 0
        for _ in range(200):
            sample = rng.gumbel(loc=0.0, scale=1.0, size=100)
            bound = build_lower_bound(sample, 0.05)
            grid = np.linspace(sample.min() - 5.0, sample.max() + 10.0, 2001)
            envelope = bound.evaluate(grid)
            empirical = EmpiricalCdf(sample).evaluate(grid)
            assert np.all(envelope <= empirical + 1e-12)
            true_cdf = np.exp(-np.exp(-grid))
            if np.all(envelope <= true_cdf + 1e-12):
                conservative += 1
        assert conservative >= 180
    _report(7, "certified lower envelope",
            f"dkw {eps:.6f}, conservative {conservative}/200, "
            f"{budget.elapsed:.1f}s")


def test_criterion_08_dubins_completes_a_40_second_horizon():
    """High-confidence long-horizon run terminates with finite radii."""
    with Budget(3600.0) as budget:
        cfg = GoTubeConfig(
            system=dubins(),
            x0=np.array([0.0, 0.0, 0.0]),
            radius=0.01,
            times=np.linspace(0.0, 40.0, 81),
            mu=1.1,
            gamma=0.01,
            batch_size=500,
            seed=0,
        )
        tube = run_gotube(cfg)
        assert tube.times.size == 80
        assert np.all(np.isfinite(tube.radii))
        assert np.all(tube.radii > 0.0)
        assert np.all(tube.coverages >= np.sqrt(1.0 - cfg.gamma))
    _report(8, "long-horizon stability",
            f"max radius {tube.radii.max():.4f}, "
            f"{tube.sample_counts[-1]} samples, {budget.elapsed:.1f}s")


def test_criterion_09_tightening_mu_shrinks_tubes_and_needs_more_samples():
    """Across mu = 1.5, 1.2, 1.1, 1.05 the average volume must not grow
    and the sample count must not drop."""
    with Budget(1800.0) as budget:
        weights = random_ctrnn_weights(8, seed=8)
        volumes = []
        counts = []
        for mu in (1.5, 1.2, 1.1, 1.05):
            cfg = GoTubeConfig(
                system=ctrnn(weights),
                x0=np.zeros(8),
                radius=0.05,
                times=np.linspace(0.0, 2.0, 11),
                mu=mu,
                gamma=0.2,
                batch_size=10_000,
                seed=0,
                max_samples=2_500_000,
            )
            tube = run_gotube(cfg)
            volumes.append(tube_metrics(tube).average_volume)
            counts.append(int(tube.sample_counts[-1]))
        assert all(a >= b for a, b in zip(volumes, volumes[1:])), volumes
        assert all(a <= b for a, b in zip(counts, counts[1:])), counts
    _report(9, "runtime-tightness trade-off",
            f"volumes {['%.2e' % v for v in volumes]}, "
            f"samples {counts}, {budget.elapsed:.1f}s")


def test_criterion_10_reports_are_reproducible_and_self_consistent(tmp_path):
    """Same seed and config give byte-identical CSVs, and the metrics
    file can be re-derived from the CSV alone."""
    with Budget(60.0) as budget:
        args = [
            "run",
            "--system", "brusselator",
            "--center", "1,1",
            "--radius", "0.01",
            "--time-horizon", "1",
            "--dt", "0.1",
            "--seed", "12",
            "--batch", "100",
        ]
        assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
        csv_a = (tmp_path / "a" / "tube.csv").read_bytes()
        csv_b = (tmp_path / "b" / "tube.csv").read_bytes()
        assert csv_a == csv_b
        table = read_tube_csv(str(tmp_path / "a" / "tube.csv"))
        with open(tmp_path / "a" / "metrics.json") as handle:
            metrics = json.load(handle)
        assert metrics["max_radius"] == table["radius"].max()
        assert metrics["total_samples"] == int(table["n_samples"][-1])
        rederived = [
            ball_volume(2, float(r)) for r in table["radius"]
        ]
        recorded = [entry["volume"] for entry in metrics["per_step"]]
        assert recorded == rederived
        assert metrics["average_volume"] == np.asarray(rederived).mean()
        manifest = read_manifest(str(tmp_path / "a" / "manifest.json"))
        np.testing.assert_array_equal(
            1.1 * np.array(manifest["m_bar"]), table["radius"]
        )
    _report(10, "determinism and artifacts", f"{budget.elapsed:.1f}s")
