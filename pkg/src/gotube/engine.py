"""Construction of stochastic bounding tubes.

A bounding tube is a sequence of balls around a reference trajectory,
one per timestep, such that with confidence ``1 - gamma`` every
trajectory starting on the surface of the initial ball stays inside
the balls at the corresponding times.  Interior starting points stay
inside as well whenever trajectories cannot cross, which holds for the
smooth autonomous systems handled here.

Each timestep keeps admitting fresh surface samples until the sampled
caps around them cover enough of the initial sphere.  The cap radius
certified around a sample follows from its own stretching factor, a
certified bound on how fast stretching factors can vary between
nearby starting points, and the sample's distance margin below the
proposed ball radius.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BudgetExceededError,
    ConfigError,
    ContractViolation,
    DegenerateSampleError,
)
from .extremes import build_lower_bound, dkw_epsilon, sample_max_quotients
from .geometry import Ball, ball_volume, cap_fraction, sample_surface
from .integration import (
    DEFAULT_TOLERANCES,
    integrate_augmented_batch,
    integrate_state_batch,
)
from .systems import SystemSpec

logger = logging.getLogger("gotube")

_POWER_TOL = 1e-8
_POWER_MAX_ITER = 200


@dataclass(frozen=True)
class GoTubeConfig:
    """Resolved inputs of one tube construction.

    ``times`` is the full grid including the departure time; balls are
    produced for every later entry.  ``max_samples`` bounds the visited
    sample count and defaults to ``200 * batch_size``.  ``stats_m`` and
    ``stats_n`` set the block size and the starting repetition count of
    the difference-quotient experiment; the repetition count doubles,
    up to ``stats_n_max``, whenever the certificate saturates.
    """

    system: SystemSpec
    x0: np.ndarray
    radius: float
    times: np.ndarray
    mu: float = 1.1
    gamma: float = 0.1
    batch_size: int = 500
    max_samples: int | None = None
    seed: int = 0
    abs_tol: float = DEFAULT_TOLERANCES[0]
    rel_tol: float = DEFAULT_TOLERANCES[1]
    stats_m: int = 20
    stats_n: int = 1024
    stats_n_max: int = 2**21
    distance_weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        if self.distance_weights is not None:
            object.__setattr__(
                self,
                "distance_weights",
                np.asarray(self.distance_weights, dtype=float),
            )

    def validate(self):
        problems = []
        if self.x0.ndim != 1 or self.x0.size != self.system.dim:
            problems.append(
                f"x0 must be a vector of length {self.system.dim}"
            )
        elif not np.all(np.isfinite(self.x0)):
            problems.append("x0 must be finite")
        if not (math.isfinite(self.radius) and self.radius > 0.0):
            problems.append(f"radius must be > 0, got {self.radius}")
        if self.times.ndim != 1 or self.times.size < 2:
            problems.append("times must contain the departure time and at "
                            "least one later time")
        elif not np.all(np.isfinite(self.times)) or np.any(np.diff(self.times) <= 0.0):
            problems.append("times must be finite and strictly increasing")
        if not (math.isfinite(self.mu) and self.mu > 1.0):
            problems.append(f"mu must be > 1, got {self.mu}")
        if not 0.0 < self.gamma < 1.0:
            problems.append(f"gamma must be in (0, 1), got {self.gamma}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_samples is not None and self.max_samples < self.batch_size:
            problems.append("max_samples must be at least one batch")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            problems.append("tolerances must be positive")
        if self.stats_m < 1 or self.stats_n < 10:
            problems.append("stats_m must be >= 1 and stats_n >= 10")
        if self.stats_n_max < self.stats_n:
            problems.append("stats_n_max must be >= stats_n")
        if self.distance_weights is not None and (
            self.distance_weights.shape != (self.system.dim,)
            or not np.all(np.isfinite(self.distance_weights))
            or np.any(self.distance_weights <= 0.0)
        ):
            problems.append("distance_weights must be positive and match the "
                            "system dimension")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def sample_budget(self) -> int:
        if self.max_samples is not None:
            return self.max_samples
        return 200 * self.batch_size

    @property
    def tolerances(self) -> tuple[float, float]:
        return (self.abs_tol, self.rel_tol)


@dataclass(frozen=True)
class BoundingBall:
    """One tube cross-section: a ball certified at one timestep."""

    t: float
    center: np.ndarray
    radius: float
    coverage: float
    n_samples: int
    max_distance: float


@dataclass
class BoundingTube:
    """The per-timestep balls together with the inputs that shaped them."""

    config: GoTubeConfig
    times: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    coverages: np.ndarray
    sample_counts: np.ndarray
    max_distances: np.ndarray
    runtime_seconds: float
    stats_n_final: int
    sample_envelopes: tuple[np.ndarray, np.ndarray] | None = None
    sample_distances: list[np.ndarray] = field(default_factory=list)

    @property
    def balls(self) -> list[BoundingBall]:
        return [
            BoundingBall(
                t=float(self.times[j]),
                center=self.centers[j],
                radius=float(self.radii[j]),
                coverage=float(self.coverages[j]),
                n_samples=int(self.sample_counts[j]),
                max_distance=float(self.max_distances[j]),
            )
            for j in range(self.times.size)
        ]

    @property
    def step_count(self) -> int:
        return self.times.size

    @property
    def initial_ball(self) -> Ball:
        return Ball(center=self.config.x0, radius=self.config.radius)


@dataclass(frozen=True)
class TubeMetrics:
    """Aggregate size figures for a finished tube."""

    times: np.ndarray
    radii: np.ndarray
    volumes: np.ndarray
    average_volume: float
    max_radius: float
    total_samples: int
    runtime_seconds: float


def spectral_norms(mats: np.ndarray) -> np.ndarray:
    """Largest singular value of each matrix by power iteration.

    Iterates ``v <- normalize(M^T M v)`` from a fixed pseudo-random
    start vector, which is generically not orthogonal to the leading
    singular direction (an axis-aligned start could be).  Rows freeze
    as soon as their estimate stabilizes, so each result depends only
    on its own matrix.
    """
    mats = np.asarray(mats, dtype=float)
    single = mats.ndim == 2
    if single:
        mats = mats[None]
    count, n, n2 = mats.shape
    if n != n2:
        raise ValueError(f"matrices must be square, got {mats.shape[1:]}")
    start = np.random.default_rng(20170101).standard_normal(n)
    v = np.broadcast_to(start / np.linalg.norm(start), (count, n)).copy()
    sigma = np.zeros(count)
    active = np.arange(count)
    for _ in range(_POWER_MAX_ITER):
        m_act = mats[active]
        w = np.einsum("bij,bj->bi", m_act, v[active])
        s_new = np.linalg.norm(w, axis=1)
        u = np.einsum("bji,bj->bi", m_act, w)
        u_norm = np.linalg.norm(u, axis=1)
        stalled = u_norm == 0.0
        grew = np.abs(s_new - sigma[active]) > _POWER_TOL * np.maximum(s_new, 1.0)
        sigma[active] = s_new
        keep = grew & ~stalled
        v[active[~stalled]] = (
            u[~stalled] / u_norm[~stalled, None]
        )
        active = active[keep]
        if active.size == 0:
            break
    out = sigma
    return float(out[0]) if single else out


def compute_cap_radius(lam, dlam, slack):
    """Certified cap chord radius around a sampled surface point.

    Solves ``lam * r + dlam * r**2 = slack`` for the largest radius
    whose worst-case stretched displacement still fits inside the
    distance margin ``slack``.  Written as ``2 s / (lam + sqrt(lam**2 +
    4 dlam s))`` to stay accurate for small ``dlam``; a zero quotient
    bound degrades gracefully to ``slack / lam`` and an unbounded
    quotient bound to radius zero.  With no stretching information at
    all (both zero) the margin holds everywhere and the radius is
    infinite.
    """
    lam = np.asarray(lam, dtype=float)
    dlam = np.asarray(dlam, dtype=float)
    slack = np.asarray(slack, dtype=float)
    if np.any(slack < 0.0) or np.any(lam < 0.0) or np.any(dlam < 0.0):
        raise ContractViolation("cap radius inputs must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.sqrt(lam * lam + 4.0 * dlam * slack)
        r = 2.0 * slack / (lam + disc)
    r = np.where(slack == 0.0, 0.0, r)
    shape = np.broadcast_shapes(lam.shape, dlam.shape, slack.shape)
    if shape == ():
        return float(r)
    return np.broadcast_to(r, shape).copy()


def coverage_probability(radii, dim: int, delta0: float) -> float:
    """Probability that a fresh surface point falls in some sampled cap.

    Independence of the sampled points gives the product bound
    ``1 - prod(1 - p_i)``, accumulated in log space.
    """
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if radii.size == 0:
        return 0.0
    finite = np.isfinite(radii)
    if np.any(radii[finite] < 0.0):
        raise ContractViolation("cap radii must be non-negative")
    capped = np.where(finite, np.minimum(radii, 2.0 * delta0), 2.0 * delta0)
    p = cap_fraction(dim, capped, delta0)
    p = np.clip(p, 0.0, 1.0)
    if np.any(p >= 1.0):
        return 1.0
    log_miss = np.sum(np.log1p(-p))
    return float(-np.expm1(log_miss))


class _QuotientBoundState:
    """Per-run memory for the quotient experiment's repetition count."""

    def __init__(self, start: int):
        self.n_reps = start


def _certified_quotient_bound(
    positions: np.ndarray,
    lams: np.ndarray,
    q_target: float,
    gamma_hat: float,
    config: GoTubeConfig,
    state: _QuotientBoundState,
    rng: np.random.Generator,
) -> float:
    """Upper bound on the stretching-factor difference quotient.

    Returns a value that exceeds the true extreme quotient with
    probability at least ``1 - gamma_hat``.  The primary certificate
    inverts the fitted lower envelope.  When the fit's lack-of-fit
    distance saturates the envelope (noise-dominated quotients do
    this), the empirical quantile at level ``q_target + epsilon``
    serves instead: on the confidence band event that backs the fitted
    route, the shifted empirical distribution is itself a valid lower
    envelope, so both certificates hold at the same level.  A
    degenerate (constant) quotient sample short-circuits to that
    constant.  If even the largest affordable experiment leaves
    ``q_target + epsilon`` out of range the result is infinite, which
    downstream turns into zero cap radii.
    """
    alpha = min(gamma_hat, 0.5)
    headroom = 1.0 - q_target
    n_floor = 2.0 * math.log(1.0 / alpha) / headroom**2
    n_reps = state.n_reps
    while n_reps < min(n_floor, config.stats_n_max):
        n_reps = min(2 * n_reps, config.stats_n_max)
    while True:
        sample = sample_max_quotients(
            positions, lams, config.stats_m, n_reps, rng
        )
        epsilon = dkw_epsilon(sample.size, gamma_hat)
        try:
            bound = build_lower_bound(sample, gamma_hat)
        except DegenerateSampleError:
            state.n_reps = n_reps
            return float(sample.max())
        value = bound.quantile(q_target)
        if math.isfinite(value):
            state.n_reps = n_reps
            return max(value, 0.0)
        if q_target + epsilon < 1.0:
            state.n_reps = n_reps
            order = np.sort(sample)
            idx = int(math.ceil(sample.size * (q_target + epsilon))) - 1
            logger.debug(
                "fitted envelope saturated, using empirical quantile "
                "at %.6f from %d repetitions", q_target + epsilon, n_reps
            )
            return float(order[min(idx, sample.size - 1)])
        if n_reps >= config.stats_n_max:
            state.n_reps = n_reps
            logger.warning(
                "quotient certificate saturated at %d repetitions", n_reps
            )
            return math.inf
        n_reps = min(2 * n_reps, config.stats_n_max)
        logger.debug("quotient certificate saturated, growing to %d", n_reps)


def _distances(states: np.ndarray, center: np.ndarray, weights) -> np.ndarray:
    diff = states - center
    if weights is not None:
        diff = diff * np.sqrt(weights)
    return np.linalg.norm(diff, axis=1)


def _stretch_factors(sens: np.ndarray, weights) -> np.ndarray:
    if weights is not None:
        sens = sens * np.sqrt(weights)[:, None]
    return spectral_norms(sens)


def run_gotube(config: GoTubeConfig, collect_distances: bool = False) -> BoundingTube:
    """Build a bounding tube over the configured time grid.

    Per timestep the visited sample set is advanced, joined by the
    pending batch, and grown batch by batch until the certified caps
    cover a ``sqrt(1 - gamma)`` fraction of initial-sphere directions
    in probability; splitting the confidence this way between coverage
    and the quotient certificate makes the whole tube valid at level
    ``1 - gamma``.  The ball radius is ``mu`` times the largest sampled
    distance from the reference trajectory.

    Raises BudgetExceededError, carrying the partial tube, when a
    timestep would need more than the sample budget.
    """
    started = time.perf_counter()
    config.validate()
    system = config.system
    dim = system.dim
    weights = config.distance_weights
    tolerances = config.tolerances
    initial_ball = Ball(center=config.x0, radius=config.radius)
    q_target = math.sqrt(1.0 - config.gamma)
    gamma_hat = 1.0 - q_target

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng_batch = np.random.default_rng(seeds[0])
    rng_stats = np.random.default_rng(seeds[1])
    stats_state = _QuotientBoundState(config.stats_n)

    t0 = float(config.times[0])
    step_times = config.times[1:]
    k = step_times.size

    center = config.x0.copy()
    init_points = np.empty((0, dim))
    states = np.empty((0, dim))
    sens = np.empty((0, dim, dim))
    dists = np.empty(0)
    lams = np.empty(0)

    centers = np.empty((k, dim))
    radii = np.empty(k)
    coverages = np.empty(k)
    sample_counts = np.empty(k, dtype=np.int64)
    max_distances = np.empty(k)
    env_min = np.empty((k, dim))
    env_max = np.empty((k, dim))
    distance_log: list[np.ndarray] = []

    def _partial(j: int, coverage: float, message: str):
        tube = BoundingTube(
            config=config,
            times=step_times[:j].copy(),
            centers=centers[:j].copy(),
            radii=radii[:j].copy(),
            coverages=coverages[:j].copy(),
            sample_counts=sample_counts[:j].copy(),
            max_distances=max_distances[:j].copy(),
            runtime_seconds=time.perf_counter() - started,
            stats_n_final=stats_state.n_reps,
            sample_envelopes=(env_min[:j].copy(), env_max[:j].copy()),
            sample_distances=distance_log[:j] if collect_distances else [],
        )
        return BudgetExceededError(
            message, partial_tube=tube, achieved_coverage=coverage
        )

    pending = sample_surface(initial_ball, config.batch_size, rng_batch)
    t_prev = t0
    for j, t_j in enumerate(map(float, step_times)):
        center = integrate_state_batch(
            system, center[None, :], t_prev, t_j, tolerances
        ).states[0]
        if states.shape[0]:
            moved = integrate_augmented_batch(
                system, states, sens, t_prev, t_j, tolerances
            )
            states, sens = moved.states, moved.sensitivities
            dists = _distances(states, center, weights)
            lams = _stretch_factors(sens, weights)
        coverage = 0.0
        while True:
            if states.shape[0] + pending.shape[0] > config.sample_budget:
                raise _partial(
                    j,
                    coverage,
                    f"needed more than {config.sample_budget} samples at "
                    f"t = {t_j:.6g} (coverage reached {coverage:.6f}, "
                    f"target {q_target:.6f})",
                )
            fresh = integrate_augmented_batch(
                system,
                pending,
                np.broadcast_to(
                    np.eye(dim), (pending.shape[0], dim, dim)
                ).copy(),
                t0,
                t_j,
                tolerances,
            )
            init_points = np.concatenate([init_points, pending])
            states = np.concatenate([states, fresh.states])
            sens = np.concatenate([sens, fresh.sensitivities])
            dists = np.concatenate(
                [dists, _distances(fresh.states, center, weights)]
            )
            lams = np.concatenate(
                [lams, _stretch_factors(fresh.sensitivities, weights)]
            )
            m_bar = float(dists.max())
            dlam = _certified_quotient_bound(
                init_points,
                lams,
                q_target,
                gamma_hat,
                config,
                stats_state,
                rng_stats,
            )
            slack = config.mu * m_bar - dists
            slack = np.where(slack < 0.0, 0.0, slack)
            cap_radii = compute_cap_radius(lams, dlam, slack)
            coverage = coverage_probability(cap_radii, dim, config.radius)
            pending = sample_surface(initial_ball, config.batch_size, rng_batch)
            logger.debug(
                "t=%.4g samples=%d m_bar=%.6g dlam=%.6g coverage=%.6f",
                t_j,
                states.shape[0],
                m_bar,
                dlam,
                coverage,
            )
            if coverage >= q_target:
                break
        centers[j] = center
        radii[j] = config.mu * m_bar
        coverages[j] = coverage
        sample_counts[j] = states.shape[0]
        max_distances[j] = m_bar
        env_min[j] = states.min(axis=0)
        env_max[j] = states.max(axis=0)
        if collect_distances:
            distance_log.append(dists.copy())
        logger.info(
            "t=%.4g radius=%.6g coverage=%.6f samples=%d quotient_reps=%d",
            t_j,
            radii[j],
            coverage,
            states.shape[0],
            stats_state.n_reps,
        )
        t_prev = t_j
    return BoundingTube(
        config=config,
        times=step_times.copy(),
        centers=centers,
        radii=radii,
        coverages=coverages,
        sample_counts=sample_counts,
        max_distances=max_distances,
        runtime_seconds=time.perf_counter() - started,
        stats_n_final=stats_state.n_reps,
        sample_envelopes=(env_min, env_max),
        sample_distances=distance_log,
    )


def tube_metrics(tube: BoundingTube) -> TubeMetrics:
    """Volume and radius aggregates of a finished tube."""
    dim = tube.config.system.dim
    volumes = np.array([ball_volume(dim, float(r)) for r in tube.radii])
    return TubeMetrics(
        times=tube.times.copy(),
        radii=tube.radii.copy(),
        volumes=volumes,
        average_volume=float(volumes.mean()) if volumes.size else 0.0,
        max_radius=float(tube.radii.max()) if tube.radii.size else 0.0,
        total_samples=int(tube.sample_counts[-1]) if tube.sample_counts.size else 0,
        runtime_seconds=tube.runtime_seconds,
    )
