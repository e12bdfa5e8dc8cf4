"""Independent Monte-Carlo checks of tubes and sensitivities.

Nothing here shares code paths with the tube construction beyond the
raw integrator: sensitivities are re-derived from finite differences
of the flow itself, and containment is judged on freshly drawn
trajectories, so these routines can catch errors in the variational
propagation and in the coverage accounting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Ball, sample_surface
from .integration import integrate_state_batch
from .systems import SystemSpec

logger = logging.getLogger("gotube")

ORACLE_TOLERANCES = (1e-11, 1e-9)


def fd_sensitivity(
    system: SystemSpec,
    x0: np.ndarray,
    t: float,
    step: float = 1e-6,
    tolerances: tuple[float, float] = ORACLE_TOLERANCES,
) -> np.ndarray:
    """Flow Jacobian by central differences, column by column.

    Integrates the plain flow from ``x0 + step * e_j`` and
    ``x0 - step * e_j`` for every axis and differences the endpoints,
    avoiding the variational equation entirely.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if step <= 0.0:
        raise ValueError(f"step must be > 0, got {step}")
    offsets = step * np.eye(n)
    starts = np.concatenate([x0 + offsets, x0 - offsets], axis=0)
    result = integrate_state_batch(system, starts, 0.0, t, tolerances)
    plus, minus = result.states[:n], result.states[n:]
    return (plus - minus).T / (2.0 * step)


@dataclass(frozen=True)
class ReachEstimate:
    """Sampled farthest-distance estimates along a time grid."""

    times: np.ndarray
    max_distance: np.ndarray
    centers: np.ndarray
    excluded: int


def mc_reach(
    system: SystemSpec,
    ball: Ball,
    times: np.ndarray,
    count: int,
    rng: np.random.Generator,
    tolerances: tuple[float, float] = ORACLE_TOLERANCES,
) -> ReachEstimate:
    """Largest sampled distance from the center trajectory per timestep.

    Draws ``count`` surface points, integrates them along the grid and
    records, per timestep, the maximum distance to the integrated
    center.  Samples whose integration fails are dropped from that
    time onward and counted in ``excluded``; a center failure is not
    recoverable and raises.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0.0):
        raise ValueError("times must be an increasing grid with >= 2 entries")
    points = sample_surface(ball, count, rng)
    center = ball.center.copy()
    k = times.size - 1
    estimates = np.empty(k)
    centers = np.empty((k, ball.dimension))
    excluded = 0
    for j in range(k):
        center = integrate_state_batch(
            system, center[None, :], times[j], times[j + 1], tolerances
        ).states[0]
        moved = integrate_state_batch(
            system, points, times[j], times[j + 1], tolerances, on_blowup="mark"
        )
        if not np.all(moved.ok):
            dropped = int((~moved.ok).sum())
            excluded += dropped
            logger.warning(
                "dropped %d of %d trajectories at t = %.6g",
                dropped,
                points.shape[0],
                times[j + 1],
            )
        points = moved.states[moved.ok]
        if points.shape[0] == 0:
            raise ValueError("every sampled trajectory failed to integrate")
        estimates[j] = float(
            np.linalg.norm(points - center, axis=1).max()
        )
        centers[j] = center
    return ReachEstimate(
        times=times[1:].copy(),
        max_distance=estimates,
        centers=centers,
        excluded=excluded,
    )


@dataclass(frozen=True)
class ContainmentReport:
    """Outcome of replaying fresh trajectories against a tube."""

    times: np.ndarray
    checked: np.ndarray
    violations: np.ndarray
    violation_rate: np.ndarray
    worst_ratio: float
    excluded: int
    total: int

    @property
    def max_violation_rate(self) -> float:
        return float(self.violation_rate.max()) if self.violation_rate.size else 0.0


def audit_tube(
    tube,
    count: int,
    rng: np.random.Generator,
    tolerances: tuple[float, float] = ORACLE_TOLERANCES,
) -> ContainmentReport:
    """Check a finished tube against independently sampled trajectories.

    Fresh surface points are integrated along the tube's own grid and
    compared against the emitted radii, using the same distance
    weighting the tube was built with.  ``worst_ratio`` is the largest
    observed distance-to-radius ratio, so values at or below 1 mean
    clean containment.
    """
    config = tube.config
    system = config.system
    weights = config.distance_weights
    sqrt_w = None if weights is None else np.sqrt(weights)
    points = sample_surface(
        Ball(center=config.x0, radius=config.radius), count, rng
    )
    k = tube.times.size
    checked = np.zeros(k, dtype=np.int64)
    violations = np.zeros(k, dtype=np.int64)
    worst = 0.0
    excluded = 0
    t_prev = float(config.times[0])
    for j in range(k):
        t_j = float(tube.times[j])
        moved = integrate_state_batch(
            system, points, t_prev, t_j, tolerances, on_blowup="mark"
        )
        if not np.all(moved.ok):
            dropped = int((~moved.ok).sum())
            excluded += dropped
            logger.warning(
                "audit dropped %d trajectories at t = %.6g", dropped, t_j
            )
        points = moved.states[moved.ok]
        if points.shape[0] == 0:
            break
        diff = points - tube.centers[j]
        if sqrt_w is not None:
            diff = diff * sqrt_w
        dist = np.linalg.norm(diff, axis=1)
        radius = float(tube.radii[j])
        checked[j] = dist.size
        violations[j] = int((dist > radius).sum())
        worst = max(worst, float(dist.max() / radius))
        t_prev = t_j
    with np.errstate(invalid="ignore"):
        rate = np.where(checked > 0, violations / np.maximum(checked, 1), 0.0)
    return ContainmentReport(
        times=tube.times.copy(),
        checked=checked,
        violations=violations,
        violation_rate=rate,
        worst_ratio=worst,
        excluded=excluded,
        total=count,
    )
