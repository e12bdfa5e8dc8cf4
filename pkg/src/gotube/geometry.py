"""Hypersphere sampling and spherical cap geometry.

Coverage accounting reduces to areas of hyperspherical caps.  A cap is
parameterized here by its chord radius: the Euclidean distance from the
cap's pole to its boundary circle.  A chord radius of ``sqrt(2) * r``
cuts a sphere of radius ``r`` into hemispheres, and a chord radius of
``2 * r`` covers the whole sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc


@dataclass(frozen=True)
class Ball:
    """A closed Euclidean ball with a finite center and radius >= 0."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if center.ndim != 1 or center.size == 0:
            raise ValueError("center must be a non-empty vector")
        if not np.all(np.isfinite(center)):
            raise ValueError("center must be finite")
        radius = float(self.radius)
        if not math.isfinite(radius) or radius < 0.0:
            raise ValueError(f"radius must be finite and >= 0, got {radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)

    @property
    def dimension(self) -> int:
        return self.center.size


def sample_surface(ball: Ball, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` points uniformly from the surface of ``ball``.

    Standard normal draws are normalized onto the unit sphere, which is
    uniform by rotational symmetry.  Rows that come out with zero norm
    (possible only through underflow) are redrawn.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    n = ball.dimension
    draws = rng.standard_normal((count, n))
    norms = np.linalg.norm(draws, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        draws[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(draws, axis=1)
    units = draws / norms[:, None]
    return ball.center[None, :] + ball.radius * units


def cap_fraction(dim: int, chord_radius, sphere_radius: float):
    """Fraction of a sphere's surface area covered by a cap.

    ``dim`` is the ambient dimension (the sphere itself has dimension
    ``dim - 1``).  ``chord_radius`` may be a scalar or an array; the
    return value matches its shape.  The fraction is exact in terms of
    the regularized incomplete beta function: a cap of colatitude
    ``phi <= pi/2`` covers ``betainc((dim-1)/2, 1/2, sin(phi)**2) / 2``
    of the surface, and larger caps follow by complementation.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if not (math.isfinite(sphere_radius) and sphere_radius > 0.0):
        raise ValueError(f"sphere_radius must be finite and > 0, got {sphere_radius}")
    r = np.asarray(chord_radius, dtype=float)
    if np.any(r < 0.0) or not np.all(np.isfinite(r)):
        raise ValueError("chord_radius must be finite and >= 0")
    ratio = np.minimum(r / (2.0 * sphere_radius), 1.0)
    phi = 2.0 * np.arcsin(ratio)
    s2 = np.sin(phi) ** 2
    half = 0.5 * betainc((dim - 1) / 2.0, 0.5, s2)
    frac = np.where(phi <= 0.5 * np.pi, half, 1.0 - half)
    frac = np.clip(frac, 0.0, 1.0)
    if np.isscalar(chord_radius):
        return float(frac)
    return frac


def ball_volume(dim: int, radius: float) -> float:
    """Lebesgue volume of a ``dim``-dimensional ball."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not (math.isfinite(radius) and radius >= 0.0):
        raise ValueError(f"radius must be finite and >= 0, got {radius}")
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0) * radius**dim
