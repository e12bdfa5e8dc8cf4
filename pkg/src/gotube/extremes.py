"""Certified lower bounds on extreme difference quotients.

The stretching factor of the flow map, viewed as a function of the
initial point, has an unknown Lipschitz-like variability.  We probe it
by repeatedly drawing pairs of sampled points and recording the largest
absolute difference quotient over a block of pairs.  Block maxima are
close to generalized-extreme-value (GEV) distributed, so a GEV fit,
corrected downward by a Dvoretzky-Kiefer-Wolfowitz band and by the
fit's own one-sided lack-of-fit distance, yields a function that is,
with the requested confidence, a pointwise lower bound on the true
distribution of the block maximum.  Inverting that lower bound at a
high quantile gives a certified upper bound on the quotient itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateSampleError, InsufficientSamplesError

_EULER_GAMMA = 0.5772156649015329
_SHAPE_LIMIT = 0.9
_GUMBEL_SWITCH = 1e-9


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous empirical distribution of a 1-D sample."""

    values: np.ndarray

    def __post_init__(self):
        values = np.sort(np.asarray(self.values, dtype=float))
        if values.ndim != 1 or values.size == 0:
            raise ValueError("sample must be a non-empty vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample must be finite")
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return self.values.size

    def evaluate(self, x):
        """Fraction of the sample at or below ``x``."""
        x = np.asarray(x, dtype=float)
        frac = np.searchsorted(self.values, x, side="right") / self.count
        if x.ndim == 0:
            return float(frac)
        return frac


@dataclass(frozen=True)
class GevParams:
    """Location, scale and shape of a generalized extreme value law.

    The shape follows the convention in which positive values give a
    heavy upper tail.  Shapes are kept inside (-0.9, 0.9); outside that
    range maximum likelihood is unreliable for block maxima of the
    sizes used here.
    """

    loc: float
    scale: float
    shape: float

    def __post_init__(self):
        if not (math.isfinite(self.loc) and math.isfinite(self.shape)):
            raise ValueError("loc and shape must be finite")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")
        if abs(self.shape) > _SHAPE_LIMIT:
            raise ValueError(f"|shape| must be <= {_SHAPE_LIMIT}, got {self.shape}")

    def cdf(self, x):
        """Distribution function, vectorized over ``x``."""
        x = np.asarray(x, dtype=float)
        z = (x - self.loc) / self.scale
        if abs(self.shape) < _GUMBEL_SWITCH:
            out = np.exp(-np.exp(-z))
        else:
            w = 1.0 + self.shape * z
            safe = np.where(w > 0.0, self.shape * z, 0.0)
            with np.errstate(over="ignore"):
                t = np.exp(-np.log1p(safe) / self.shape)
                out = np.exp(-t)
            # Outside the support the cdf saturates at 0 or 1.
            out = np.where(w > 0.0, out, 1.0 if self.shape < 0.0 else 0.0)
        if x.ndim == 0:
            return float(out)
        return out

    def quantile(self, p):
        """Inverse distribution function for ``p`` in the open unit interval."""
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("quantile level must lie strictly between 0 and 1")
        y = -np.log(p)
        if abs(self.shape) < _GUMBEL_SWITCH:
            out = self.loc - self.scale * np.log(y)
        else:
            out = self.loc + self.scale * (y**-self.shape - 1.0) / self.shape
        if p.ndim == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class StochasticLowerBound:
    """A certified lower envelope for the block-maximum distribution.

    ``evaluate`` returns ``cdf(x) - epsilon - lack_of_fit`` clamped to
    [0, 1].  With confidence ``1 - gamma`` this lies below the true
    distribution function everywhere.
    """

    gev: GevParams
    epsilon: float
    lack_of_fit: float
    gamma: float

    def evaluate(self, x):
        shifted = self.gev.cdf(x) - self.epsilon - self.lack_of_fit
        out = np.clip(shifted, 0.0, 1.0)
        if np.ndim(x) == 0:
            return float(out)
        return out

    def quantile(self, q: float) -> float:
        """Smallest ``x`` with envelope value ``q``, or infinity.

        The envelope saturates below ``1``; when ``q`` plus the two
        corrections reaches ``1`` no finite bound exists and the
        result is ``math.inf``.
        """
        if not 0.0 < q < 1.0:
            raise ValueError(f"quantile level must be in (0, 1), got {q}")
        target = q + self.epsilon + self.lack_of_fit
        if target >= 1.0:
            return math.inf
        return self.gev.quantile(target)


def sample_max_quotients(
    positions: np.ndarray,
    values: np.ndarray,
    block_size: int,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Block maxima of absolute difference quotients over random pairs.

    Each of the ``count`` outputs is the maximum of ``block_size``
    quotients ``|values[a] - values[b]| / ||positions[a] - positions[b]||``
    over pairs drawn uniformly without replacement within the pair.
    Pairs at coincident positions are redrawn.
    """
    positions = np.asarray(positions, dtype=float)
    values = np.asarray(values, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != values.shape[0]:
        raise ValueError("positions must be (count, dim) matching values")
    if block_size < 1 or count < 1:
        raise ValueError("block_size and count must be >= 1")
    pool = positions.shape[0]
    if pool < 2 or not np.any(np.ptp(positions, axis=0) > 0.0):
        raise InsufficientSamplesError(
            f"need at least 2 distinct positions, got pool of {pool}"
        )
    a = rng.integers(0, pool, size=(count, block_size))
    b = rng.integers(0, pool - 1, size=(count, block_size))
    b += b >= a
    dist = np.linalg.norm(positions[a] - positions[b], axis=-1)
    rounds = 0
    while np.any(dist == 0.0):
        rounds += 1
        if rounds > 100:
            raise InsufficientSamplesError("could not find distinct position pairs")
        bad = dist == 0.0
        k = int(bad.sum())
        a_new = rng.integers(0, pool, size=k)
        b_new = rng.integers(0, pool - 1, size=k)
        b_new += b_new >= a_new
        a[bad] = a_new
        b[bad] = b_new
        dist[bad] = np.linalg.norm(positions[a_new] - positions[b_new], axis=-1)
    quotients = np.abs(values[a] - values[b]) / dist
    return quotients.max(axis=1)


def _pwm_init(sorted_sample: np.ndarray) -> tuple[float, float, float]:
    """Probability-weighted-moment starting point for the GEV fit."""
    x = sorted_sample
    n = x.size
    i = np.arange(1, n + 1, dtype=float)
    b0 = x.mean()
    b1 = np.sum((i - 1.0) / (n - 1.0) * x) / n
    b2 = np.sum((i - 1.0) * (i - 2.0) / ((n - 1.0) * (n - 2.0)) * x) / n
    l1 = b0
    l2 = 2.0 * b1 - b0
    l3 = 6.0 * b2 - 6.0 * b1 + b0
    t3 = l3 / l2
    c = 2.0 / (3.0 + t3) - math.log(2.0) / math.log(3.0)
    k = 7.8590 * c + 2.9554 * c * c
    shape = float(np.clip(-k, -_SHAPE_LIMIT, _SHAPE_LIMIT))
    k = -shape
    if abs(k) < 1e-8:
        scale = l2 / math.log(2.0)
        loc = l1 - scale * _EULER_GAMMA
    else:
        gk = math.gamma(1.0 + k)
        scale = l2 * k / ((1.0 - 2.0**-k) * gk)
        loc = l1 - scale * (1.0 - gk) / k
    return loc, max(scale, 1e-300), shape


def _nll_and_grad(theta: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log likelihood and its gradient in (loc, log scale, shape)."""
    loc, log_scale, shape = theta
    if not -700.0 < log_scale < 700.0:
        return math.inf, np.zeros(3)
    scale = math.exp(log_scale)
    n = x.size
    z = (x - loc) / scale
    if not np.all(np.isfinite(z)):
        return math.inf, np.zeros(3)
    if abs(shape) < 1e-6:
        with np.errstate(over="ignore"):
            t = np.exp(-z)
        nll = n * log_scale + float(np.sum(z + t))
        if not math.isfinite(nll):
            return math.inf, np.zeros(3)
        dz = 1.0 - t
        g_loc = -float(np.sum(dz)) / scale
        g_ls = n - float(np.sum(z * dz))
        g_shape = float(np.sum(z - 0.5 * z * z * dz))
        return nll, np.array([g_loc, g_ls, g_shape])
    w = 1.0 + shape * z
    if np.any(w <= 0.0):
        return math.inf, np.zeros(3)
    logw = np.log1p(shape * z)
    with np.errstate(over="ignore"):
        t = np.exp(-logw / shape)
    nll = n * log_scale + float(np.sum((1.0 + 1.0 / shape) * logw + t))
    if not math.isfinite(nll):
        return math.inf, np.zeros(3)
    dz = ((shape + 1.0) - t) / w
    g_loc = -float(np.sum(dz)) / scale
    g_ls = n - float(np.sum(z * dz))
    g_shape = float(
        np.sum(
            -logw / shape**2
            + (1.0 + 1.0 / shape) * z / w
            + t * (logw / shape**2 - z / (shape * w))
        )
    )
    return nll, np.array([g_loc, g_ls, g_shape])


def fit_gev(sample: np.ndarray) -> GevParams:
    """Fit a GEV law by maximum likelihood from an L-moment start.

    A sample with zero variance raises DegenerateSampleError.  If the
    optimizer fails to improve on the starting point the starting point
    is returned, so the result is always a valid parameter set.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    if x.ndim != 1 or x.size < 10:
        raise ValueError("sample must be a vector with at least 10 entries")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample must be finite")
    if x[0] == x[-1]:
        raise DegenerateSampleError("sample has zero variance")
    loc0, scale0, shape0 = _pwm_init(x)
    theta0 = np.array([loc0, math.log(scale0), shape0])
    nll0, _ = _nll_and_grad(theta0, x)
    if not math.isfinite(nll0):
        # Starting shape incompatible with the data range; fall back to
        # the Gumbel member, whose support is the whole line.
        theta0 = np.array([loc0, math.log(scale0), 0.0])
        nll0, _ = _nll_and_grad(theta0, x)
    result = minimize(
        _nll_and_grad,
        theta0,
        args=(x,),
        jac=True,
        method="L-BFGS-B",
        bounds=[(None, None), (None, None), (-_SHAPE_LIMIT, _SHAPE_LIMIT)],
        options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10},
    )
    theta = theta0
    if np.all(np.isfinite(result.x)) and result.fun <= nll0:
        theta = result.x
    return GevParams(
        loc=float(theta[0]), scale=float(math.exp(theta[1])), shape=float(theta[2])
    )


def ks_minus(gev: GevParams, ecdf: EmpiricalCdf) -> float:
    """One-sided sup distance by which the fit exceeds the empirical cdf.

    The supremum of ``cdf(x) - ecdf(x)`` over the line is attained just
    left of a sample point, where the empirical cdf takes the value
    ``(i - 1) / n``.  The result is floored at zero.
    """
    x = ecdf.values
    n = ecdf.count
    gaps = gev.cdf(x) - (np.arange(n, dtype=float)) / n
    return float(max(np.max(gaps), 0.0))


def dkw_epsilon(count: int, gamma: float) -> float:
    """Half-width of the one-sided DKW confidence band.

    The band level is ``min(gamma, 0.5)``; the one-sided inequality is
    valid only for levels at or below one half, so looser requests are
    clamped.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    alpha = min(gamma, 0.5)
    return math.sqrt(math.log(1.0 / alpha) / (2.0 * count))


def build_lower_bound(sample: np.ndarray, gamma: float) -> StochasticLowerBound:
    """Assemble the certified lower envelope from one block-maximum sample."""
    ecdf = EmpiricalCdf(sample)
    gev = fit_gev(ecdf.values)
    return StochasticLowerBound(
        gev=gev,
        epsilon=dkw_epsilon(ecdf.count, gamma),
        lack_of_fit=ks_minus(gev, ecdf),
        gamma=gamma,
    )


def lower_bound_quantile(bound: StochasticLowerBound, q: float) -> float:
    """Invert the lower envelope at level ``q``; infinity when saturated."""
    return bound.quantile(q)
