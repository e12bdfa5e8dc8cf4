"""Adaptive Dormand-Prince integration of states and sensitivities.

The sensitivity of the flow map to its initial condition is carried
along as an extra matrix state obeying the variational equation
``dS/dt = Df(x(t)) S``.  Starting from the identity at the departure
time, ``S`` is the Jacobian of the flow map over the integrated span;
restarting from a previous sensitivity chains spans by matrix product.

Batches are integrated with one shared fifth-order Dormand-Prince
stepper, but every sample keeps its own clock and step size and is
advanced through a subset-and-scatter mask.  All per-step arithmetic
is elementwise in the sample axis, so each trajectory is a pure
function of its own initial state: integrating a sample alone, or
inside any batch, gives bitwise identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationBlowupError, IntegrationDomainError
from .systems import SystemSpec

DEFAULT_TOLERANCES = (1e-9, 1e-7)

# Dormand-Prince 5(4) tableau.
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
)
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
_B1, _B3, _B4, _B5, _B6 = (
    35.0 / 384.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
)
# Difference between the fifth- and fourth-order weights.
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_MAX_STEPS_PER_SPAN = 1_000_000


@dataclass(frozen=True)
class AugmentedState:
    """A state vector paired with the flow sensitivity accumulated so far."""

    t: float
    state: np.ndarray
    sensitivity: np.ndarray

    def __post_init__(self):
        state = np.asarray(self.state, dtype=float)
        sens = np.asarray(self.sensitivity, dtype=float)
        n = state.size
        if state.ndim != 1 or n == 0:
            raise ValueError("state must be a non-empty vector")
        if sens.shape != (n, n):
            raise ValueError(f"sensitivity must have shape ({n}, {n})")
        if not (
            math.isfinite(self.t)
            and np.all(np.isfinite(state))
            and np.all(np.isfinite(sens))
        ):
            raise ValueError("augmented state entries must be finite")
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "sensitivity", sens)

    @classmethod
    def initial(cls, state: np.ndarray, t: float = 0.0) -> "AugmentedState":
        state = np.asarray(state, dtype=float)
        return cls(t=float(t), state=state, sensitivity=np.eye(state.size))


@dataclass
class BatchResult:
    """Outcome of one batched integration span.

    ``ok`` flags the samples that reached the target time; failed rows
    keep their last accepted (finite) state and ``last_valid_time``
    records how far each sample got.
    """

    states: np.ndarray
    sensitivities: np.ndarray | None
    ok: np.ndarray
    last_valid_time: np.ndarray


def _initial_steps(field, y, f0, span, atol, rtol):
    """Hairer's starting step heuristic, evaluated per sample."""
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
    small = (d0 < 1e-5) | (d1 < 1e-5)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where(small, 1e-6, 0.01 * d0 / d1)
    h0 = np.minimum(h0, span)
    with np.errstate(all="ignore"):
        f1 = field(y + h0[:, None] * f0)
        d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
        d12 = np.maximum(d1, d2)
        h1 = np.where(
            d12 <= 1e-15,
            np.maximum(1e-6, h0 * 1e-3),
            (0.01 / d12) ** 0.2,
        )
    h = np.minimum(np.minimum(100.0 * h0, h1), span)
    bad = ~np.isfinite(h) | (h <= 0.0)
    return np.where(bad, 1e-12 * span, h)


def _advance_dp45(field, y0, t0, t1, atol, rtol):
    """March every row of ``y0`` from ``t0`` to ``t1`` independently.

    Returns the final rows, a success flag per row and the last time at
    which each row had an accepted finite state.  Rows whose step size
    underflows, or that exceed the step budget, are marked failed and
    left at their last accepted state.
    """
    y = np.array(y0, dtype=float)
    count = y.shape[0]
    t = np.full(count, float(t0))
    last_valid = np.full(count, float(t0))
    status = np.zeros(count, dtype=np.int8)  # 0 active, 1 done, 2 failed
    if t1 == t0:
        return y, status == 0, last_valid
    with np.errstate(all="ignore"):
        k1 = field(y)
    seed_bad = ~(np.isfinite(y).all(axis=1) & np.isfinite(k1).all(axis=1))
    status[seed_bad] = 2
    h = np.zeros(count)
    alive = status == 0
    if np.any(alive):
        h[alive] = _initial_steps(
            field, y[alive], k1[alive], t1 - t0, atol, rtol
        )
    steps = np.zeros(count, dtype=np.int64)
    while True:
        active = np.flatnonzero(status == 0)
        if active.size == 0:
            break
        ya = y[active]
        ta = t[active]
        k1a = k1[active]
        remaining = t1 - ta
        hits_end = h[active] >= remaining
        ha = np.where(hits_end, remaining, h[active])
        hc = ha[:, None]
        with np.errstate(all="ignore"):
            k2 = field(ya + hc * (_A21 * k1a))
            k3 = field(ya + hc * (_A31 * k1a + _A32 * k2))
            k4 = field(ya + hc * (_A41 * k1a + _A42 * k2 + _A43 * k3))
            k5 = field(ya + hc * (_A51 * k1a + _A52 * k2 + _A53 * k3 + _A54 * k4))
            k6 = field(
                ya + hc * (_A61 * k1a + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
            )
            y5 = ya + hc * (_B1 * k1a + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
            k7 = field(y5)
            err = hc * (
                _E1 * k1a + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7
            )
            scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y5))
            errnorm = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        finite = np.isfinite(y5).all(axis=1) & np.isfinite(errnorm)
        errnorm = np.where(finite, errnorm, np.inf)
        accept = errnorm <= 1.0
        with np.errstate(divide="ignore"):
            factor = np.where(errnorm > 0.0, _SAFETY * errnorm**-0.2, _MAX_FACTOR)
        h_next = ha * np.clip(factor, _MIN_FACTOR, _MAX_FACTOR)

        idx = active[accept]
        if idx.size:
            picked = np.flatnonzero(accept)
            y[idx] = y5[picked]
            k1[idx] = k7[picked]
            t_new = np.where(hits_end[picked], t1, ta[picked] + ha[picked])
            t[idx] = t_new
            last_valid[idx] = t_new
            h[idx] = h_next[picked]
            status[idx[hits_end[picked]]] = 1

        idx = active[~accept]
        if idx.size:
            picked = np.flatnonzero(~accept)
            h_rej = h_next[picked]
            tiny = 16.0 * np.finfo(float).eps * np.maximum(np.abs(ta[picked]), abs(t1))
            h[idx] = h_rej
            status[idx[h_rej <= tiny]] = 2

        steps[active] += 1
        status[(status == 0) & (steps >= _MAX_STEPS_PER_SPAN)] = 2
    return y, status == 1, last_valid


# Upper bound on scalars held in one stepper call; batches above it are
# advanced in row chunks.  Per-sample purity makes the chunked result
# bitwise identical to the whole-batch result, so this only caps the
# size of the stepper's stage temporaries.
_CHUNK_SCALARS = 4_000_000


def _advance_in_chunks(field, y0, t0, t1, atol, rtol):
    count, width = y0.shape
    limit = max(1, _CHUNK_SCALARS // max(width, 1))
    if count <= limit:
        return _advance_dp45(field, y0, t0, t1, atol, rtol)
    ys, oks, lasts = [], [], []
    for start in range(0, count, limit):
        y, ok, last = _advance_dp45(
            field, y0[start : start + limit], t0, t1, atol, rtol
        )
        ys.append(y)
        oks.append(ok)
        lasts.append(last)
    return np.concatenate(ys), np.concatenate(oks), np.concatenate(lasts)


def _check_inputs(system, states, t_from, t_to, tolerances):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != system.dim:
        raise ValueError(
            f"states have dimension {states.shape[1]}, system '{system.name}' "
            f"has dimension {system.dim}"
        )
    if not np.all(np.isfinite(states)):
        raise IntegrationDomainError("initial states must be finite")
    if not (math.isfinite(t_from) and math.isfinite(t_to)):
        raise ValueError("times must be finite")
    if t_to < t_from:
        raise ValueError(f"target time {t_to} precedes start time {t_from}")
    atol, rtol = tolerances
    if atol <= 0.0 or rtol <= 0.0:
        raise ValueError("tolerances must be positive")
    return states, float(atol), float(rtol)


def _raise_on_failure(result: BatchResult, system: SystemSpec):
    if np.all(result.ok):
        return
    failed = np.flatnonzero(~result.ok)
    worst = float(result.last_valid_time[failed].min())
    raise IntegrationBlowupError(
        f"integration of '{system.name}' failed for {failed.size} of "
        f"{result.ok.size} samples; earliest stall at t = {worst:.6g}",
        last_valid_time=worst,
    )


def integrate_state_batch(
    system: SystemSpec,
    states: np.ndarray,
    t_from: float,
    t_to: float,
    tolerances: tuple[float, float] = DEFAULT_TOLERANCES,
    on_blowup: str = "raise",
) -> BatchResult:
    """Advance a batch of plain states from ``t_from`` to ``t_to``."""
    states, atol, rtol = _check_inputs(system, states, t_from, t_to, tolerances)
    y, ok, last_valid = _advance_in_chunks(
        system.rhs, states, t_from, t_to, atol, rtol
    )
    result = BatchResult(states=y, sensitivities=None, ok=ok, last_valid_time=last_valid)
    if on_blowup == "raise":
        _raise_on_failure(result, system)
    return result


def integrate_augmented_batch(
    system: SystemSpec,
    states: np.ndarray,
    sensitivities: np.ndarray,
    t_from: float,
    t_to: float,
    tolerances: tuple[float, float] = DEFAULT_TOLERANCES,
    on_blowup: str = "raise",
) -> BatchResult:
    """Advance states together with their flow sensitivities.

    ``sensitivities`` holds one matrix per sample; passing identity
    matrices starts fresh spans, passing the matrices from a previous
    span continues the accumulated product.
    """
    states, atol, rtol = _check_inputs(system, states, t_from, t_to, tolerances)
    count, n = states.shape
    sens = np.asarray(sensitivities, dtype=float)
    if sens.shape != (count, n, n):
        raise ValueError(f"sensitivities must have shape ({count}, {n}, {n})")
    if not np.all(np.isfinite(sens)):
        raise IntegrationDomainError("initial sensitivities must be finite")

    def field(y):
        x = y[:, :n]
        s = y[:, n:].reshape(-1, n, n)
        dx = system.rhs(x)
        ds = system.jac(x) @ s
        return np.concatenate([dx, ds.reshape(len(y), n * n)], axis=1)

    y0 = np.concatenate([states, sens.reshape(count, n * n)], axis=1)
    y, ok, last_valid = _advance_in_chunks(field, y0, t_from, t_to, atol, rtol)
    result = BatchResult(
        states=y[:, :n],
        sensitivities=y[:, n:].reshape(count, n, n),
        ok=ok,
        last_valid_time=last_valid,
    )
    if on_blowup == "raise":
        _raise_on_failure(result, system)
    return result


def integrate_augmented(
    system: SystemSpec,
    initial: AugmentedState | np.ndarray,
    t_from: float | None,
    t_to: float,
    tolerances: tuple[float, float] = DEFAULT_TOLERANCES,
) -> AugmentedState:
    """Advance one augmented state, starting fresh or continuing.

    A plain vector starts a new span with identity sensitivity at
    ``t_from``.  An AugmentedState continues from its own time, which
    must agree with ``t_from`` when both are given.
    """
    if isinstance(initial, AugmentedState):
        if t_from is not None and abs(t_from - initial.t) > 1e-12:
            raise ValueError(
                f"t_from = {t_from} disagrees with the state's time {initial.t}"
            )
        start = initial
    else:
        if t_from is None:
            raise ValueError("t_from is required when starting from a plain vector")
        start = AugmentedState.initial(initial, t=t_from)
    result = integrate_augmented_batch(
        system,
        start.state[None, :],
        start.sensitivity[None, :, :],
        start.t,
        t_to,
        tolerances=tolerances,
        on_blowup="raise",
    )
    return AugmentedState(
        t=float(t_to),
        state=result.states[0],
        sensitivity=result.sensitivities[0],
    )
