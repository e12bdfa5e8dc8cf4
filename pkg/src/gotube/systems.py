"""Benchmark dynamical systems and their Jacobians.

Every system is autonomous: a smooth vector field together with its
exact Jacobian.  Both callables are vectorized over a leading batch
axis, so ``rhs`` maps ``(..., n)`` to ``(..., n)`` and ``jac`` maps
``(..., n)`` to ``(..., n, n)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationDomainError, UnknownSystemError, WeightFormatError


@dataclass(frozen=True)
class CtrnnWeights:
    """Parameters of a continuous-time recurrent neural network.

    The network obeys ``dx_i/dt = -x_i / tau_i + sum_j W_ij tanh(x_j) + b_i``
    with all time constants strictly positive.
    """

    tau: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        W = np.asarray(self.W, dtype=float)
        b = np.asarray(self.b, dtype=float)
        n = tau.size
        if tau.ndim != 1 or n == 0:
            raise WeightFormatError("tau: expected a non-empty vector")
        if W.shape != (n, n):
            raise WeightFormatError(f"W: expected shape ({n}, {n}), got {W.shape}")
        if b.shape != (n,):
            raise WeightFormatError(f"b: expected shape ({n},), got {b.shape}")
        for name, arr in [("tau", tau), ("W", W), ("b", b)]:
            if not np.all(np.isfinite(arr)):
                raise WeightFormatError(f"{name}: entries must be finite")
        if np.any(tau <= 0.0):
            raise WeightFormatError("tau: entries must be > 0")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def size(self) -> int:
        return self.tau.size

    def sha256(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.tau, self.W, self.b):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class SystemSpec:
    """An immutable vector field with its exact Jacobian."""

    name: str
    dim: int
    rhs: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    weights: CtrnnWeights | None = None


def eval_rhs(system: SystemSpec, state: np.ndarray) -> np.ndarray:
    """Evaluate the vector field, checking shapes and finiteness."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != system.dim:
        raise ValueError(
            f"state has dimension {state.shape[-1]}, system '{system.name}' "
            f"has dimension {system.dim}"
        )
    if not np.all(np.isfinite(state)):
        raise IntegrationDomainError(f"non-finite state passed to '{system.name}'")
    out = system.rhs(state)
    if not np.all(np.isfinite(out)):
        raise IntegrationDomainError(
            f"vector field of '{system.name}' produced non-finite values "
            f"at state {np.atleast_2d(state)[0]}"
        )
    return out


def eval_jacobian(system: SystemSpec, state: np.ndarray) -> np.ndarray:
    """Evaluate the Jacobian, checking shapes and finiteness."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != system.dim:
        raise ValueError(
            f"state has dimension {state.shape[-1]}, system '{system.name}' "
            f"has dimension {system.dim}"
        )
    if not np.all(np.isfinite(state)):
        raise IntegrationDomainError(f"non-finite state passed to '{system.name}'")
    out = system.jac(state)
    if not np.all(np.isfinite(out)):
        raise IntegrationDomainError(
            f"Jacobian of '{system.name}' produced non-finite values "
            f"at state {np.atleast_2d(state)[0]}"
        )
    return out


def brusselator(a: float = 1.0, b: float = 1.5) -> SystemSpec:
    """Planar autocatalytic reaction model with a stable limit cycle."""

    def rhs(x):
        u, v = x[..., 0], x[..., 1]
        du = a + u * u * v - (b + 1.0) * u
        dv = b * u - u * u * v
        return np.stack([du, dv], axis=-1)

    def jac(x):
        u, v = x[..., 0], x[..., 1]
        j = np.empty(x.shape[:-1] + (2, 2))
        j[..., 0, 0] = 2.0 * u * v - (b + 1.0)
        j[..., 0, 1] = u * u
        j[..., 1, 0] = b - 2.0 * u * v
        j[..., 1, 1] = -u * u
        return j

    return SystemSpec("brusselator", 2, rhs, jac, {"a": a, "b": b})


def vanderpol(damping: float = 1.0) -> SystemSpec:
    """Van der Pol oscillator in Lienard-free coordinates."""

    def rhs(x):
        u, v = x[..., 0], x[..., 1]
        return np.stack([v, damping * (1.0 - u * u) * v - u], axis=-1)

    def jac(x):
        u, v = x[..., 0], x[..., 1]
        j = np.empty(x.shape[:-1] + (2, 2))
        j[..., 0, 0] = 0.0
        j[..., 0, 1] = 1.0
        j[..., 1, 0] = -2.0 * damping * u * v - 1.0
        j[..., 1, 1] = damping * (1.0 - u * u)
        return j

    return SystemSpec("vanderpol", 2, rhs, jac, {"damping": damping})


def dubins(speed: float = 1.0, turn_rate: float = 1.0) -> SystemSpec:
    """Unit-speed planar vehicle turning at a constant rate."""

    def rhs(x):
        theta = x[..., 2]
        return np.stack(
            [
                speed * np.cos(theta),
                speed * np.sin(theta),
                np.broadcast_to(float(turn_rate), theta.shape).copy(),
            ],
            axis=-1,
        )

    def jac(x):
        theta = x[..., 2]
        j = np.zeros(x.shape[:-1] + (3, 3))
        j[..., 0, 2] = -speed * np.sin(theta)
        j[..., 1, 2] = speed * np.cos(theta)
        return j

    return SystemSpec(
        "dubins", 3, rhs, jac, {"speed": speed, "turn_rate": turn_rate}
    )


def cardiac(
    a: float = 0.7, b: float = 0.8, eps: float = 0.08, current: float = 0.5
) -> SystemSpec:
    """FitzHugh-Nagumo excitable cell model."""

    def rhs(x):
        v, w = x[..., 0], x[..., 1]
        dv = v - v**3 / 3.0 - w + current
        dw = eps * (v + a - b * w)
        return np.stack([dv, dw], axis=-1)

    def jac(x):
        v = x[..., 0]
        j = np.empty(x.shape[:-1] + (2, 2))
        j[..., 0, 0] = 1.0 - v * v
        j[..., 0, 1] = -1.0
        j[..., 1, 0] = eps
        j[..., 1, 1] = -eps * b
        return j

    return SystemSpec(
        "cardiac", 2, rhs, jac, {"a": a, "b": b, "eps": eps, "current": current}
    )


def ctrnn(weights: CtrnnWeights, name: str = "ctrnn") -> SystemSpec:
    """Continuous-time recurrent network with tanh activation."""
    inv_tau = 1.0 / weights.tau
    W = weights.W
    b = weights.b
    n = weights.size

    def rhs(x):
        # Fixed-order accumulation keeps every row's result independent
        # of how many rows share the batch.
        th = np.tanh(x)
        out = b - x * inv_tau
        for j in range(n):
            out = out + th[..., j, None] * W[:, j]
        return out

    def jac(x):
        sech2 = 1.0 - np.tanh(x) ** 2
        j = W * sech2[..., None, :]
        idx = np.arange(n)
        j[..., idx, idx] -= inv_tau
        return j

    return SystemSpec(
        name,
        n,
        rhs,
        jac,
        {"tau": weights.tau.tolist(), "note": "weights attached"},
        weights=weights,
    )


def linear(matrix: np.ndarray | None = None) -> SystemSpec:
    """Linear field dx/dt = A x; defaults to A = -I in the plane."""
    A = -np.eye(2) if matrix is None else np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    n = A.shape[0]

    def rhs(x):
        # Fixed-order accumulation keeps every row's result independent
        # of how many rows share the batch.
        out = np.zeros_like(x)
        for j in range(n):
            out = out + x[..., j, None] * A[:, j]
        return out

    def jac(x):
        return np.broadcast_to(A, x.shape[:-1] + (n, n)).copy()

    return SystemSpec("linear-test", n, rhs, jac, {"matrix": A.tolist()})


def zero(dim: int = 2) -> SystemSpec:
    """Identically zero field; every point is an equilibrium."""

    def rhs(x):
        return np.zeros_like(x)

    def jac(x):
        return np.zeros(x.shape[:-1] + (dim, dim))

    return SystemSpec("zero-test", dim, rhs, jac, {"dim": dim})


def random_ctrnn_weights(
    size: int, seed: int, gain: float = 1.5, bias_scale: float = 0.1
) -> CtrnnWeights:
    """Random network weights with connection scale ``gain / sqrt(size)``."""
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.5, 2.0, size=size)
    W = rng.normal(0.0, gain / math.sqrt(size), size=(size, size))
    b = rng.normal(0.0, bias_scale, size=size)
    return CtrnnWeights(tau=tau, W=W, b=b)


def load_ctrnn_weights(path: str) -> CtrnnWeights:
    """Parse network weights from a JSON file.

    The expected document is an object with keys ``n`` (int), ``tau``
    (list of n floats), ``W`` (n lists of n floats, row major) and
    ``b`` (list of n floats).
    """
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"cannot read weight file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise WeightFormatError("top level: expected a JSON object")
    for key in ("n", "tau", "W", "b"):
        if key not in doc:
            raise WeightFormatError(f"{key}: missing required key")
    n = doc["n"]
    if not isinstance(n, int) or n < 1:
        raise WeightFormatError(f"n: expected a positive integer, got {n!r}")

    def as_float_list(key, expected_len):
        raw = doc[key]
        if not isinstance(raw, list) or len(raw) != expected_len:
            raise WeightFormatError(
                f"{key}: expected a list of length {expected_len}"
            )
        try:
            return [float(v) for v in raw]
        except (TypeError, ValueError) as exc:
            raise WeightFormatError(f"{key}: entries must be numbers") from exc

    tau = as_float_list("tau", n)
    b = as_float_list("b", n)
    raw_w = doc["W"]
    if not isinstance(raw_w, list) or len(raw_w) != n:
        raise WeightFormatError(f"W: expected {n} rows")
    rows = []
    for i, row in enumerate(raw_w):
        if not isinstance(row, list) or len(row) != n:
            raise WeightFormatError(f"W[{i}]: expected a row of {n} numbers")
        try:
            rows.append([float(v) for v in row])
        except (TypeError, ValueError) as exc:
            raise WeightFormatError(f"W[{i}]: entries must be numbers") from exc
    return CtrnnWeights(tau=np.array(tau), W=np.array(rows), b=np.array(b))


# Built-in demo network: fixed seed so that the registry entry is a
# deterministic 8-dimensional system.
_DEMO_CTRNN_SEED = 8


_REGISTRY: dict[str, Callable[..., SystemSpec]] = {
    "brusselator": brusselator,
    "vanderpol": vanderpol,
    "dubins": dubins,
    "cardiac": cardiac,
    "linear-test": linear,
    "zero-test": zero,
}


def registered_systems() -> list[str]:
    return sorted(_REGISTRY) + ["ctrnn"]


def load_system(source: str, params: dict | None = None) -> SystemSpec:
    """Resolve a system by registry name or weight file path.

    Registry names take ``params`` as keyword overrides for the model
    constants.  Any other source is treated as a path to a CT-RNN
    weight file; a source that is neither raises UnknownSystemError.
    """
    params = dict(params or {})
    if source in _REGISTRY:
        return _REGISTRY[source](**params)
    if source == "ctrnn":
        return ctrnn(random_ctrnn_weights(8, _DEMO_CTRNN_SEED, **params))
    if os.path.isfile(source) or source.endswith(".json"):
        weights = load_ctrnn_weights(source)
        return ctrnn(weights, name=f"ctrnn[{os.path.basename(source)}]")
    raise UnknownSystemError(
        f"unknown system '{source}'; registered: {', '.join(registered_systems())}"
    )
