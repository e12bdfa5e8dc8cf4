"""Stochastic bounding tubes for continuous-time dynamical systems."""

__version__ = "0.1.0"

from .engine import (
    BoundingBall,
    BoundingTube,
    GoTubeConfig,
    TubeMetrics,
    compute_cap_radius,
    coverage_probability,
    run_gotube,
    spectral_norms,
    tube_metrics,
)
from .errors import (
    BudgetExceededError,
    ConfigError,
    ContractViolation,
    DegenerateSampleError,
    GoTubeError,
    InsufficientSamplesError,
    IntegrationBlowupError,
    IntegrationDomainError,
    UnknownSystemError,
    WeightFormatError,
)
from .geometry import Ball, ball_volume, cap_fraction, sample_surface
from .integration import AugmentedState, integrate_augmented
from .oracle import ContainmentReport, ReachEstimate, audit_tube, fd_sensitivity, mc_reach
from .systems import (
    CtrnnWeights,
    SystemSpec,
    load_ctrnn_weights,
    load_system,
    random_ctrnn_weights,
    registered_systems,
)

__all__ = [
    "__version__",
    "AugmentedState",
    "Ball",
    "BoundingBall",
    "BoundingTube",
    "BudgetExceededError",
    "ConfigError",
    "ContainmentReport",
    "ContractViolation",
    "CtrnnWeights",
    "DegenerateSampleError",
    "GoTubeConfig",
    "GoTubeError",
    "InsufficientSamplesError",
    "IntegrationBlowupError",
    "IntegrationDomainError",
    "ReachEstimate",
    "SystemSpec",
    "TubeMetrics",
    "UnknownSystemError",
    "WeightFormatError",
    "audit_tube",
    "ball_volume",
    "cap_fraction",
    "compute_cap_radius",
    "coverage_probability",
    "fd_sensitivity",
    "integrate_augmented",
    "load_ctrnn_weights",
    "load_system",
    "mc_reach",
    "random_ctrnn_weights",
    "registered_systems",
    "run_gotube",
    "sample_surface",
    "spectral_norms",
    "tube_metrics",
]
