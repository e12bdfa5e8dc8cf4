"""Serialization of tubes, metrics and run manifests.

The tube table is a plain CSV with all doubles printed through
``%.17g``, which round-trips IEEE doubles exactly: metrics recomputed
from the written file match metrics computed in memory bit for bit.
The manifest captures everything needed to reproduce a run (resolved
configuration, system identity including network weights, seed), the
per-step sample maxima behind the radii, and the artifact paths.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .engine import BoundingTube, GoTubeConfig, TubeMetrics
from .errors import ContractViolation
from .systems import CtrnnWeights, SystemSpec, ctrnn, load_system


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def write_tube_csv(tube: BoundingTube, path: str, plot_data: bool = False) -> str:
    """Write one row per computed timestep; returns the path written."""
    dim = tube.config.system.dim
    header = ["t", "radius", "coverage", "n_samples"]
    header += [f"c_{i + 1}" for i in range(dim)]
    envelopes = tube.sample_envelopes if plot_data else None
    if plot_data and envelopes is None:
        raise ContractViolation("tube carries no sample envelopes to plot")
    if envelopes is not None:
        header += [f"min_{i + 1}" for i in range(dim)]
        header += [f"max_{i + 1}" for i in range(dim)]
    lines = [",".join(header)]
    for j in range(tube.times.size):
        row = [
            _fmt(tube.times[j]),
            _fmt(tube.radii[j]),
            _fmt(tube.coverages[j]),
            str(int(tube.sample_counts[j])),
        ]
        row += [_fmt(c) for c in tube.centers[j]]
        if envelopes is not None:
            row += [_fmt(v) for v in envelopes[0][j]]
            row += [_fmt(v) for v in envelopes[1][j]]
        lines.append(",".join(row))
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")
    return path


def read_tube_csv(path: str) -> dict[str, np.ndarray]:
    """Read a tube table back into arrays keyed by column name."""
    with open(path) as handle:
        header = handle.readline().strip().split(",")
        rows = [line.strip().split(",") for line in handle if line.strip()]
    if not rows:
        raise ValueError(f"{path} contains no data rows")
    table = np.array(rows, dtype=float)
    if table.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return {name: table[:, i] for i, name in enumerate(header)}


def write_metrics_json(metrics: TubeMetrics, path: str) -> str:
    doc = {
        "average_volume": metrics.average_volume,
        "max_radius": metrics.max_radius,
        "total_samples": metrics.total_samples,
        "runtime_seconds": metrics.runtime_seconds,
        "per_step": [
            {
                "t": float(metrics.times[j]),
                "radius": float(metrics.radii[j]),
                "volume": float(metrics.volumes[j]),
            }
            for j in range(metrics.times.size)
        ],
    }
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")
    return path


def _system_identity(system: SystemSpec) -> dict:
    identity: dict = {"name": system.name, "dim": system.dim}
    if system.weights is not None:
        w = system.weights
        identity["weights"] = {
            "n": w.size,
            "tau": w.tau.tolist(),
            "W": w.W.tolist(),
            "b": w.b.tolist(),
        }
        identity["weights_sha256"] = w.sha256()
    else:
        identity["params"] = system.params
    return identity


def _config_document(config: GoTubeConfig) -> dict:
    return {
        "x0": config.x0.tolist(),
        "radius": config.radius,
        "times": config.times.tolist(),
        "mu": config.mu,
        "gamma": config.gamma,
        "batch_size": config.batch_size,
        "max_samples": config.max_samples,
        "seed": config.seed,
        "abs_tol": config.abs_tol,
        "rel_tol": config.rel_tol,
        "stats_m": config.stats_m,
        "stats_n": config.stats_n,
        "stats_n_max": config.stats_n_max,
        "distance_weights": (
            None
            if config.distance_weights is None
            else config.distance_weights.tolist()
        ),
    }


def write_manifest(
    tube: BoundingTube,
    path: str,
    artifact_paths: dict[str, str] | None = None,
    partial: bool = False,
) -> str:
    """Record the resolved run next to its outputs."""
    doc = {
        "gotube_version": __version__,
        "partial": partial,
        "system": _system_identity(tube.config.system),
        "config": _config_document(tube.config),
        "m_bar": [float(v) for v in tube.max_distances],
        "coverage": [float(v) for v in tube.coverages],
        "final_sample_count": (
            int(tube.sample_counts[-1]) if tube.sample_counts.size else 0
        ),
        "quotient_repetitions_final": tube.stats_n_final,
        "runtime_seconds": tube.runtime_seconds,
        "artifacts": dict(artifact_paths or {}),
    }
    with open(path, "w") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")
    return path


def read_manifest(path: str) -> dict:
    with open(path) as handle:
        return json.load(handle)


def system_from_manifest(doc: dict) -> SystemSpec:
    """Rebuild the exact system a manifest describes."""
    identity = doc["system"]
    if "weights" in identity:
        w = identity["weights"]
        weights = CtrnnWeights(
            tau=np.array(w["tau"], dtype=float),
            W=np.array(w["W"], dtype=float),
            b=np.array(w["b"], dtype=float),
        )
        recorded = identity.get("weights_sha256")
        if recorded is not None and weights.sha256() != recorded:
            raise ContractViolation(
                "manifest weights do not match their recorded digest"
            )
        return ctrnn(weights, name=identity["name"])
    return load_system(identity["name"], identity.get("params") or {})


def config_from_manifest(doc: dict) -> GoTubeConfig:
    """Rebuild the resolved run configuration a manifest describes."""
    system = system_from_manifest(doc)
    c = doc["config"]
    weights = c.get("distance_weights")
    return GoTubeConfig(
        system=system,
        x0=np.array(c["x0"], dtype=float),
        radius=float(c["radius"]),
        times=np.array(c["times"], dtype=float),
        mu=float(c["mu"]),
        gamma=float(c["gamma"]),
        batch_size=int(c["batch_size"]),
        max_samples=None if c["max_samples"] is None else int(c["max_samples"]),
        seed=int(c["seed"]),
        abs_tol=float(c["abs_tol"]),
        rel_tol=float(c["rel_tol"]),
        stats_m=int(c["stats_m"]),
        stats_n=int(c["stats_n"]),
        stats_n_max=int(c["stats_n_max"]),
        distance_weights=None if weights is None else np.array(weights, dtype=float),
    )


@dataclass
class StoredTube:
    """A tube reconstructed from its emitted files, ready for audits."""

    config: GoTubeConfig
    times: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    coverages: np.ndarray
    sample_counts: np.ndarray
    max_distances: np.ndarray


def load_tube(manifest_path: str) -> StoredTube:
    """Reassemble a tube from a manifest and the CSV it points to."""
    doc = read_manifest(manifest_path)
    config = config_from_manifest(doc)
    csv_path = doc["artifacts"].get("tube_csv")
    if csv_path is None:
        raise ValueError("manifest lists no tube_csv artifact")
    if not os.path.isabs(csv_path):
        csv_path = os.path.join(os.path.dirname(manifest_path), csv_path)
    table = read_tube_csv(csv_path)
    dim = config.system.dim
    centers = np.stack([table[f"c_{i + 1}"] for i in range(dim)], axis=1)
    return StoredTube(
        config=config,
        times=table["t"],
        centers=centers,
        radii=table["radius"],
        coverages=table["coverage"],
        sample_counts=table["n_samples"].astype(np.int64),
        max_distances=np.array(doc["m_bar"], dtype=float),
    )
