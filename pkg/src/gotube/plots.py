"""Figure rendering for finished tubes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import BoundingTube


def render_radius_figure(tube: BoundingTube, path: str) -> str:
    """Tube radius and sampled maximum distance over time."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    times = np.concatenate([[tube.config.times[0]], tube.times])
    radii = np.concatenate([[tube.config.radius], tube.radii])
    ax.plot(times, radii, "-o", ms=3, color="tab:blue", label="tube radius")
    ax.plot(
        tube.times,
        tube.max_distances,
        "--",
        color="tab:orange",
        label="max sampled distance",
    )
    ax.set_xlabel("time")
    ax.set_ylabel("radius")
    ax.set_title(f"{tube.config.system.name}: bounding tube radius")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_envelope_figure(tube: BoundingTube, path: str, max_dims: int = 4) -> str:
    """Per-coordinate center with radius band and sample envelope."""
    dim = tube.config.system.dim
    shown = min(dim, max_dims)
    fig, axes = plt.subplots(
        shown, 1, figsize=(7.0, 2.2 * shown), sharex=True, squeeze=False
    )
    times = tube.times
    envelopes = tube.sample_envelopes
    for i in range(shown):
        ax = axes[i, 0]
        center = tube.centers[:, i]
        ax.plot(times, center, color="tab:blue", lw=1.2, label="center")
        ax.fill_between(
            times,
            center - tube.radii,
            center + tube.radii,
            alpha=0.25,
            color="tab:blue",
            label="tube",
        )
        if envelopes is not None:
            ax.plot(times, envelopes[0][:, i], ":", color="tab:orange", lw=1.0)
            ax.plot(
                times,
                envelopes[1][:, i],
                ":",
                color="tab:orange",
                lw=1.0,
                label="sample envelope",
            )
        ax.set_ylabel(f"x{i + 1}")
        ax.grid(alpha=0.3)
        if i == 0:
            ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("time")
    fig.suptitle(f"{tube.config.system.name}: tube cross sections")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
