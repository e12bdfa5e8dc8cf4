"""Command line interface.

``gotube run`` builds a tube and writes, into the output directory, the
tube CSV, a metrics JSON, a manifest JSON and rendered figures.
``gotube audit`` replays freshly seeded trajectories against a stored
tube and reports containment.

Exit codes: 0 success, 2 configuration error, 3 sample budget
exceeded (partial artifacts are still written), 4 integration blowup,
5 audit failure.  The GOTUBE_LOG environment variable (error, warn,
info, debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .artifacts import (
    load_tube,
    write_manifest,
    write_metrics_json,
    write_tube_csv,
)
from .engine import GoTubeConfig, run_gotube, tube_metrics
from .errors import (
    BudgetExceededError,
    ConfigError,
    GoTubeError,
    IntegrationBlowupError,
    UnknownSystemError,
    WeightFormatError,
)
from .systems import load_system, registered_systems

logger = logging.getLogger("gotube")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_BLOWUP = 4
EXIT_AUDIT = 5

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _configure_logging():
    name = os.environ.get("GOTUBE_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(name)
    if level is None:
        level = logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)


def _parse_center(text: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse center '{text}': {exc}") from exc


def _time_grid(horizon: float, dt: float) -> np.ndarray:
    if not (math.isfinite(horizon) and horizon > 0.0):
        raise ConfigError(f"time horizon must be > 0, got {horizon}")
    if not (math.isfinite(dt) and dt > 0.0):
        raise ConfigError(f"dt must be > 0, got {dt}")
    if dt > horizon:
        raise ConfigError(f"dt = {dt} exceeds the horizon {horizon}")
    steps = int(math.floor(horizon / dt + 1e-9))
    times = [i * dt for i in range(steps + 1)]
    if times[-1] < horizon - 1e-9 * max(1.0, abs(horizon)):
        times.append(horizon)
    else:
        times[-1] = horizon
    return np.array(times)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gotube",
        description="Stochastic bounding tubes for continuous-time systems.",
    )
    parser.add_argument(
        "--version", action="version", version=f"gotube {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="build a bounding tube and write a report")
    run.add_argument(
        "--system",
        required=True,
        help=f"registered name ({', '.join(registered_systems())}) or a "
        "network weight file",
    )
    run.add_argument(
        "--weights",
        default=None,
        help="network weight file; overrides --system with that network",
    )
    run.add_argument("--center", default=None, help="comma separated start point")
    run.add_argument("--radius", type=float, required=True, help="initial ball radius")
    run.add_argument(
        "--time-horizon", type=float, required=True, help="final time of the tube"
    )
    run.add_argument("--dt", type=float, required=True, help="timestep of the grid")
    run.add_argument("--mu", type=float, default=1.1, help="tightness factor (> 1)")
    run.add_argument(
        "--gamma", type=float, default=0.1, help="tube failure probability"
    )
    run.add_argument("--batch", type=int, default=500, help="samples per batch")
    run.add_argument(
        "--max-samples",
        type=int,
        default=None,
        help="sample budget (default 200 batches)",
    )
    run.add_argument("--seed", type=int, default=0, help="random seed")
    run.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap the linear-algebra thread pool",
    )
    run.add_argument("--abs-tol", type=float, default=1e-9, help="solver abs tolerance")
    run.add_argument("--rel-tol", type=float, default=1e-7, help="solver rel tolerance")
    run.add_argument(
        "--stats-m", type=int, default=20, help="quotient block size"
    )
    run.add_argument(
        "--stats-n", type=int, default=1024, help="starting quotient repetitions"
    )
    run.add_argument(
        "--out-dir", default="gotube_out", help="directory for the report files"
    )
    run.add_argument(
        "--plot-data",
        action="store_true",
        help="add per-coordinate sample envelope columns to the CSV",
    )

    audit = sub.add_parser(
        "audit", help="replay fresh trajectories against a stored tube"
    )
    audit.add_argument(
        "--tube",
        required=True,
        help="run output directory or manifest path",
    )
    audit.add_argument(
        "--count", type=int, default=10_000, help="trajectories to replay"
    )
    audit.add_argument(
        "--seed",
        type=int,
        required=True,
        help="audit seed; must differ from the tube's seed",
    )
    audit.add_argument(
        "--max-violation-rate",
        type=float,
        default=None,
        help="largest acceptable per-timestep violation rate "
        "(default: the tube's gamma)",
    )
    audit.add_argument(
        "--out", default=None, help="report path (default: next to the manifest)"
    )
    return parser


def _write_report(tube, out_dir: str, plot_data: bool, partial: bool) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "tube_csv": "tube.csv",
        "metrics_json": "metrics.json",
        "radius_png": "radius.png",
        "envelope_png": "envelope.png",
    }
    write_tube_csv(tube, os.path.join(out_dir, paths["tube_csv"]), plot_data)
    write_metrics_json(
        tube_metrics(tube), os.path.join(out_dir, paths["metrics_json"])
    )
    if tube.times.size:
        from .plots import render_envelope_figure, render_radius_figure

        render_radius_figure(tube, os.path.join(out_dir, paths["radius_png"]))
        render_envelope_figure(tube, os.path.join(out_dir, paths["envelope_png"]))
    else:
        paths.pop("radius_png")
        paths.pop("envelope_png")
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(tube, manifest_path, artifact_paths=paths, partial=partial)
    return {"manifest": manifest_path, **paths}


def _cmd_run(args) -> int:
    try:
        source = args.weights if args.weights else args.system
        system = load_system(source)
        center = (
            np.zeros(system.dim)
            if args.center is None
            else _parse_center(args.center)
        )
        config = GoTubeConfig(
            system=system,
            x0=center,
            radius=args.radius,
            times=_time_grid(args.time_horizon, args.dt),
            mu=args.mu,
            gamma=args.gamma,
            batch_size=args.batch,
            max_samples=args.max_samples,
            seed=args.seed,
            abs_tol=args.abs_tol,
            rel_tol=args.rel_tol,
            stats_m=args.stats_m,
            stats_n=args.stats_n,
        )
        config.validate()
    except (ConfigError, UnknownSystemError, WeightFormatError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    runner = _run_with_thread_cap(config, args.threads)
    try:
        tube = runner()
    except BudgetExceededError as exc:
        tube = exc.partial_tube
        _write_report(tube, args.out_dir, args.plot_data, partial=True)
        print(f"budget exceeded: {exc}", file=sys.stderr)
        print(f"partial report written to {args.out_dir}")
        return EXIT_BUDGET
    except IntegrationBlowupError as exc:
        print(f"integration blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    files = _write_report(tube, args.out_dir, args.plot_data, partial=False)
    print(
        f"tube with {tube.times.size} steps written to {args.out_dir} "
        f"({', '.join(sorted(files))})"
    )
    return EXIT_OK


def _run_with_thread_cap(config: GoTubeConfig, threads: int | None):
    if threads is None:
        return lambda: run_gotube(config)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        logger.warning("threadpoolctl not installed; --threads ignored")
        return lambda: run_gotube(config)

    def runner():
        with threadpool_limits(limits=threads):
            return run_gotube(config)

    return runner


def _cmd_audit(args) -> int:
    manifest_path = args.tube
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    try:
        stored = load_tube(manifest_path)
    except (OSError, ValueError, KeyError, GoTubeError) as exc:
        print(f"cannot load tube: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed == stored.config.seed:
        print(
            "audit seed equals the tube's construction seed; pick another",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    if args.count < 1:
        print("count must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    threshold = (
        stored.config.gamma
        if args.max_violation_rate is None
        else args.max_violation_rate
    )
    from .oracle import audit_tube

    try:
        report = audit_tube(stored, args.count, np.random.default_rng(args.seed))
    except IntegrationBlowupError as exc:
        print(f"integration blowup during audit: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    out_path = args.out or os.path.join(
        os.path.dirname(manifest_path), "audit_report.json"
    )
    doc = {
        "gotube_version": __version__,
        "tube_manifest": os.path.abspath(manifest_path),
        "count": report.total,
        "seed": args.seed,
        "excluded": report.excluded,
        "worst_ratio": report.worst_ratio,
        "max_violation_rate": report.max_violation_rate,
        "threshold": threshold,
        "per_step": [
            {
                "t": float(report.times[j]),
                "checked": int(report.checked[j]),
                "violations": int(report.violations[j]),
                "rate": float(report.violation_rate[j]),
            }
            for j in range(report.times.size)
        ],
    }
    with open(out_path, "w") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")
    print(
        f"audited {report.total} trajectories: worst ratio "
        f"{report.worst_ratio:.6f}, max violation rate "
        f"{report.max_violation_rate:.6f} (report: {out_path})"
    )
    if report.max_violation_rate > threshold:
        print(
            f"audit failed: violation rate exceeds {threshold}",
            file=sys.stderr,
        )
        return EXIT_AUDIT
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "audit":
        return _cmd_audit(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
