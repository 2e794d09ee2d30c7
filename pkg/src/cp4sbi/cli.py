"""Command-line front end.

Subcommands:

* ``run``     -- execute the configured benchmark and write report files.
* ``region``  -- rasterize credible regions for one observation.
* ``dataset`` -- export joint prior/simulator draws as CSV.
* ``report``  -- summarize a previously written report CSV.

Exit codes: 0 success, 1 partial repetition failure, 2 configuration
error.  ``CP4SBI_SEED`` overrides the configured seed; ``--seed`` wins
over both.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from ._rng import as_vector, spawn_seed
from .config import ConfigError, effective_config_text, experiment_configs, load_config
from .conformal import (
    CoordinateSelector,
    build_region,
    oracle_hpd_mask,
    rasterize_region,
)
from .evaluation import (
    confidence_interval,
    read_report_csv,
    run_experiment,
    write_report_csv,
)
from .scores import make_score
from .surrogate import ProjectedSurrogate, fit_surrogate
from .tasks import generate_dataset, make_task, write_dataset_csv

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _resolve_seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CP4SBI_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"CP4SBI_SEED must be an integer, got {env!r}") from None
    return None


def _cmd_run(args) -> int:
    values = load_config(args.config)
    configs = experiment_configs(values, seed_override=_resolve_seed(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    manifest_parts = []
    exit_code = EXIT_OK
    for config in configs:
        if args.verbose:
            print(f"running task {config.task_name} "
                  f"({config.repetitions} repetitions)...", flush=True)
        report = run_experiment(config)
        reports.append(report)
        manifest_parts.append(effective_config_text(config))
        manifest_parts.append(report.summary_text())
        manifest_parts.append(f"runtime_seconds = {report.runtime_seconds:.3f}\n")
        if report.incomplete:
            exit_code = EXIT_PARTIAL
    write_report_csv(reports, out_dir / "report.csv")
    (out_dir / "manifest.txt").write_text("\n".join(manifest_parts))
    if args.verbose:
        print(f"wrote {out_dir / 'report.csv'}")
    return exit_code


def _parse_x_obs(args, x_dim: int) -> np.ndarray:
    if args.x_obs_file:
        text = Path(args.x_obs_file).read_text().strip().replace("\n", ",")
    else:
        text = args.x_obs
    if not text:
        raise ConfigError("region requires --x-obs or --x-obs-file")
    try:
        vec = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad x_obs: {exc}") from None
    return as_vector(vec, x_dim)


def _cmd_region(args) -> int:
    values = load_config(args.config)
    configs = experiment_configs(values, seed_override=_resolve_seed(args))
    if len(configs) != 1:
        raise ConfigError("region requires a config with exactly one task.name")
    config = configs[0]
    task = make_task(config.task_name, **config.task_overrides)
    x_obs = _parse_x_obs(args, task.x_dim)

    coords = config.transform_coords
    if coords is None:
        if task.theta_dim != 2:
            raise ConfigError(
                "region rasterization needs a 2-D parameter space; configure "
                "transform.coords to select two coordinates"
            )
        coords = (0, 1)
    if len(coords) != 2:
        raise ConfigError("transform.coords must select exactly 2 coordinates")

    resolution = args.grid or values.get("region.grid", 512)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(0,)))
    train_set = generate_dataset(task, config.train_size, rng)
    surrogate = fit_surrogate(config.surrogate_kind, task, train_set,
                              gamma=config.surrogate_gamma, shift=config.surrogate_shift)
    transform = None
    if config.transform_coords is not None:
        transform = CoordinateSelector(coords, task.theta_dim)
        surrogate = ProjectedSurrogate(surrogate, transform)
    score_fn = make_score(config.score_kind, surrogate, draws=config.score_draws,
                          alpha1=config.score_alpha1, alpha2=config.score_alpha2,
                          seed=spawn_seed(rng))
    calib = generate_dataset(task, config.calibration_size, rng)
    if transform is not None:
        from .conformal import apply_transform

        calib = apply_transform(calib, transform)

    lo, hi = task.prior_box()
    box = (lo[list(coords)], hi[list(coords)])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    oracle = oracle_hpd_mask(task, x_obs, box, resolution,
                             level=1.0 - config.alpha, coords=tuple(coords))
    oracle.to_csv(out_dir / "region_oracle.csv")
    for method in config.methods:
        region = build_region(method, score_fn, calib, config.alpha, rng,
                              surrogate=surrogate, locart=config.locart,
                              cdf_draws=config.cdf_draws,
                              selfcalib_draws=config.selfcalib_draws,
                              hdr_draws=config.hdr_draws)
        mask = rasterize_region(region, x_obs, box, resolution)
        mask.to_csv(out_dir / f"region_{method}.csv")
        (out_dir / f"region_{method}_manifest.txt").write_text(region.manifest())
        if args.verbose:
            print(f"wrote region mask for {method}")
    return EXIT_OK


def _cmd_dataset(args) -> int:
    task = make_task(args.task)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    dataset = generate_dataset(task, args.size, rng)
    write_dataset_csv(dataset, args.out)
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = read_report_csv(args.report)
    grouped: dict[tuple[str, str, str], list[float]] = {}
    for task_name, method, metric, _rep, value in rows:
        grouped.setdefault((task_name, method, metric), []).append(value)
    print(f"{'task':<24}{'method':<12}{'metric':<8}{'mean':>12}{'lo95':>12}{'hi95':>12}")
    for (task_name, method, metric), values in grouped.items():
        mean, lo, hi = confidence_interval(values)
        print(f"{task_name:<24}{method:<12}{metric:<8}{mean:>12.4f}{lo:>12.4f}{hi:>12.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cp4sbi",
        description="Calibrated credible regions for simulation-based inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured benchmark")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--verbose", action="store_true")
    run_p.set_defaults(func=_cmd_run)

    region_p = sub.add_parser("region", help="rasterize credible regions at one observation")
    region_p.add_argument("--config", required=True)
    region_p.add_argument("--x-obs", default=None, help="comma-separated observation vector")
    region_p.add_argument("--x-obs-file", default=None)
    region_p.add_argument("--out", required=True)
    region_p.add_argument("--grid", type=int, default=None)
    region_p.add_argument("--seed", type=int, default=None)
    region_p.add_argument("--verbose", action="store_true")
    region_p.set_defaults(func=_cmd_region)

    dataset_p = sub.add_parser("dataset", help="export joint draws as CSV")
    dataset_p.add_argument("--task", required=True)
    dataset_p.add_argument("--size", type=int, required=True)
    dataset_p.add_argument("--seed", type=int, default=None)
    dataset_p.add_argument("--out", required=True)
    dataset_p.set_defaults(func=_cmd_dataset)

    report_p = sub.add_parser("report", help="summarize a report CSV")
    report_p.add_argument("--report", required=True)
    report_p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
