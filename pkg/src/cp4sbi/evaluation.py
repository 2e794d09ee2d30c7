"""Coverage metrics and the repetition-level experiment runner.

Conditional coverage is estimated per observation by the fraction of
oracle posterior draws falling inside the region; MAE averages the
absolute deviation of that estimate from the nominal level over a set of
evaluation observations.  AMC is the empirical coverage over an
independent joint test set.  ``run_experiment`` repeats the full
generate / fit / calibrate / evaluate pipeline over seeded repetitions
and aggregates normal-approximation confidence intervals.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .conformal import CoordinateSelector, LocartConfig, apply_transform, build_region
from .scores import make_score
from .surrogate import ProjectedSurrogate, fit_surrogate
from .tasks import CalibrationSet, Task, generate_dataset, make_task

DEFAULT_COVERAGE_DRAWS = 1000
DEFAULT_TEST_SIZE = 2000


def conditional_coverage(region, x, oracle_draws: np.ndarray) -> float:
    """Fraction of oracle posterior draws at x that fall inside the region."""
    draws = np.atleast_2d(np.asarray(oracle_draws, dtype=np.float64))
    inside = np.asarray(region.contains(draws, x))
    return float(np.mean(inside))


def mae(region, observations, oracle_draws, alpha: float) -> float:
    """Mean absolute deviation of conditional coverage from 1 - alpha.

    ``oracle_draws`` holds one (K, theta_dim) array of true posterior
    draws per evaluation observation.
    """
    target = 1.0 - alpha
    devs = [abs(conditional_coverage(region, x, draws) - target)
            for x, draws in zip(observations, oracle_draws)]
    return float(np.mean(devs))


def amc(region, test_set: CalibrationSet) -> float:
    """Average marginal coverage over an independent joint test set."""
    hits = [bool(region.contains(theta, x)) for theta, x in test_set]
    return float(np.mean(hits))


def confidence_interval(values) -> tuple[float, float, float]:
    """(mean, lo, hi) with a normal-approximation 95% interval.

    A single value yields a degenerate interval (lo == hi == mean).
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("empty value list")
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, mean, mean
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, mean - half, mean + half


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one benchmark run."""

    task_name: str
    task_overrides: dict = field(default_factory=dict)
    surrogate_kind: str = "variance_scaled"
    surrogate_gamma: float = 0.5
    surrogate_shift: np.ndarray | None = None
    score_kind: str = "hpd"
    score_draws: int = 1000
    score_alpha1: float = 0.05
    score_alpha2: float = 0.95
    methods: tuple[str, ...] = ("global", "locart", "cdf", "selfcalib", "hdr")
    alpha: float = 0.1
    transform_coords: tuple[int, ...] | None = None
    locart: LocartConfig = field(default_factory=LocartConfig)
    cdf_draws: int = 1000
    selfcalib_draws: int = 1000
    hdr_draws: int = 1000
    total_budget: int = 10000
    train_fraction: float = 0.8
    test_size: int = DEFAULT_TEST_SIZE
    eval_observations: int = 100
    coverage_draws: int = DEFAULT_COVERAGE_DRAWS
    repetitions: int = 10
    seed: int = 1234
    compute_mae: bool = True

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must be in (0, 1)")
        for name in ("total_budget", "test_size", "eval_observations",
                     "coverage_draws", "repetitions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")

    @property
    def calibration_size(self) -> int:
        return self.total_budget - self.train_size

    @property
    def train_size(self) -> int:
        return int(round(self.total_budget * self.train_fraction))


@dataclass
class MethodResult:
    mae_values: list[float] = field(default_factory=list)
    amc_values: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, tuple[float, float, float]]:
        out = {}
        if self.mae_values:
            out["mae"] = confidence_interval(self.mae_values)
        if self.amc_values:
            out["amc"] = confidence_interval(self.amc_values)
        return out


@dataclass
class ExperimentReport:
    task_name: str
    methods: dict[str, MethodResult]
    repetitions: int
    failures: list[tuple[int, str]] = field(default_factory=list)
    runtime_seconds: float = 0.0
    degenerate_ci: bool = False

    @property
    def completed_repetitions(self) -> int:
        return self.repetitions - len(self.failures)

    @property
    def incomplete(self) -> bool:
        return bool(self.failures)

    def csv_rows(self) -> list[tuple[str, str, str, int, float]]:
        """Flat rows task,method,metric,repetition,value in a stable order."""
        rows = []
        for method, result in self.methods.items():
            for metric, values in (("mae", result.mae_values), ("amc", result.amc_values)):
                for rep, value in enumerate(values):
                    rows.append((self.task_name, method, metric, rep, value))
        return rows

    def summary_text(self) -> str:
        lines = [f"task = {self.task_name}",
                 f"repetitions = {self.completed_repetitions} of {self.repetitions}"]
        if self.degenerate_ci:
            lines.append("note = single repetition; confidence interval is degenerate")
        for method, result in self.methods.items():
            for metric, (mean, lo, hi) in result.summary().items():
                per_rep = ", ".join(repr(v) for v in getattr(result, f"{metric}_values"))
                lines.append(f"{method}.{metric}.mean = {mean!r}")
                lines.append(f"{method}.{metric}.ci95 = [{lo!r}, {hi!r}]")
                lines.append(f"{method}.{metric}.values = {per_rep}")
        for rep, err in self.failures:
            lines.append(f"failure.rep{rep} = {err}")
        return "\n".join(lines) + "\n"


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))


def _build_surrogate_and_score(config: ExperimentConfig, task: Task,
                               train_set: CalibrationSet, rng: np.random.Generator):
    surrogate = fit_surrogate(
        config.surrogate_kind, task, train_set,
        gamma=config.surrogate_gamma, shift=config.surrogate_shift,
    )
    transform = None
    if config.transform_coords is not None:
        transform = CoordinateSelector(config.transform_coords, task.theta_dim)
        surrogate = ProjectedSurrogate(surrogate, transform)
    score_fn = make_score(
        config.score_kind, surrogate, draws=config.score_draws,
        alpha1=config.score_alpha1, alpha2=config.score_alpha2,
        seed=int(rng.integers(0, 2**63 - 1)),
    )
    return surrogate, score_fn, transform


def run_repetition(config: ExperimentConfig, task: Task, rep: int) -> dict[str, dict[str, float]]:
    """One full pipeline pass; returns {method: {metric: value}}."""
    rng = _rep_rng(config.seed, rep)
    train_set = generate_dataset(task, config.train_size, rng)
    surrogate, score_fn, transform = _build_surrogate_and_score(config, task, train_set, rng)
    calib = generate_dataset(task, config.calibration_size, rng)
    test_set = generate_dataset(task, config.test_size, rng)
    if transform is not None:
        calib = apply_transform(calib, transform)
        test_set = apply_transform(test_set, transform)

    eval_obs = None
    eval_draws = None
    if config.compute_mae:
        eval_pairs = generate_dataset(task, config.eval_observations, rng)
        eval_obs = list(eval_pairs.xs)
        eval_draws = []
        for x in eval_obs:
            draws = task.oracle_posterior_sample(x, rng, config.coverage_draws)
            eval_draws.append(transform(draws) if transform is not None else draws)

    out: dict[str, dict[str, float]] = {}
    for method in config.methods:
        region = build_region(
            method, score_fn, calib, config.alpha, rng,
            surrogate=surrogate, locart=config.locart,
            cdf_draws=config.cdf_draws, selfcalib_draws=config.selfcalib_draws,
            hdr_draws=config.hdr_draws,
        )
        metrics = {"amc": amc(region, test_set)}
        if config.compute_mae:
            metrics["mae"] = mae(region, eval_obs, eval_draws, config.alpha)
        out[method] = metrics
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Seeded repetitions of the benchmark protocol with CI aggregation.

    A failing repetition is recorded and skipped; the report flags the
    run as incomplete rather than aborting the sweep.
    """
    start = time.monotonic()
    task = make_task(config.task_name, **config.task_overrides)
    results = {m: MethodResult() for m in config.methods}
    failures: list[tuple[int, str]] = []
    for rep in range(config.repetitions):
        try:
            rep_metrics = run_repetition(config, task, rep)
        except Exception as exc:  # noqa: BLE001 - repetition isolation is the contract
            failures.append((rep, f"{type(exc).__name__}: {exc}"))
            continue
        for method, metrics in rep_metrics.items():
            if "mae" in metrics:
                results[method].mae_values.append(metrics["mae"])
            results[method].amc_values.append(metrics["amc"])
    return ExperimentReport(
        task_name=config.task_name,
        methods=results,
        repetitions=config.repetitions,
        failures=failures,
        runtime_seconds=time.monotonic() - start,
        degenerate_ci=config.repetitions == 1,
    )


def write_report_csv(reports, path) -> None:
    """Flat CSV `task,method,metric,repetition,value` across reports."""
    with open(path, "w", newline="") as fh:
        fh.write("task,method,metric,repetition,value\n")
        for report in reports:
            for task_name, method, metric, rep, value in report.csv_rows():
                fh.write(f"{task_name},{method},{metric},{rep},{value!r}\n")


def read_report_csv(path) -> list[tuple[str, str, str, int, float]]:
    rows = []
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != "task,method,metric,repetition,value":
            raise ValueError(f"unexpected report header: {header}")
        for line in fh:
            task_name, method, metric, rep, value = line.strip().split(",")
            rows.append((task_name, method, metric, int(rep), float(value)))
    return rows
