"""Flat dotted-key experiment configuration files.

Grammar (one entry per line):

    key = value        # trailing comments allowed
    # full-line comment

Keys are dotted identifiers; values are scalars, booleans (true/false),
or comma-separated lists.  Unknown keys are rejected with the offending
line number, and the effective configuration is echoed into the output
manifest so every run is auditable.
"""

from __future__ import annotations

import numpy as np

from .conformal import METHODS, LocartConfig
from .evaluation import ExperimentConfig
from .scores import score_kinds
from .tasks import make_task, task_names

_SURROGATE_KINDS = ("oracle", "variance_scaled", "mean_shifted", "gaussian_fit",
                    "sample_only")

# keys with fixed names; task.* overrides are validated against the task class
_SCALAR_KEYS = {
    "task.name": str,
    "surrogate.kind": str,
    "surrogate.gamma": float,
    "surrogate.shift": "floats",
    "score.kind": str,
    "score.L": int,
    "score.alpha1": float,
    "score.alpha2": float,
    "methods": "strs",
    "alpha": float,
    "transform.coords": "ints",
    "locart.min_samples_leaf": int,
    "locart.ccp_alpha": float,
    "locart.augment": "bool",
    "locart.augment_draws": int,
    "locart.split_calibration": "bool",
    "cdf.M": int,
    "selfcalib.B": int,
    "hdr.M": int,
    "eval.B_all": int,
    "eval.train_fraction": float,
    "eval.B_test": int,
    "eval.B_sim": int,
    "eval.coverage_draws": int,
    "eval.repetitions": int,
    "eval.seed": int,
    "eval.compute_mae": "bool",
    "region.grid": int,
}

_TASK_OVERRIDES = {
    "GaussianLinear": {"prior_var": float, "noise_var": float, "dim": int},
    "GaussianLinearUniform": {"prior_bound": float, "noise_var": float, "dim": int},
    "TwoMoons": {"prior_bound": float, "radius_mean": float, "radius_std": float},
    "GaussianMixture": {"prior_bound": float, "mean_factor": float,
                        "broad_var": float, "narrow_var": float},
    "Heteroskedastic": {"prior_scale": float, "sigma_low": float, "sigma_high": float},
}


class ConfigError(ValueError):
    """Configuration problem, annotated with the source line when known."""


def _convert(key: str, raw: str, kind, line_no: int):
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw}")
        if kind == "floats":
            return [float(v.strip()) for v in raw.split(",") if v.strip()]
        if kind == "ints":
            return [int(v.strip()) for v in raw.split(",") if v.strip()]
        if kind == "strs":
            return [v.strip() for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    raise ConfigError(f"line {line_no}: unhandled value kind for {key}")


def parse_config_text(text: str) -> dict:
    """Parse config text into a typed dict; fail closed on unknown keys."""
    values: dict = {}
    pending_task_keys: list[tuple[str, str, int]] = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in _SCALAR_KEYS:
            if key in values:
                raise ConfigError(f"line {line_no}: duplicate key {key}")
            values[key] = _convert(key, raw, _SCALAR_KEYS[key], line_no)
        elif key.startswith("task.") and key != "task.name":
            pending_task_keys.append((key, raw, line_no))
        else:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")

    task_names_value = values.get("task.name")
    names = ([v.strip() for v in task_names_value.split(",")]
             if isinstance(task_names_value, str) else [])
    for key, raw, line_no in pending_task_keys:
        field_name = key[len("task."):]
        matched = False
        for name in names:
            allowed = _TASK_OVERRIDES.get(name, {})
            if field_name in allowed:
                values.setdefault("task.overrides", {})[field_name] = _convert(
                    key, raw, allowed[field_name], line_no)
                matched = True
        if not matched:
            raise ConfigError(
                f"line {line_no}: unknown key {key!r} for task(s) {names or '(unset)'}"
            )
    return values


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def _validate_choice(values: dict, key: str, allowed) -> None:
    if key in values and values[key] not in allowed:
        raise ConfigError(f"{key} must be one of {sorted(allowed)}, got {values[key]!r}")


def experiment_configs(values: dict, seed_override: int | None = None
                       ) -> list[ExperimentConfig]:
    """Build one ExperimentConfig per configured task name."""
    if "task.name" not in values:
        raise ConfigError("missing required key 'task.name'")
    names = [v.strip() for v in values["task.name"].split(",") if v.strip()]
    if not names:
        raise ConfigError("task.name lists no tasks")
    for name in names:
        if name not in task_names():
            raise ConfigError(f"unknown task {name!r}; choose from {task_names()}")
    _validate_choice(values, "surrogate.kind", _SURROGATE_KINDS)
    _validate_choice(values, "score.kind", tuple(score_kinds()))
    methods = tuple(values.get("methods", list(METHODS)))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")

    locart = LocartConfig(
        min_samples_leaf=values.get("locart.min_samples_leaf"),
        ccp_alpha=values.get("locart.ccp_alpha", 0.0),
        augment=values.get("locart.augment", True),
        augment_draws=values.get("locart.augment_draws", 200),
        split_calibration=values.get("locart.split_calibration", False),
    )
    shift = values.get("surrogate.shift")
    configs = []
    for name in names:
        overrides = dict(values.get("task.overrides", {}))
        allowed = _TASK_OVERRIDES[name]
        overrides = {k: v for k, v in overrides.items() if k in allowed}
        try:
            configs.append(ExperimentConfig(
                task_name=name,
                task_overrides=overrides,
                surrogate_kind=values.get("surrogate.kind", "variance_scaled"),
                surrogate_gamma=values.get("surrogate.gamma", 0.5),
                surrogate_shift=np.asarray(shift) if shift is not None else None,
                score_kind=values.get("score.kind", "hpd"),
                score_draws=values.get("score.L", 1000),
                score_alpha1=values.get("score.alpha1", 0.05),
                score_alpha2=values.get("score.alpha2", 0.95),
                methods=methods,
                alpha=values.get("alpha", 0.1),
                transform_coords=(tuple(values["transform.coords"])
                                  if "transform.coords" in values else None),
                locart=locart,
                cdf_draws=values.get("cdf.M", 1000),
                selfcalib_draws=values.get("selfcalib.B", 1000),
                hdr_draws=values.get("hdr.M", 1000),
                total_budget=values.get("eval.B_all", 10000),
                train_fraction=values.get("eval.train_fraction", 0.8),
                test_size=values.get("eval.B_test", 2000),
                eval_observations=values.get("eval.B_sim", 100),
                coverage_draws=values.get("eval.coverage_draws", 1000),
                repetitions=values.get("eval.repetitions", 10),
                seed=seed_override if seed_override is not None
                     else values.get("eval.seed", 1234),
                compute_mae=values.get("eval.compute_mae", True),
            ))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return configs


def effective_config_text(config: ExperimentConfig) -> str:
    """Echo of one task's effective configuration, manifest-ready."""
    lines = [
        f"task.name = {config.task_name}",
        *(f"task.{k} = {v!r}" for k, v in sorted(config.task_overrides.items())),
        f"surrogate.kind = {config.surrogate_kind}",
        f"surrogate.gamma = {config.surrogate_gamma!r}",
    ]
    if config.surrogate_shift is not None:
        lines.append("surrogate.shift = " +
                     ", ".join(repr(float(v)) for v in np.atleast_1d(config.surrogate_shift)))
    lines += [
        f"score.kind = {config.score_kind}",
        f"score.L = {config.score_draws}",
        f"score.alpha1 = {config.score_alpha1!r}",
        f"score.alpha2 = {config.score_alpha2!r}",
        f"methods = {', '.join(config.methods)}",
        f"alpha = {config.alpha!r}",
    ]
    if config.transform_coords is not None:
        lines.append("transform.coords = " + ", ".join(str(c) for c in config.transform_coords))
    min_leaf = config.locart.min_samples_leaf
    lines += [
        f"locart.min_samples_leaf = {'auto' if min_leaf is None else min_leaf}",
        f"locart.ccp_alpha = {config.locart.ccp_alpha!r}",
        f"locart.augment = {str(config.locart.augment).lower()}",
        f"locart.augment_draws = {config.locart.augment_draws}",
        f"locart.split_calibration = {str(config.locart.split_calibration).lower()}",
        f"cdf.M = {config.cdf_draws}",
        f"selfcalib.B = {config.selfcalib_draws}",
        f"hdr.M = {config.hdr_draws}",
        f"eval.B_all = {config.total_budget}",
        f"eval.train_fraction = {config.train_fraction!r}",
        f"eval.B_test = {config.test_size}",
        f"eval.B_sim = {config.eval_observations}",
        f"eval.coverage_draws = {config.coverage_draws}",
        f"eval.repetitions = {config.repetitions}",
        f"eval.seed = {config.seed}",
        f"eval.compute_mae = {str(config.compute_mae).lower()}",
    ]
    return "\n".join(lines) + "\n"
