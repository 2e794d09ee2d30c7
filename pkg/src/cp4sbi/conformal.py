"""Credible-region construction with finite-sample coverage guarantees.

Five ways to turn a conformity score into a region {theta : s(theta; x)
<= t(x)}, differing only in how the cutoff t(x) is chosen:

* ``global``    -- one conformal quantile of the calibration scores,
  shared by every observation.  Marginal coverage only.
* ``locart``    -- a regression tree partitions observation space by
  score behavior; each leaf gets its own conformal quantile.  Marginal
  and per-leaf coverage.
* ``cdf``       -- scores are first mapped through the per-observation
  empirical CDF of surrogate score draws; one conformal quantile of the
  transformed scores is then inverted at each query point.  Marginal
  coverage, and conditional coverage improves with surrogate quality.
* ``selfcalib`` -- the cutoff makes the region hold 1 - alpha of the
  *surrogate's own* mass; no calibration data, no guarantee when the
  surrogate is miscalibrated.
* ``hdr``       -- recalibrates the selfcalib level through the empirical
  CDF of calibration PIT values; a monotone-map correction without the
  conformal finite-sample adjustment.

Cutoffs that need fresh draws at the query point derive their
randomness from a frozen region seed and the bytes of x, so regions are
immutable and queries are deterministic and safe under concurrency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._rng import as_vector, per_x_rng, spawn_seed
from .scores import ScoreFunction
from .surrogate import ProjectedSurrogate, SurrogatePosterior
from .tasks import CalibrationSet, Task
from .tree import RegressionTree, fit_tree, score_spread

METHODS = ("global", "locart", "cdf", "selfcalib", "hdr")


class CalibrationError(ValueError):
    pass


def conformal_quantile(scores, alpha: float) -> float:
    """Finite-sample-adjusted quantile of the calibration scores.

    Returns the ceil((n+1)(1-alpha))-th smallest score, or +inf when that
    rank exceeds n (the region is then the whole space).
    """
    arr = np.asarray(scores, dtype=np.float64).ravel()
    n = arr.size
    if n == 0:
        raise CalibrationError("empty score list")
    k = math.ceil((n + 1) * (1.0 - alpha))
    if k > n:
        return float("inf")
    if k < 1:
        k = 1
    return float(np.partition(arr, k - 1)[k - 1])


def _rank_of(count: int, values: np.ndarray) -> float:
    """k-th smallest of values for integer rank k, with empty-region floor."""
    if count <= 0:
        return float("-inf")
    return float(np.partition(values, count - 1)[count - 1])


# ---------------------------------------------------------------------------
# parameter transforms


class ParameterTransform:
    """Deterministic affine map phi = W theta + b over parameter space."""

    def __init__(self, matrix: np.ndarray, offset: np.ndarray | None = None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        self.output_dim, self.input_dim = self.matrix.shape
        if offset is None:
            offset = np.zeros(self.output_dim)
        self.offset = as_vector(offset, self.output_dim)
        self.is_selector = False
        self.selected: np.ndarray | None = None

    def __call__(self, thetas):
        arr = np.asarray(thetas, dtype=np.float64)
        single = arr.ndim == 1
        out = np.atleast_2d(arr) @ self.matrix.T + self.offset
        return out[0] if single else out


class CoordinateSelector(ParameterTransform):
    """Keep a subset of parameter coordinates (nuisance parameters dropped)."""

    def __init__(self, indices, input_dim: int):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        mat = np.zeros((idx.size, input_dim))
        mat[np.arange(idx.size), idx] = 1.0
        super().__init__(mat)
        self.is_selector = True
        self.selected = idx


def identity_transform(dim: int) -> ParameterTransform:
    return ParameterTransform(np.eye(dim))


def apply_transform(calib: CalibrationSet, transform: ParameterTransform) -> CalibrationSet:
    """Replace each theta_i by g(theta_i); observations are untouched."""
    return CalibrationSet(transform(calib.thetas), calib.xs.copy())


# ---------------------------------------------------------------------------
# regions


class CalibratedRegion:
    """A score function plus a cutoff rule; membership is s <= t(x)."""

    method: str

    def __init__(self, score_fn: ScoreFunction, alpha: float):
        self.score_fn = score_fn
        self.alpha = float(alpha)

    def cutoff_at(self, x) -> float:
        """Effective threshold on the raw score scale at observation x."""
        raise NotImplementedError

    def contains(self, thetas, x) -> np.ndarray | bool:
        """Membership for one theta or a batch; ties at the cutoff are inside."""
        cut = self.cutoff_at(x)
        s = self.score_fn.evaluate(thetas, x)
        if np.isscalar(s) or np.ndim(s) == 0:
            return bool(s <= cut)
        return np.asarray(s) <= cut

    def manifest(self) -> str:
        lines = [f"method = {self.method}", f"alpha = {self.alpha!r}",
                 f"score.kind = {self.score_fn.kind}"]
        lines.extend(self._manifest_lines())
        return "\n".join(lines) + "\n"

    def _manifest_lines(self) -> list[str]:
        return []


class GlobalRegion(CalibratedRegion):
    method = "global"

    def __init__(self, score_fn, alpha, threshold: float):
        super().__init__(score_fn, alpha)
        self.threshold = float(threshold)

    def cutoff_at(self, x) -> float:
        return self.threshold

    def _manifest_lines(self):
        return [f"threshold = {self.threshold!r}"]


class LocartRegion(CalibratedRegion):
    method = "locart"

    def __init__(self, score_fn, alpha, tree: RegressionTree,
                 thresholds: np.ndarray, surrogate: SurrogatePosterior | None,
                 augment_draws: int, augment_seed: int):
        super().__init__(score_fn, alpha)
        self.tree = tree
        self.thresholds = np.asarray(thresholds, dtype=np.float64)
        self.surrogate = surrogate  # None when features are raw observations
        self.augment_draws = int(augment_draws)
        self.augment_seed = int(augment_seed)

    def features_of(self, x) -> np.ndarray:
        v = as_vector(x)
        if self.surrogate is None:
            return v
        spread = score_spread(self.surrogate, self.score_fn, v,
                              self.augment_draws, self.augment_seed)
        return np.concatenate([v, [spread]])

    def leaf_of(self, x) -> int:
        return self.tree.leaf_of(self.features_of(x))

    def cutoff_at(self, x) -> float:
        return float(self.thresholds[self.leaf_of(x)])

    def _manifest_lines(self):
        thr = ", ".join(repr(float(t)) for t in self.thresholds)
        return [
            f"augment = {self.surrogate is not None}",
            f"augment_seed = {self.augment_seed}",
            f"leaf_thresholds = {thr}",
            "tree:",
            self.tree.describe(),
        ]


class _SampledCutoffRegion(CalibratedRegion):
    """Cutoffs computed from per-observation surrogate score draws."""

    draw_tag: str

    def __init__(self, score_fn, alpha, surrogate, draws: int, seed: int):
        super().__init__(score_fn, alpha)
        self.surrogate = surrogate
        self.draws = int(draws)
        self.seed = int(seed)

    def _sampled_scores(self, x) -> np.ndarray:
        v = as_vector(x)
        rng = per_x_rng(self.seed, v, self.draw_tag)
        draws = self.surrogate.sample(v, rng, self.draws)
        return np.atleast_1d(self.score_fn.evaluate(draws, v))

    def _cutoff_rank(self) -> int | None:
        raise NotImplementedError

    def cutoff_at(self, x) -> float:
        rank = self._cutoff_rank()
        if rank is None:
            return float("inf")
        return _rank_of(rank, self._sampled_scores(x))


class CdfRegion(_SampledCutoffRegion):
    """Data-dependent cutoff from conformally calibrated CDF-transformed scores.

    Membership is exactly {theta : F_hat_M(s(theta) | x) <= t'}, realized
    on the raw score scale as s(theta) strictly below the (c* + 1)-th
    smallest of the M fresh draws' scores, where c* = M * t'.  This is
    the sublevel set the finite-sample marginal guarantee covers; at an
    atom of the transformed-score distribution (c* = M) the region is
    conservatively the whole space.  ``level_count`` is c*; None encodes
    a conformal rank beyond the calibration size (also whole space).
    """

    method = "cdf"
    draw_tag = "cdf-cutoff"

    def __init__(self, score_fn, alpha, surrogate, draws, seed,
                 level_count: int | None):
        super().__init__(score_fn, alpha, surrogate, draws, seed)
        self.level_count = level_count

    def cutoff_at(self, x) -> float:
        if self.level_count is None or self.level_count >= self.draws:
            return float("inf")
        scores = self._sampled_scores(x)
        # largest raw value whose closed sublevel set keeps the empirical
        # CDF at or below t' (count <= c*  <=>  s < (c*+1)-th smallest)
        upper = float(np.partition(scores, self.level_count)[self.level_count])
        return float(np.nextafter(upper, -np.inf))

    @property
    def transformed_threshold(self) -> float:
        if self.level_count is None:
            return float("inf")
        return self.level_count / self.draws

    def _manifest_lines(self):
        return [f"draws = {self.draws}", f"seed = {self.seed}",
                f"transformed_threshold = {self.transformed_threshold!r}"]


class SelfCalibRegion(_SampledCutoffRegion):
    """Plain surrogate-mass cutoff: no conformal adjustment, no guarantee."""

    method = "selfcalib"
    draw_tag = "self-cutoff"

    def _cutoff_rank(self):
        return math.ceil(self.draws * (1.0 - self.alpha))

    def _manifest_lines(self):
        return [f"draws = {self.draws}", f"seed = {self.seed}"]


class HdrRegion(_SampledCutoffRegion):
    """Selfcalib with the target level recalibrated through PIT values."""

    method = "hdr"
    draw_tag = "hdr-cutoff"

    def __init__(self, score_fn, alpha, surrogate, draws, seed, level_count: int):
        super().__init__(score_fn, alpha, surrogate, draws, seed)
        self.level_count = int(level_count)

    def _cutoff_rank(self):
        return self.level_count

    @property
    def recalibrated_level(self) -> float:
        return self.level_count / self.draws

    def _manifest_lines(self):
        return [f"draws = {self.draws}", f"seed = {self.seed}",
                f"recalibrated_level = {self.recalibrated_level!r}"]


# ---------------------------------------------------------------------------
# calibration procedures


def calibration_scores(score_fn: ScoreFunction, calib: CalibrationSet) -> np.ndarray:
    return np.array([score_fn.evaluate(theta, x) for theta, x in calib])


def calibrate_global(score_fn: ScoreFunction, calib: CalibrationSet,
                     alpha: float) -> GlobalRegion:
    """Vanilla split conformal: one threshold for all observations."""
    scores = calibration_scores(score_fn, calib)
    return GlobalRegion(score_fn, alpha, conformal_quantile(scores, alpha))


@dataclass
class LocartConfig:
    """Tree options; ``min_samples_leaf=None`` picks 300 for calibration
    sizes >= 2000 and 75 below."""

    min_samples_leaf: int | None = None
    ccp_alpha: float = 0.0
    augment: bool = True
    augment_draws: int = 200
    split_calibration: bool = False

    def resolved_min_leaf(self, n: int) -> int:
        if self.min_samples_leaf is not None:
            return int(self.min_samples_leaf)
        return 300 if n >= 2000 else 75


def calibrate_locart(score_fn: ScoreFunction, calib: CalibrationSet, alpha: float,
                     config: LocartConfig = LocartConfig(),
                     rng: np.random.Generator | None = None,
                     surrogate: SurrogatePosterior | None = None) -> LocartRegion:
    """Tree-partitioned conformal calibration.

    By default the whole calibration set is used both to grow the tree
    and to compute the per-leaf quantiles; ``split_calibration`` instead
    reserves a random half for each role, which is the variant whose
    finite-sample guarantee needs no caveat but wastes data.
    """
    rng = rng or np.random.default_rng(0)
    surrogate = surrogate or score_fn.surrogate
    augment_seed = spawn_seed(rng)
    scores = calibration_scores(score_fn, calib)
    if config.augment:
        feats = np.stack([
            np.concatenate([
                x,
                [score_spread(surrogate, score_fn, x, config.augment_draws, augment_seed)],
            ])
            for x in calib.xs
        ])
    else:
        feats = calib.xs.copy()

    n = calib.size
    if config.split_calibration:
        perm = rng.permutation(n)
        fit_idx, cal_idx = perm[: n // 2], perm[n // 2:]
    else:
        fit_idx = cal_idx = np.arange(n)

    tree = fit_tree(feats[fit_idx], scores[fit_idx],
                    config.resolved_min_leaf(fit_idx.size), config.ccp_alpha)
    leaf_ids = tree.leaf_of_batch(feats[cal_idx])
    thresholds = np.empty(tree.n_leaves)
    for leaf in range(tree.n_leaves):
        leaf_scores = scores[cal_idx[leaf_ids == leaf]]
        if leaf_scores.size == 0:
            warnings.warn(f"leaf {leaf} received no calibration points; "
                          "its threshold is +inf", RuntimeWarning)
            thresholds[leaf] = float("inf")
        else:
            thresholds[leaf] = conformal_quantile(leaf_scores, alpha)
    return LocartRegion(score_fn, alpha, tree, thresholds,
                        surrogate if config.augment else None,
                        config.augment_draws, augment_seed)


def calibrate_cdf(score_fn: ScoreFunction, calib: CalibrationSet, alpha: float,
                  draws: int = 1000, rng: np.random.Generator | None = None,
                  surrogate: SurrogatePosterior | None = None) -> CdfRegion:
    """Conformal calibration of CDF-transformed scores.

    Each calibration score is replaced by its empirical CDF value among
    ``draws`` surrogate score draws at the same observation; the
    conformal quantile of those transformed scores is inverted at query
    time through the same empirical-CDF construction.
    """
    if draws < 1:
        raise CalibrationError("draws must be >= 1")
    rng = rng or np.random.default_rng(0)
    surrogate = surrogate or score_fn.surrogate
    counts = np.empty(calib.size, dtype=np.int64)
    for i, (theta, x) in enumerate(calib):
        sampled = np.atleast_1d(score_fn.evaluate(surrogate.sample(x, rng, draws), x))
        counts[i] = np.count_nonzero(sampled <= score_fn.evaluate(theta, x))
    k = math.ceil((calib.size + 1) * (1.0 - alpha))
    if k > calib.size:
        level_count: int | None = None
    else:
        level_count = int(np.partition(counts, k - 1)[k - 1])
    return CdfRegion(score_fn, alpha, surrogate, draws, spawn_seed(rng), level_count)


def calibrate_self(score_fn: ScoreFunction, alpha: float, draws: int = 1000,
                   seed: int = 0,
                   surrogate: SurrogatePosterior | None = None) -> SelfCalibRegion:
    """Cutoff holding 1 - alpha of the surrogate's own posterior mass."""
    if draws < 1:
        raise CalibrationError("draws must be >= 1")
    surrogate = surrogate or score_fn.surrogate
    return SelfCalibRegion(score_fn, alpha, surrogate, draws, seed)


def calibrate_hdr(score_fn: ScoreFunction, calib: CalibrationSet, alpha: float,
                  draws: int = 1000, rng: np.random.Generator | None = None,
                  surrogate: SurrogatePosterior | None = None) -> HdrRegion:
    """Monotone recalibration of the selfcalib level.

    The PIT value of each calibration pair is computed exactly as in the
    cdf method; the corrected level is the plain (1 - alpha) empirical
    quantile of those values, without the conformal (1 + 1/B) adjustment,
    which is why this baseline carries no marginal guarantee.
    """
    if draws < 1:
        raise CalibrationError("draws must be >= 1")
    rng = rng or np.random.default_rng(0)
    surrogate = surrogate or score_fn.surrogate
    counts = np.empty(calib.size, dtype=np.int64)
    for i, (theta, x) in enumerate(calib):
        sampled = np.atleast_1d(score_fn.evaluate(surrogate.sample(x, rng, draws), x))
        counts[i] = np.count_nonzero(sampled <= score_fn.evaluate(theta, x))
    k = math.ceil(calib.size * (1.0 - alpha))
    k = min(max(k, 1), calib.size)
    level_count = int(np.partition(counts, k - 1)[k - 1])
    return HdrRegion(score_fn, alpha, surrogate, draws, spawn_seed(rng), level_count)


def build_region(method: str, score_fn: ScoreFunction, calib: CalibrationSet | None,
                 alpha: float, rng: np.random.Generator,
                 surrogate: SurrogatePosterior | None = None,
                 locart: LocartConfig = LocartConfig(),
                 cdf_draws: int = 1000, selfcalib_draws: int = 1000,
                 hdr_draws: int = 1000) -> CalibratedRegion:
    """Dispatch a calibration method by name."""
    if method == "global":
        return calibrate_global(score_fn, calib, alpha)
    if method == "locart":
        return calibrate_locart(score_fn, calib, alpha, locart, rng, surrogate)
    if method == "cdf":
        return calibrate_cdf(score_fn, calib, alpha, cdf_draws, rng, surrogate)
    if method == "selfcalib":
        return calibrate_self(score_fn, alpha, selfcalib_draws, spawn_seed(rng), surrogate)
    if method == "hdr":
        return calibrate_hdr(score_fn, calib, alpha, hdr_draws, rng, surrogate)
    raise CalibrationError(f"unknown method {method!r}; choose from {METHODS}")


# ---------------------------------------------------------------------------
# rasterization (2-D parameter spaces)


@dataclass
class RasterMask:
    """Boolean membership mask on a regular 2-D parameter grid."""

    centers0: np.ndarray
    centers1: np.ndarray
    mask: np.ndarray  # (res0, res1) boolean, indexed [i, j]
    cell_area: float = field(default=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("x_coord,y_coord,inside\n")
            for i, c0 in enumerate(self.centers0):
                for j, c1 in enumerate(self.centers1):
                    fh.write(f"{c0!r},{c1!r},{int(self.mask[i, j])}\n")


def _grid_centers(lo, hi, resolution: int):
    edges0 = np.linspace(lo[0], hi[0], resolution + 1)
    edges1 = np.linspace(lo[1], hi[1], resolution + 1)
    c0 = 0.5 * (edges0[:-1] + edges0[1:])
    c1 = 0.5 * (edges1[:-1] + edges1[1:])
    return c0, c1


def _grid_points(c0, c1):
    g0, g1 = np.meshgrid(c0, c1, indexing="ij")
    return np.column_stack([g0.ravel(), g1.ravel()])


def rasterize_region(region: CalibratedRegion, x, box: tuple[np.ndarray, np.ndarray],
                     resolution: int = 512) -> RasterMask:
    """Evaluate membership on a resolution^2 grid over the given box."""
    if region.score_fn.theta_dim != 2:
        raise CalibrationError("rasterization requires a 2-D parameter space")
    lo, hi = as_vector(box[0], 2), as_vector(box[1], 2)
    c0, c1 = _grid_centers(lo, hi, resolution)
    points = _grid_points(c0, c1)
    inside = np.asarray(region.contains(points, x)).reshape(resolution, resolution)
    area = float((hi[0] - lo[0]) * (hi[1] - lo[1]) / resolution**2)
    return RasterMask(c0, c1, inside, area)


def grid_oracle_logdensity(task: Task, x, points: np.ndarray,
                           coords: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Oracle log-density of a 2-D parameter (sub)vector on grid points.

    For natively 2-D tasks this is the full oracle; otherwise the task's
    exact coordinate marginal (available when the posterior factorizes).
    """
    try:
        return np.atleast_1d(task.oracle_marginal_logdensity(points, x, coords))
    except Exception as exc:
        raise CalibrationError(
            f"no oracle density for task {task.name} over coordinates "
            f"{tuple(coords)}: {exc}"
        ) from None


def oracle_hpd_mask(task: Task, x, box, resolution: int = 512,
                    level: float = 0.9, coords: tuple[int, int] = (0, 1)) -> RasterMask:
    """Highest-density oracle region holding the requested posterior mass."""
    lo, hi = as_vector(box[0], 2), as_vector(box[1], 2)
    c0, c1 = _grid_centers(lo, hi, resolution)
    points = _grid_points(c0, c1)
    logd = grid_oracle_logdensity(task, x, points, coords)
    probs = _normalize_grid(logd)
    order = np.argsort(probs)[::-1]
    csum = np.cumsum(probs[order])
    take = int(np.searchsorted(csum, level) + 1)
    mask = np.zeros(points.shape[0], dtype=bool)
    mask[order[:take]] = True
    area = float((hi[0] - lo[0]) * (hi[1] - lo[1]) / resolution**2)
    return RasterMask(c0, c1, mask.reshape(resolution, resolution), area)


def _normalize_grid(logd: np.ndarray) -> np.ndarray:
    m = np.max(logd)
    if not np.isfinite(m):
        raise CalibrationError("oracle density vanished on the whole grid")
    w = np.exp(logd - m)
    return w / np.sum(w)


def oracle_mask_mass(task: Task, x, mask: RasterMask,
                     coords: tuple[int, int] = (0, 1)) -> float:
    """Oracle posterior mass covered by a raster mask (grid quadrature)."""
    points = _grid_points(mask.centers0, mask.centers1)
    probs = _normalize_grid(grid_oracle_logdensity(task, x, points, coords))
    return float(np.sum(probs[mask.mask.ravel()]))
