"""Conformity scores derived from a surrogate posterior.

Every score follows the convention that *smaller values mean more
plausible*: credible regions are sublevel sets {theta : s(theta; x) <= t}.
Density-style scores are therefore the negated density, on the natural
(not log) scale.

Four kinds are provided:

* ``hpd``       -- s = -p_hat(theta | x); needs a surrogate density.
* ``hpd_kde``   -- kernel density estimate of the same quantity from L
  surrogate draws, for sample-only surrogates.  Gaussian product kernel
  with a per-dimension Scott bandwidth, refitted per observation.
* ``symmetric`` -- max over coordinates of |theta - E[theta|x]| / sd.
* ``quantile``  -- max(q_a1 - theta, theta - q_a2), scalar parameters only.

Moment and quantile estimates use exact values when the surrogate is
Gaussian with known conditionals and otherwise fall back to L draws,
derived deterministically from (seed, x) so evaluation is pure.
"""

from __future__ import annotations

import math

import numpy as np

from ._rng import as_vector, per_x_rng
from .surrogate import SurrogatePosterior

_SQRT_2PI = math.sqrt(2.0 * math.pi)

DEFAULT_DRAW_BUDGET = 1000


class ScoreError(ValueError):
    """Bad score configuration or unusable inputs."""


def scott_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-dimension kernel widths h_j = std_j * n**(-1/(d+4)).

    ``samples`` is (n, d) with n >= 2; raises on degenerate dimensions.
    """
    arr = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, d = arr.shape
    if n < 2:
        raise ScoreError("Scott bandwidth needs at least 2 samples")
    std = arr.std(axis=0, ddof=1)
    if np.any(std <= 0):
        raise ScoreError("zero variance in at least one dimension")
    return std * n ** (-1.0 / (d + 4))


def kde_hpd_score(samples: np.ndarray, bandwidth: np.ndarray, thetas) -> np.ndarray | float:
    """Negated Gaussian-product KDE of the sample cloud at theta.

    Returns -(1/L) sum_l prod_j phi((theta_j - sample_lj)/h_j) / h_j, so
    lower values mean higher estimated density.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    h = as_vector(bandwidth)
    L, d = samples.shape
    if h.shape[0] != d:
        raise ScoreError(f"bandwidth has length {h.shape[0]}, samples dimension {d}")
    arr = np.asarray(thetas, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != d:
        raise ScoreError(f"theta has dimension {pts.shape[1]}, samples dimension {d}")
    norm_const = L * _SQRT_2PI**d * np.prod(h)
    out = np.empty(pts.shape[0])
    # chunk the evaluation grid so the (L, chunk, d) residual tensor stays small
    chunk = max(1, int(4_000_000 // max(L * d, 1)))
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        z = (block[None, :, :] - samples[:, None, :]) / h
        out[start:start + chunk] = -np.sum(np.exp(-0.5 * np.sum(z * z, axis=2)), axis=0) / norm_const
    return float(out[0]) if single else out


def ecdf_transform(value: float, sampled_scores) -> float:
    """Empirical CDF of the sampled scores evaluated at value (ties <=)."""
    arr = np.asarray(sampled_scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ScoreError("empty sample list")
    return float(np.count_nonzero(arr <= value)) / arr.size


class ScoreFunction:
    """Conformity score s(theta; x); immutable, pure evaluation."""

    kind: str

    def __init__(self, surrogate: SurrogatePosterior):
        self.surrogate = surrogate
        self.theta_dim = surrogate.theta_dim

    def __call__(self, thetas, x) -> np.ndarray | float:
        return self.evaluate(thetas, x)

    def evaluate(self, thetas, x) -> np.ndarray | float:
        """Score of one theta vector or a (n, d) batch at observation x."""
        x = as_vector(x)
        arr = np.asarray(thetas, dtype=np.float64)
        single = arr.ndim == 1
        batch = np.atleast_2d(arr)
        if batch.shape[1] != self.theta_dim:
            raise ScoreError(
                f"theta has dimension {batch.shape[1]}, expected {self.theta_dim}"
            )
        out = self._evaluate(batch, x)
        return float(out[0]) if single else out

    def _evaluate(self, thetas: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class HpdDensityScore(ScoreFunction):
    """s = -p_hat(theta | x), natural scale."""

    kind = "hpd"

    def __init__(self, surrogate: SurrogatePosterior):
        if not surrogate.density_available:
            raise ScoreError("hpd score needs a surrogate density; use hpd_kde")
        super().__init__(surrogate)

    def _evaluate(self, thetas, x):
        ld = np.atleast_1d(self.surrogate.logdensity(thetas, x))
        with np.errstate(over="ignore"):
            return -np.exp(ld)


class HpdKdeScore(ScoreFunction):
    """Sample-based HPD score: negated KDE of L surrogate draws at x.

    The draws, and hence the Scott bandwidth, are refitted for every
    observation from a stream derived from (seed, x).
    """

    kind = "hpd_kde"

    def __init__(self, surrogate: SurrogatePosterior, draws: int = DEFAULT_DRAW_BUDGET,
                 seed: int = 0):
        if draws < 2:
            raise ScoreError("hpd_kde needs at least 2 draws")
        super().__init__(surrogate)
        self.draws = int(draws)
        self.seed = int(seed)

    def _draws_at(self, x):
        return self.surrogate.sample(x, per_x_rng(self.seed, x, "kde"), self.draws)

    def _evaluate(self, thetas, x):
        samples = self._draws_at(x)
        bw = scott_bandwidth(samples)
        return np.atleast_1d(kde_hpd_score(samples, bw, thetas))


class _MomentBackedScore(ScoreFunction):
    """Shared draw-or-exact moment machinery."""

    def __init__(self, surrogate: SurrogatePosterior, draws: int = DEFAULT_DRAW_BUDGET,
                 seed: int = 0):
        super().__init__(surrogate)
        self.draws = int(draws)
        self.seed = int(seed)

    def _sample_at(self, x, tag):
        return self.surrogate.sample(x, per_x_rng(self.seed, x, tag), self.draws)


class SymmetricScore(_MomentBackedScore):
    """Standardized distance from the posterior mean.

    Per coordinate |theta_j - m_j| / sd_j, aggregated by the maximum, so
    regions are axis-aligned boxes.  Moments are exact for Gaussian
    surrogates and otherwise estimated from L draws.
    """

    kind = "symmetric"

    def _moments_at(self, x):
        m = self.surrogate.moments(x)
        if m is None:
            draws = self._sample_at(x, "moments")
            m = draws.mean(axis=0), draws.var(axis=0, ddof=1)
        mean, var = m
        if np.any(var <= 0):
            raise ScoreError("zero estimated posterior variance")
        return mean, var

    def _evaluate(self, thetas, x):
        mean, var = self._moments_at(x)
        z = np.abs(thetas - mean) / np.sqrt(var)
        return z.max(axis=1)


class QuantileScore(_MomentBackedScore):
    """Interval score max(q_a1 - theta, theta - q_a2) for scalar parameters.

    With the uncalibrated threshold 0 the region is the plug-in interval
    (q_a1, q_a2); conformal calibration replaces 0 by a data-driven cutoff.
    """

    kind = "quantile"

    def __init__(self, surrogate: SurrogatePosterior, alpha1: float = 0.05,
                 alpha2: float = 0.95, draws: int = DEFAULT_DRAW_BUDGET, seed: int = 0):
        if surrogate.theta_dim != 1:
            raise ScoreError("quantile score is defined for 1-D parameters only")
        if not (0.0 < alpha1 < alpha2 < 1.0):
            raise ScoreError("need 0 < alpha1 < alpha2 < 1")
        super().__init__(surrogate, draws, seed)
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)

    def _quantiles_at(self, x):
        g = self.surrogate.gaussian_params(x)
        if g is not None:
            from scipy.stats import norm

            mean, cov = g
            sd = math.sqrt(float(cov[0, 0]))
            return (
                float(mean[0] + sd * norm.ppf(self.alpha1)),
                float(mean[0] + sd * norm.ppf(self.alpha2)),
            )
        draws = self._sample_at(x, "quantiles")[:, 0]
        lo, hi = np.quantile(draws, [self.alpha1, self.alpha2])
        return float(lo), float(hi)

    def _evaluate(self, thetas, x):
        lo, hi = self._quantiles_at(x)
        t = thetas[:, 0]
        return np.maximum(lo - t, t - hi)


_SCORE_KINDS = {
    "hpd": HpdDensityScore,
    "hpd_kde": HpdKdeScore,
    "symmetric": SymmetricScore,
    "quantile": QuantileScore,
}


def score_kinds() -> list[str]:
    return sorted(_SCORE_KINDS)


def make_score(kind: str, surrogate: SurrogatePosterior, draws: int = DEFAULT_DRAW_BUDGET,
               alpha1: float = 0.05, alpha2: float = 0.95, seed: int = 0) -> ScoreFunction:
    """Score-function factory used by the experiment runner and CLI."""
    if kind == "hpd":
        return HpdDensityScore(surrogate)
    if kind == "hpd_kde":
        return HpdKdeScore(surrogate, draws=draws, seed=seed)
    if kind == "symmetric":
        return SymmetricScore(surrogate, draws=draws, seed=seed)
    if kind == "quantile":
        return QuantileScore(surrogate, alpha1=alpha1, alpha2=alpha2, draws=draws, seed=seed)
    raise ScoreError(f"unknown score kind {kind!r}; choose from {score_kinds()}")
