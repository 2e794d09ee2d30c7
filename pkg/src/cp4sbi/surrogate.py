"""Approximate posteriors standing in for trained conditional estimators.

A surrogate posterior is a conditional sampler with an optional
log-density.  The point of this module is to make miscalibration
reproducible on demand: distortion wrappers shrink or shift the oracle
posterior by a known amount, so the coverage error that calibration has
to fix is exactly known.

Kinds
-----
* ``OracleSurrogate``           -- the task oracle itself (well specified).
* ``VarianceScaledSurrogate``   -- draws rescaled about the posterior mean
  by sqrt(gamma); gamma < 1 is overconfident.
* ``MeanShiftedSurrogate``      -- draws translated by a fixed vector.
* ``ConditionalGaussianFit``    -- theta | x ~ N(A x + b, Sigma) with A, b
  fitted by least squares on joint draws and Sigma from the residuals.
* ``SampleOnlySurrogate``       -- hides the density of any surrogate,
  modelling implicit generative estimators that only provide draws.
* ``ProjectedSurrogate``        -- pushforward through a parameter
  transform, for inference on coordinate subsets or affine maps.
"""

from __future__ import annotations

import math

import numpy as np

from ._rng import as_vector
from .tasks import CalibrationSet, Task

_LOG_2PI = math.log(2.0 * math.pi)


class DensityUnavailableError(RuntimeError):
    """The surrogate only supports sampling; use a KDE-based score."""


class SurrogatePosterior:
    """Conditional sampler with optional density; immutable once built."""

    kind: str
    theta_dim: int
    density_available: bool = False
    #: True when every conditional is exactly Gaussian (enables closed-form
    #: moments, quantiles, and affine pushforward densities).
    gaussian_family: bool = False

    def sample(self, x, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. draws from the surrogate conditional at x, shape (n, d)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return self._sample(as_vector(x), rng, n)

    def logdensity(self, theta, x) -> np.ndarray | float:
        """log of the surrogate conditional density; batched over theta rows."""
        if not self.density_available:
            raise DensityUnavailableError(
                f"{self.kind} surrogate exposes sampling only; no density"
            )
        x = as_vector(x)
        arr = np.asarray(theta, dtype=np.float64)
        single = arr.ndim == 1
        thetas = np.atleast_2d(arr)
        if thetas.shape[1] != self.theta_dim:
            raise ValueError(f"theta must have dimension {self.theta_dim}")
        out = self._logdensity(thetas, x)
        return float(out[0]) if single else out

    def moments(self, x) -> tuple[np.ndarray, np.ndarray] | None:
        """Exact conditional mean and per-coordinate variance, when known."""
        return None

    def gaussian_params(self, x) -> tuple[np.ndarray, np.ndarray] | None:
        """(mean, covariance) when the conditional is exactly Gaussian."""
        return None

    def supports_marginal(self, coords) -> bool:
        """Whether an exact marginal log-density exists over these coordinates."""
        return False

    def marginal_logdensity(self, thetas_sub, x, coords) -> np.ndarray:
        raise DensityUnavailableError(
            f"{self.kind} surrogate has no marginal density over {tuple(coords)}"
        )

    def _sample(self, x, rng, n):
        raise NotImplementedError

    def _logdensity(self, thetas, x):
        raise NotImplementedError


class OracleSurrogate(SurrogatePosterior):
    """Identity wrapper around the task oracle: the well-specified case."""

    kind = "oracle"

    _GAUSSIAN_TASKS = ("GaussianLinear", "Heteroskedastic")

    def __init__(self, task: Task):
        self.task = task
        self.theta_dim = task.theta_dim
        self.density_available = True
        self.gaussian_family = getattr(task, "name", "") in self._GAUSSIAN_TASKS

    def _sample(self, x, rng, n):
        return self.task.oracle_posterior_sample(x, rng, n)

    def _logdensity(self, thetas, x):
        return np.atleast_1d(self.task.oracle_logdensity(thetas, x))

    def moments(self, x):
        return self.task.oracle_posterior_moments(x)

    def gaussian_params(self, x):
        if self.gaussian_family:
            mean, var = self.task.oracle_posterior_moments(x)
            return mean, np.diag(var)
        return None

    def supports_marginal(self, coords):
        return (self.task.posterior_coordinatewise_independent
                or tuple(coords) == tuple(range(self.theta_dim)))

    def marginal_logdensity(self, thetas_sub, x, coords):
        return np.atleast_1d(
            self.task.oracle_marginal_logdensity(thetas_sub, as_vector(x), coords))


class _AffineDistortion(SurrogatePosterior):
    """Base for distortions of the form theta -> scale*(theta - c) + c + shift.

    Sampling pushes oracle draws through the map; the density follows by
    the change-of-variables formula, so sampler and density stay
    consistent for any base surrogate with a density.
    """

    def __init__(self, base: SurrogatePosterior, scale: float, shift: np.ndarray):
        self.base = base
        self.theta_dim = base.theta_dim
        self.scale = float(scale)
        self.shift = as_vector(shift, base.theta_dim) if np.ndim(shift) else np.full(
            base.theta_dim, float(shift)
        )
        self.density_available = base.density_available
        self.gaussian_family = base.gaussian_family

    def _center(self, x) -> np.ndarray:
        m = self.base.moments(x)
        if m is None:
            raise ValueError("distortion requires a base surrogate with known moments")
        return m[0]

    def _sample(self, x, rng, n):
        center = self._center(x)
        draws = self.base.sample(x, rng, n)
        return center + self.scale * (draws - center) + self.shift

    def _logdensity(self, thetas, x):
        center = self._center(x)
        pre = center + (thetas - self.shift - center) / self.scale
        base_ld = np.atleast_1d(self.base.logdensity(pre, x))
        return base_ld - self.theta_dim * math.log(self.scale)

    def moments(self, x):
        m = self.base.moments(x)
        if m is None:
            return None
        mean, var = m
        return mean + self.shift, var * self.scale**2

    def gaussian_params(self, x):
        g = self.base.gaussian_params(x)
        if g is None:
            return None
        mean, cov = g
        return mean + self.shift, cov * self.scale**2

    def supports_marginal(self, coords):
        return self.base.supports_marginal(coords)

    def marginal_logdensity(self, thetas_sub, x, coords):
        # per-coordinate change of variables through the affine map
        coords = tuple(int(c) for c in coords)
        center = self._center(as_vector(x))[list(coords)]
        shift = self.shift[list(coords)]
        pts = np.atleast_2d(np.asarray(thetas_sub, dtype=np.float64))
        pre = center + (pts - shift - center) / self.scale
        base_ld = self.base.marginal_logdensity(pre, x, coords)
        return base_ld - len(coords) * math.log(self.scale)


class VarianceScaledSurrogate(_AffineDistortion):
    """Rescales the posterior spread about its mean by a factor gamma.

    gamma = 1 reproduces the base surrogate; gamma < 1 is overconfident
    (variance = gamma * base variance, mean unchanged).
    """

    kind = "variance_scaled"

    def __init__(self, base: SurrogatePosterior, gamma: float):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        super().__init__(base, math.sqrt(gamma), np.zeros(base.theta_dim))
        self.gamma = float(gamma)


class MeanShiftedSurrogate(_AffineDistortion):
    """Translates the posterior by a fixed vector delta."""

    kind = "mean_shifted"

    def __init__(self, base: SurrogatePosterior, delta):
        delta = np.asarray(delta, dtype=np.float64)
        if delta.ndim == 0:
            delta = np.full(base.theta_dim, float(delta))
        super().__init__(base, 1.0, delta)
        self.delta = self.shift


class NoiseScaledSurrogate(SurrogatePosterior):
    """Grid-task posterior recomputed with likelihood noise variances
    scaled by gamma.

    This is how the spread distortion is realized on box-truncated
    simulators: the misspecified posterior keeps the full prior support
    (an affine rescaling of draws would clip it) and, for the
    equal-means mixture, has conditional variance gamma times the
    oracle's up to truncation effects.
    """

    kind = "variance_scaled"

    def __init__(self, task: Task, gamma: float):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        if not hasattr(task, "grid_posterior"):
            raise ValueError("noise scaling needs a grid-backed task oracle")
        self.task = task
        self.gamma = float(gamma)
        self.theta_dim = task.theta_dim
        self.density_available = True

    def _sample(self, x, rng, n):
        points, probs = self.task.grid_posterior(x, noise_scale=self.gamma)
        idx = rng.choice(points.shape[0], size=n, replace=True, p=probs)
        return points[idx]

    def _logdensity(self, thetas, x):
        return np.atleast_1d(self.task.scaled_logdensity(thetas, x, self.gamma))

    def moments(self, x):
        points, probs = self.task.grid_posterior(x, noise_scale=self.gamma)
        mean = probs @ points
        var = probs @ (points - mean) ** 2
        return mean, var


class ConditionalGaussianFit(SurrogatePosterior):
    """Linear-Gaussian conditional theta | x ~ N(A x + b, Sigma)."""

    kind = "gaussian_fit"
    gaussian_family = True

    def __init__(self, coeff: np.ndarray, intercept: np.ndarray, cov: np.ndarray):
        self.coeff = np.atleast_2d(np.asarray(coeff, dtype=np.float64))
        self.intercept = as_vector(intercept)
        self.cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self.theta_dim = self.intercept.shape[0]
        self.density_available = True
        self._chol = np.linalg.cholesky(self.cov)
        sign, logdet = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise np.linalg.LinAlgError("residual covariance is not positive definite")
        self._logdet = logdet
        self._prec = np.linalg.inv(self.cov)

    @classmethod
    def fit(cls, train_set: CalibrationSet) -> "ConditionalGaussianFit":
        """Least-squares fit of the conditional mean plus residual covariance."""
        xs, thetas = train_set.xs, train_set.thetas
        n, k = xs.shape
        d = thetas.shape[1]
        if n < d + 2:
            raise ValueError(f"need at least theta_dim + 2 = {d + 2} training pairs")
        design = np.column_stack([xs, np.ones(n)])
        if np.linalg.matrix_rank(design) < k + 1:
            raise np.linalg.LinAlgError("singular design matrix in conditional fit")
        beta, *_ = np.linalg.lstsq(design, thetas, rcond=None)
        coeff = beta[:-1].T
        intercept = beta[-1]
        resid = thetas - design @ beta
        cov = resid.T @ resid / max(n - k - 1, 1)
        return cls(coeff, intercept, cov)

    def _mean(self, x):
        return self.coeff @ x + self.intercept

    def _sample(self, x, rng, n):
        z = rng.standard_normal((n, self.theta_dim))
        return self._mean(x) + z @ self._chol.T

    def _logdensity(self, thetas, x):
        diff = thetas - self._mean(x)
        maha = np.einsum("ij,jk,ik->i", diff, self._prec, diff)
        return -0.5 * (self.theta_dim * _LOG_2PI + self._logdet + maha)

    def moments(self, x):
        return self._mean(x), np.diag(self.cov).copy()

    def gaussian_params(self, x):
        return self._mean(x), self.cov


class SampleOnlySurrogate(SurrogatePosterior):
    """Exposes sampling from a base surrogate but no density.

    Models implicit generative estimators; density-based scores must fall
    back to kernel density estimates of the draws.
    """

    kind = "sample_only"

    def __init__(self, base: SurrogatePosterior):
        self.base = base
        self.theta_dim = base.theta_dim
        self.density_available = False

    def _sample(self, x, rng, n):
        return self.base.sample(x, rng, n)


class ProjectedSurrogate(SurrogatePosterior):
    """Pushforward of a surrogate through an affine parameter transform.

    Sampling always works (draw theta, map to phi).  The density is
    available when the base conditional is exactly Gaussian (the affine
    pushforward is Gaussian) or when the transform selects coordinates of
    a conditional with an exact marginal.
    """

    kind = "projected"

    def __init__(self, base: SurrogatePosterior, transform):
        self.base = base
        self.transform = transform
        self.theta_dim = transform.output_dim
        self.gaussian_family = base.gaussian_family
        self._marginal_route = (transform.is_selector
                                and base.supports_marginal(transform.selected))
        self.density_available = base.density_available and (
            base.gaussian_family or self._marginal_route)

    def _push_gaussian(self, x):
        g = self.base.gaussian_params(x)
        if g is None:
            return None
        mean, cov = g
        w, b = self.transform.matrix, self.transform.offset
        return w @ mean + b, w @ cov @ w.T

    def _sample(self, x, rng, n):
        return self.transform(self.base.sample(x, rng, n))

    def _logdensity(self, thetas, x):
        g = self._push_gaussian(x)
        if g is not None:
            mean, cov = g
            diff = thetas - mean
            prec = np.linalg.inv(cov)
            _, logdet = np.linalg.slogdet(cov)
            maha = np.einsum("ij,jk,ik->i", diff, prec, diff)
            return -0.5 * (self.theta_dim * _LOG_2PI + logdet + maha)
        if self._marginal_route:
            return self.base.marginal_logdensity(thetas, x, self.transform.selected)
        raise DensityUnavailableError(
            "projected surrogate has a density only for Gaussian conditionals "
            "or coordinate selections with exact marginals"
        )

    def moments(self, x):
        g = self._push_gaussian(as_vector(x))
        if g is not None:
            return g[0], np.diag(g[1]).copy()
        m = self.base.moments(x)
        if m is not None and self.transform.is_selector:
            mean, var = m
            idx = self.transform.selected
            return mean[idx], var[idx].copy()
        return None

    def gaussian_params(self, x):
        return self._push_gaussian(as_vector(x))


def _variance_scaled(task: Task, gamma: float) -> SurrogatePosterior:
    # box-truncated simulators get the support-preserving noise-scale
    # distortion; unbounded posteriors get the exact affine rescaling
    if hasattr(task, "grid_posterior"):
        return NoiseScaledSurrogate(task, gamma)
    return VarianceScaledSurrogate(OracleSurrogate(task), gamma)


def fit_surrogate(kind: str, task: Task, train_set: CalibrationSet | None = None,
                  gamma: float = 1.0, shift=None) -> SurrogatePosterior:
    """Build a surrogate posterior of the requested kind.

    ``gaussian_fit`` uses the training pairs; the distortion kinds wrap
    the task oracle and ignore ``train_set``.
    """
    base = OracleSurrogate(task)
    if kind == "oracle":
        return base
    if kind == "variance_scaled":
        return _variance_scaled(task, gamma)
    if kind == "mean_shifted":
        if shift is None:
            raise ValueError("mean_shifted surrogate requires a shift vector")
        return MeanShiftedSurrogate(base, shift)
    if kind == "gaussian_fit":
        if train_set is None:
            raise ValueError("gaussian_fit surrogate requires a training set")
        return ConditionalGaussianFit.fit(train_set)
    if kind == "sample_only":
        inner = base if gamma == 1.0 else _variance_scaled(task, gamma)
        if shift is not None:
            inner = MeanShiftedSurrogate(inner, shift)
        return SampleOnlySurrogate(inner)
    raise ValueError(f"unknown surrogate kind {kind!r}")
