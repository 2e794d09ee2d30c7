"""Benchmark simulators with tractable oracle posteriors.

Each task bundles a prior over parameters theta, a stochastic simulator
producing observations x, and oracle access to the true posterior
p(theta | x) used only for evaluation:

* ``GaussianLinear``     -- conjugate Gaussian mean inference, 10-D.
* ``GaussianLinearUniform`` -- same likelihood with a uniform box prior;
  the posterior is a box-truncated Gaussian sampled by rejection.
* ``TwoMoons``           -- crescent-shaped bimodal posterior, 2-D.
* ``GaussianMixture``    -- bimodal two-component mixture, 2-D.
* ``Heteroskedastic``    -- 1-D mean inference whose observation noise
  switches with the sign of the first observation coordinate, so the
  conditional score scale differs across observation space.

Tasks are immutable after construction and every operation is pure given
an explicit ``numpy.random.Generator``, so they are safe to share across
threads.  Oracle posteriors for the 2-D tasks are evaluated on a fixed
512 x 512 grid over the prior box and sampled by self-normalized
importance resampling with replacement.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass

import numpy as np

from ._rng import as_vector

GRID_RESOLUTION = 512
REJECTION_CAP = 1_000_000

_LOG_2PI = math.log(2.0 * math.pi)


class TaskError(RuntimeError):
    """Raised for dimension mismatches and degenerate oracle queries."""


@dataclass
class CalibrationSet:
    """Joint draws (theta_i, x_i) with theta ~ prior and x ~ simulator(theta).

    Rows are exchangeable by construction.
    """

    thetas: np.ndarray  # (B, theta_dim)
    xs: np.ndarray      # (B, x_dim)

    def __post_init__(self) -> None:
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        if self.thetas.shape[0] != self.xs.shape[0]:
            raise TaskError("thetas and xs must have the same number of rows")

    @property
    def size(self) -> int:
        return self.thetas.shape[0]

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        return zip(self.thetas, self.xs)


class Task:
    """Base class: prior + simulator + oracle posterior."""

    name: str
    theta_dim: int
    x_dim: int
    #: True when oracle_logdensity returns an exactly normalized value.
    oracle_density_normalized: bool = False
    #: True when the posterior factorizes across parameter coordinates,
    #: making exact marginals over coordinate subsets available.
    posterior_coordinatewise_independent: bool = False

    def config(self) -> dict:
        """Task constants, echoed into experiment manifests."""
        raise NotImplementedError

    def prior_sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 1:
            raise TaskError("n must be >= 1")
        return self._prior_sample(rng, n)

    def simulate(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = as_vector(theta, self.theta_dim)
        return self._simulate(theta, rng)

    def simulate_batch(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        return np.stack([self._simulate(t, rng) for t in thetas])

    def oracle_posterior_sample(self, x, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 1:
            raise TaskError("n must be >= 1")
        x = as_vector(x, self.x_dim)
        return self._oracle_sample(x, rng, n)

    def oracle_logdensity(self, theta, x) -> np.ndarray | float:
        """log p(theta | x); -inf outside the prior support.

        Accepts a single theta vector or a (n, theta_dim) batch.  Values
        are exact for the conjugate tasks and unnormalized (up to an
        additive constant) for the grid-based 2-D tasks; see
        ``oracle_density_normalized``.
        """
        x = as_vector(x, self.x_dim)
        arr = np.asarray(theta, dtype=np.float64)
        single = arr.ndim == 1
        thetas = np.atleast_2d(arr)
        if thetas.shape[1] != self.theta_dim:
            raise TaskError(
                f"theta has dimension {thetas.shape[1]}, expected {self.theta_dim}"
            )
        out = self._oracle_logdensity(thetas, x)
        return float(out[0]) if single else out

    def oracle_posterior_moments(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and per-coordinate variance at x."""
        x = as_vector(x, self.x_dim)
        return self._oracle_moments(x)

    def oracle_marginal_logdensity(self, thetas_sub, x, coords) -> np.ndarray:
        """Marginal oracle log-density over a subset of parameter coordinates.

        Exact for tasks whose posterior factorizes across coordinates; the
        full coordinate set falls back to oracle_logdensity.
        """
        coords = tuple(int(c) for c in coords)
        x = as_vector(x, self.x_dim)
        pts = np.atleast_2d(np.asarray(thetas_sub, dtype=np.float64))
        if pts.shape[1] != len(coords):
            raise TaskError("thetas_sub width must match the coordinate subset")
        if coords == tuple(range(self.theta_dim)):
            return np.atleast_1d(self.oracle_logdensity(pts, x))
        if not self.posterior_coordinatewise_independent:
            raise TaskError(
                f"task {self.name} has no closed-form marginal over {coords}"
            )
        out = np.zeros(pts.shape[0])
        for col, coord in enumerate(coords):
            out += self._marginal_logdensity_1d(pts[:, col], x, coord)
        return out

    def _marginal_logdensity_1d(self, values: np.ndarray, x: np.ndarray,
                                coord: int) -> np.ndarray:
        raise NotImplementedError

    def prior_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box used for grids and rasterization defaults."""
        raise NotImplementedError

    # hooks ------------------------------------------------------------
    def _prior_sample(self, rng, n):
        raise NotImplementedError

    def _simulate(self, theta, rng):
        raise NotImplementedError

    def _oracle_sample(self, x, rng, n):
        raise NotImplementedError

    def _oracle_logdensity(self, thetas, x):
        raise NotImplementedError

    def _oracle_moments(self, x):
        raise NotImplementedError


class GaussianLinear(Task):
    """Gaussian mean inference with conjugate Gaussian prior.

    theta ~ N(0, prior_var * I), x | theta ~ N(theta, noise_var * I).
    The posterior is N(x * w, v * I) with w = prior_var / (prior_var +
    noise_var) and v = prior_var * noise_var / (prior_var + noise_var).
    """

    name = "GaussianLinear"
    theta_dim = 10
    x_dim = 10
    oracle_density_normalized = True
    posterior_coordinatewise_independent = True

    def __init__(self, prior_var: float = 0.1, noise_var: float = 0.1, dim: int = 10):
        if prior_var <= 0 or noise_var <= 0:
            raise TaskError("variances must be positive")
        self.theta_dim = self.x_dim = int(dim)
        self.prior_var = float(prior_var)
        self.noise_var = float(noise_var)
        self.posterior_weight = self.prior_var / (self.prior_var + self.noise_var)
        self.posterior_var = self.prior_var * self.noise_var / (self.prior_var + self.noise_var)

    def config(self) -> dict:
        return {"prior_var": self.prior_var, "noise_var": self.noise_var, "dim": self.theta_dim}

    def prior_box(self):
        half = 4.0 * math.sqrt(self.prior_var)
        return (np.full(self.theta_dim, -half), np.full(self.theta_dim, half))

    def _prior_sample(self, rng, n):
        return rng.standard_normal((n, self.theta_dim)) * math.sqrt(self.prior_var)

    def _simulate(self, theta, rng):
        return theta + rng.standard_normal(self.x_dim) * math.sqrt(self.noise_var)

    def _posterior_mean(self, x):
        return x * self.posterior_weight

    def _oracle_sample(self, x, rng, n):
        mean = self._posterior_mean(x)
        return mean + rng.standard_normal((n, self.theta_dim)) * math.sqrt(self.posterior_var)

    def _oracle_logdensity(self, thetas, x):
        mean = self._posterior_mean(x)
        sq = np.sum((thetas - mean) ** 2, axis=1)
        d = self.theta_dim
        return -0.5 * (d * (_LOG_2PI + math.log(self.posterior_var)) + sq / self.posterior_var)

    def _oracle_moments(self, x):
        return self._posterior_mean(x), np.full(self.theta_dim, self.posterior_var)

    def _marginal_logdensity_1d(self, values, x, coord):
        mean = x[coord] * self.posterior_weight
        z2 = (values - mean) ** 2 / self.posterior_var
        return -0.5 * (_LOG_2PI + math.log(self.posterior_var) + z2)


def _truncnorm_logz(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(b) - Phi(a)) for standardized truncation bounds."""
    from scipy.stats import norm

    # complementary form keeps precision when both bounds sit in one tail
    hi = norm.logcdf(b)
    lo = norm.logcdf(a)
    with np.errstate(divide="ignore"):
        return hi + np.log1p(-np.exp(np.minimum(lo - hi, 0.0)))


class GaussianLinearUniform(Task):
    """Gaussian likelihood with a uniform box prior.

    theta ~ Uniform([-bound, bound]^d), x | theta ~ N(theta, noise_var*I).
    The posterior factorizes into independent 1-D Gaussians truncated to
    the prior interval; oracle draws use coordinate-wise rejection with a
    global proposal cap so that pathological observations fail loudly
    instead of hanging.
    """

    name = "GaussianLinearUniform"
    theta_dim = 10
    x_dim = 10
    oracle_density_normalized = True
    posterior_coordinatewise_independent = True

    def __init__(self, prior_bound: float = 1.0, noise_var: float = 0.1, dim: int = 10):
        if prior_bound <= 0 or noise_var <= 0:
            raise TaskError("prior_bound and noise_var must be positive")
        self.theta_dim = self.x_dim = int(dim)
        self.prior_bound = float(prior_bound)
        self.noise_var = float(noise_var)

    def config(self) -> dict:
        return {
            "prior_bound": self.prior_bound,
            "noise_var": self.noise_var,
            "dim": self.theta_dim,
        }

    def prior_box(self):
        return (
            np.full(self.theta_dim, -self.prior_bound),
            np.full(self.theta_dim, self.prior_bound),
        )

    def _prior_sample(self, rng, n):
        return rng.uniform(-self.prior_bound, self.prior_bound, (n, self.theta_dim))

    def _simulate(self, theta, rng):
        return theta + rng.standard_normal(self.x_dim) * math.sqrt(self.noise_var)

    def _oracle_sample(self, x, rng, n):
        sigma = math.sqrt(self.noise_var)
        bound = self.prior_bound
        out = np.empty((n, self.theta_dim))
        proposals = 0
        for j in range(self.theta_dim):
            filled = 0
            while filled < n:
                batch = max(n - filled, 1024)
                if proposals + batch > REJECTION_CAP:
                    batch = REJECTION_CAP - proposals
                    if batch <= 0:
                        raise TaskError(
                            f"rejection sampler exceeded {REJECTION_CAP} proposals; "
                            f"observation {x!r} is degenerate for the prior box"
                        )
                draws = x[j] + sigma * rng.standard_normal(batch)
                proposals += batch
                keep = draws[np.abs(draws) <= bound]
                take = min(keep.size, n - filled)
                out[filled:filled + take, j] = keep[:take]
                filled += take
        return out

    def _standardized_bounds(self, x):
        sigma = math.sqrt(self.noise_var)
        a = (-self.prior_bound - x) / sigma
        b = (self.prior_bound - x) / sigma
        return a, b, sigma

    def _oracle_logdensity(self, thetas, x):
        a, b, sigma = self._standardized_bounds(x)
        logz = _truncnorm_logz(a, b)
        z = (thetas - x) / sigma
        per_dim = -0.5 * (_LOG_2PI + z * z) - math.log(sigma) - logz
        out = np.sum(per_dim, axis=1)
        inside = np.all(np.abs(thetas) <= self.prior_bound, axis=1)
        return np.where(inside, out, -np.inf)

    def _oracle_moments(self, x):
        from scipy.stats import norm

        a, b, sigma = self._standardized_bounds(x)
        z = np.exp(_truncnorm_logz(a, b))
        pa, pb = norm.pdf(a), norm.pdf(b)
        mean = x + sigma * (pa - pb) / z
        var = self.noise_var * (1.0 + (a * pa - b * pb) / z - ((pa - pb) / z) ** 2)
        return mean, np.maximum(var, 0.0)

    def _marginal_logdensity_1d(self, values, x, coord):
        a, b, sigma = self._standardized_bounds(x)
        logz = _truncnorm_logz(a, b)[coord]
        z = (values - x[coord]) / sigma
        out = -0.5 * (_LOG_2PI + z * z) - math.log(sigma) - logz
        return np.where(np.abs(values) <= self.prior_bound, out, -np.inf)


class _Grid2DTask(Task):
    """Shared machinery for 2-D tasks whose oracle lives on a grid.

    The posterior is proportional to the likelihood on the (uniform)
    prior box.  Cell probabilities come from midpoint quadrature on a
    GRID_RESOLUTION^2 lattice; oracle draws resample cell centers with
    replacement.  A noise-scale knob supports misspecified variants of
    the same posterior (likelihood noise variances multiplied by gamma)
    without leaving the prior support.
    """

    theta_dim = 2
    x_dim = 2
    oracle_density_normalized = False

    def _loglik(self, thetas: np.ndarray, x: np.ndarray,
                noise_scale: float = 1.0) -> np.ndarray:
        """Log-likelihood of x with noise variances scaled by noise_scale."""
        raise NotImplementedError

    def _lik_weights(self, points: np.ndarray, x: np.ndarray,
                     noise_scale: float) -> np.ndarray | None:
        """Unnormalized nonnegative weights on grid points; None defers to
        the slower log-domain path.  Overridden where a direct density
        formula is cheap and stable."""
        return None

    @functools.cached_property
    def _grid_points(self) -> np.ndarray:
        lo, hi = self.prior_box()
        edges0 = np.linspace(lo[0], hi[0], GRID_RESOLUTION + 1)
        edges1 = np.linspace(lo[1], hi[1], GRID_RESOLUTION + 1)
        c0 = 0.5 * (edges0[:-1] + edges0[1:])
        c1 = 0.5 * (edges1[:-1] + edges1[1:])
        g0, g1 = np.meshgrid(c0, c1, indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])

    @property
    def grid_cell_area(self) -> float:
        lo, hi = self.prior_box()
        return float((hi[0] - lo[0]) * (hi[1] - lo[1]) / GRID_RESOLUTION**2)

    def grid_posterior(self, x, noise_scale: float = 1.0
                       ) -> tuple[np.ndarray, np.ndarray]:
        """(grid points, normalized cell probabilities) for p(theta | x)."""
        x = as_vector(x, self.x_dim)
        return self._grid_points, self._grid_probs(x.tobytes(), float(noise_scale))

    @functools.lru_cache(maxsize=8)
    def _grid_probs(self, x_bytes: bytes, noise_scale: float) -> np.ndarray:
        x = np.frombuffer(x_bytes, dtype=np.float64)
        w = self._lik_weights(self._grid_points, x, noise_scale)
        if w is None or not np.any(w > 0):
            logw = self._loglik(self._grid_points, x, noise_scale)
            m = np.max(logw)
            if not np.isfinite(m):
                raise TaskError(f"likelihood vanished on the whole grid for x={x!r}")
            w = np.exp(logw - m)
        return w / np.sum(w)

    def _prior_sample(self, rng, n):
        lo, hi = self.prior_box()
        return rng.uniform(lo, hi, (n, 2))

    def _oracle_sample(self, x, rng, n):
        points, probs = self.grid_posterior(x)
        idx = rng.choice(points.shape[0], size=n, replace=True, p=probs)
        return points[idx]

    def _oracle_logdensity(self, thetas, x):
        return self.scaled_logdensity(thetas, x, 1.0)

    def scaled_logdensity(self, thetas, x, noise_scale: float) -> np.ndarray:
        """Unnormalized log-posterior with scaled likelihood noise."""
        lo, hi = self.prior_box()
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        out = self._loglik(thetas, as_vector(x, self.x_dim), noise_scale)
        inside = np.all((thetas >= lo) & (thetas <= hi), axis=1)
        return np.where(inside, out, -np.inf)

    def _oracle_moments(self, x):
        points, probs = self.grid_posterior(x)
        mean = probs @ points
        var = probs @ (points - mean) ** 2
        return mean, var


class TwoMoons(_Grid2DTask):
    """Crescent-shaped bimodal benchmark.

    With a ~ Uniform(-pi/2, pi/2) and r ~ N(radius_mean, radius_std^2):

        x1 = r cos(a) + 0.25 - |theta1 + theta2| / sqrt(2)
        x2 = r sin(a) + (-theta1 + theta2) / sqrt(2)

    The prior is Uniform([-bound, bound]^2).
    """

    name = "TwoMoons"

    def __init__(self, prior_bound: float = 1.0, radius_mean: float = 0.1,
                 radius_std: float = 0.01):
        self.prior_bound = float(prior_bound)
        self.radius_mean = float(radius_mean)
        self.radius_std = float(radius_std)

    def config(self) -> dict:
        return {
            "prior_bound": self.prior_bound,
            "radius_mean": self.radius_mean,
            "radius_std": self.radius_std,
        }

    def prior_box(self):
        return (np.full(2, -self.prior_bound), np.full(2, self.prior_bound))

    def _simulate(self, theta, rng):
        a = rng.uniform(-0.5 * math.pi, 0.5 * math.pi)
        r = self.radius_mean + self.radius_std * rng.standard_normal()
        p = np.array([r * math.cos(a) + 0.25, r * math.sin(a)])
        shift = np.array(
            [-abs(theta[0] + theta[1]), -theta[0] + theta[1]]
        ) / math.sqrt(2.0)
        return p + shift

    def _radial(self, thetas, x):
        u1 = x[0] - 0.25 + np.abs(thetas[:, 0] + thetas[:, 1]) / math.sqrt(2.0)
        u2 = x[1] - (-thetas[:, 0] + thetas[:, 1]) / math.sqrt(2.0)
        return u1, np.hypot(u1, u2)

    def _loglik(self, thetas, x, noise_scale=1.0):
        u1, rho = self._radial(thetas, x)
        sd = self.radius_std * math.sqrt(noise_scale)
        z = (rho - self.radius_mean) / sd
        with np.errstate(divide="ignore"):
            out = (
                -math.log(math.pi)
                - 0.5 * (_LOG_2PI + z * z)
                - math.log(sd)
                - np.log(rho)
            )
        # angle outside (-pi/2, pi/2) is unreachable for r > 0
        return np.where((u1 > 0) & (rho > 0), out, -np.inf)

    def _lik_weights(self, points, x, noise_scale):
        u1, rho = self._radial(points, x)
        sd = self.radius_std * math.sqrt(noise_scale)
        z = (rho - self.radius_mean) / sd
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.exp(-0.5 * z * z) / rho
        return np.where((u1 > 0) & (rho > 0), w, 0.0)


class GaussianMixture(_Grid2DTask):
    """Two-component mixture with shared mean 0.8 * theta.

    x | theta ~ 0.5 N(mean_factor*theta, broad_var*I)
              + 0.5 N(mean_factor*theta, narrow_var*I),
    theta ~ Uniform([-3, 3]^2) by default.
    """

    name = "GaussianMixture"

    def __init__(self, prior_bound: float = 3.0, mean_factor: float = 0.8,
                 broad_var: float = 1.0, narrow_var: float = 0.01):
        self.prior_bound = float(prior_bound)
        self.mean_factor = float(mean_factor)
        self.broad_var = float(broad_var)
        self.narrow_var = float(narrow_var)

    def config(self) -> dict:
        return {
            "prior_bound": self.prior_bound,
            "mean_factor": self.mean_factor,
            "broad_var": self.broad_var,
            "narrow_var": self.narrow_var,
        }

    def prior_box(self):
        return (np.full(2, -self.prior_bound), np.full(2, self.prior_bound))

    def _simulate(self, theta, rng):
        mean = self.mean_factor * theta
        var = self.broad_var if rng.uniform() < 0.5 else self.narrow_var
        return mean + math.sqrt(var) * rng.standard_normal(2)

    def _loglik(self, thetas, x, noise_scale=1.0):
        broad = noise_scale * self.broad_var
        narrow = noise_scale * self.narrow_var
        sq = np.sum((x - self.mean_factor * thetas) ** 2, axis=1)
        log_broad = -_LOG_2PI - math.log(broad) - 0.5 * sq / broad
        log_narrow = -_LOG_2PI - math.log(narrow) - 0.5 * sq / narrow
        return np.logaddexp(math.log(0.5) + log_broad, math.log(0.5) + log_narrow)

    def _lik_weights(self, points, x, noise_scale):
        broad = noise_scale * self.broad_var
        narrow = noise_scale * self.narrow_var
        sq = np.sum((x - self.mean_factor * points) ** 2, axis=1)
        return (np.exp(-0.5 * sq / broad) / broad
                + np.exp(-0.5 * sq / narrow) / narrow)


class Heteroskedastic(Task):
    """1-D mean inference with regime-switching observation noise.

    theta ~ N(0, prior_scale^2); x = (x1, x2) with x1 ~ Uniform(-1, 1)
    independent of theta and x2 = theta + sigma(x1) * eps, where
    sigma(x1) = sigma_low for x1 < 0 and sigma_high otherwise.  With a
    wide prior the posterior standard deviation is close to sigma(x1),
    so the conditional score scale differs by sigma_high / sigma_low
    across the sign of x1.
    """

    name = "Heteroskedastic"
    theta_dim = 1
    x_dim = 2
    oracle_density_normalized = True
    posterior_coordinatewise_independent = True

    def __init__(self, prior_scale: float = 10.0, sigma_low: float = 0.3,
                 sigma_high: float = 0.9):
        if min(prior_scale, sigma_low, sigma_high) <= 0:
            raise TaskError("scales must be positive")
        self.prior_scale = float(prior_scale)
        self.sigma_low = float(sigma_low)
        self.sigma_high = float(sigma_high)

    def config(self) -> dict:
        return {
            "prior_scale": self.prior_scale,
            "sigma_low": self.sigma_low,
            "sigma_high": self.sigma_high,
        }

    def prior_box(self):
        half = 4.0 * self.prior_scale
        return (np.array([-half]), np.array([half]))

    def _noise_var(self, x1: float) -> float:
        return (self.sigma_low if x1 < 0 else self.sigma_high) ** 2

    def _posterior(self, x):
        tau2 = self.prior_scale**2
        s2 = self._noise_var(x[0])
        v = tau2 * s2 / (tau2 + s2)
        mean = x[1] * tau2 / (tau2 + s2)
        return mean, v

    def _prior_sample(self, rng, n):
        return rng.standard_normal((n, 1)) * self.prior_scale

    def _simulate(self, theta, rng):
        x1 = rng.uniform(-1.0, 1.0)
        x2 = theta[0] + math.sqrt(self._noise_var(x1)) * rng.standard_normal()
        return np.array([x1, x2])

    def _oracle_sample(self, x, rng, n):
        mean, v = self._posterior(x)
        return mean + math.sqrt(v) * rng.standard_normal((n, 1))

    def _oracle_logdensity(self, thetas, x):
        mean, v = self._posterior(x)
        z2 = (thetas[:, 0] - mean) ** 2 / v
        return -0.5 * (_LOG_2PI + math.log(v) + z2)

    def _oracle_moments(self, x):
        mean, v = self._posterior(x)
        return np.array([mean]), np.array([v])


_TASKS = {
    "TwoMoons": TwoMoons,
    "GaussianLinear": GaussianLinear,
    "GaussianLinearUniform": GaussianLinearUniform,
    "GaussianMixture": GaussianMixture,
    "Heteroskedastic": Heteroskedastic,
}


def task_names() -> list[str]:
    return sorted(_TASKS)


def make_task(name: str, **overrides) -> Task:
    """Construct a benchmark task by name with optional config overrides."""
    try:
        cls = _TASKS[name]
    except KeyError:
        raise TaskError(f"unknown task {name!r}; choose from {task_names()}") from None
    try:
        return cls(**overrides)
    except TypeError as exc:
        raise TaskError(f"bad config for task {name}: {exc}") from None


def generate_dataset(task: Task, size: int, rng: np.random.Generator) -> CalibrationSet:
    """Draw ``size`` exchangeable joint pairs (theta, x)."""
    if size < 1:
        raise TaskError("size must be >= 1")
    thetas = task.prior_sample(rng, size)
    xs = np.stack([task.simulate(t, rng) for t in thetas])
    return CalibrationSet(thetas, xs)


def dataset_header(theta_dim: int, x_dim: int) -> list[str]:
    return [f"theta_{j}" for j in range(theta_dim)] + [f"x_{j}" for j in range(x_dim)]


def write_dataset_csv(dataset: CalibrationSet, path) -> None:
    """Write pairs with shortest round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset_header(dataset.thetas.shape[1], dataset.xs.shape[1]))
        for theta, x in dataset:
            writer.writerow([repr(float(v)) for v in theta] + [repr(float(v)) for v in x])


def read_dataset_csv(path) -> CalibrationSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        theta_dim = sum(1 for name in header if name.startswith("theta_"))
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows, dtype=np.float64)
    return CalibrationSet(arr[:, :theta_dim], arr[:, theta_dim:])
