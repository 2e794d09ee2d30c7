import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from cp4sbi.tasks import (
    CalibrationSet,
    GaussianLinear,
    GaussianMixture,
    TaskError,
    TwoMoons,
    generate_dataset,
    make_task,
    read_dataset_csv,
    task_names,
    write_dataset_csv,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestDimensions:
    @pytest.mark.parametrize("name,theta_dim,x_dim", [
        ("TwoMoons", 2, 2),
        ("GaussianLinear", 10, 10),
        ("GaussianLinearUniform", 10, 10),
        ("GaussianMixture", 2, 2),
    ])
    def test_benchmark_dims(self, name, theta_dim, x_dim):
        task = make_task(name)
        assert task.theta_dim == theta_dim
        assert task.x_dim == x_dim

    def test_mixture_defaults(self):
        task = make_task("GaussianMixture")
        assert task.prior_bound == 3.0
        assert task.mean_factor == 0.8

    def test_unknown_task(self):
        with pytest.raises(TaskError):
            make_task("Lorenz96")

    def test_registry_lists_five_tasks(self):
        assert task_names() == [
            "GaussianLinear", "GaussianLinearUniform", "GaussianMixture",
            "Heteroskedastic", "TwoMoons",
        ]


class TestPriorSample:
    def test_mixture_prior_inside_box(self):
        task = make_task("GaussianMixture")
        draws = task.prior_sample(rng(), 1000)
        assert draws.shape == (1000, 2)
        assert np.all(np.abs(draws) <= 3.0)

    def test_gaussian_linear_reproducible(self):
        task = make_task("GaussianLinear")
        a = task.prior_sample(rng(42), 1)
        b = task.prior_sample(rng(42), 1)
        assert a.shape == (1, 10)
        np.testing.assert_array_equal(a, b)

    def test_two_moons_prior_mean_clt(self):
        # Uniform(-1,1) per coordinate: var 1/3, so SE = sqrt(1/3/n)
        task = make_task("TwoMoons")
        n = 10_000
        draws = task.prior_sample(rng(7), n)
        se = math.sqrt((1.0 / 3.0) / n)
        assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)

    def test_n_must_be_positive(self):
        with pytest.raises(TaskError):
            make_task("TwoMoons").prior_sample(rng(), 0)


class TestSimulate:
    def test_gaussian_linear_noise_variance(self):
        task = make_task("GaussianLinear")
        r = rng(3)
        xs = np.stack([task.simulate(np.zeros(10), r) for _ in range(10_000)])
        # pooled over 10 dims x 1e4 reps; within 5% of 0.1
        assert abs(xs.var() - task.noise_var) < 0.05 * task.noise_var

    def test_mixture_observation_is_plausible(self):
        # fixed parameter (0.15, -0.1) can generate x near (0.2651, -0.1454):
        # the observation sits well inside the broad component around 0.8*theta
        task = make_task("GaussianMixture")
        theta = np.array([0.15, -0.1])
        x_obs = np.array([0.2651, -0.1454])
        resid = np.linalg.norm(x_obs - task.mean_factor * theta)
        assert resid < 1.0
        ld = task.oracle_logdensity(theta, x_obs)
        assert np.isfinite(ld)

    def test_two_moons_output_dim(self):
        task = make_task("TwoMoons")
        x = task.simulate(np.array([0.3, -0.2]), rng())
        assert x.shape == (2,)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            make_task("TwoMoons").simulate(np.zeros(3), rng())


class TestOracle:
    def test_gaussian_linear_posterior_mean_is_half_x(self):
        # prior var == noise var  =>  posterior mean x/2, var = 0.05
        task = make_task("GaussianLinear")
        x = task.simulate(task.prior_sample(rng(1), 1)[0], rng(1))
        draws = task.oracle_posterior_sample(x, rng(2), 100_000)
        se = math.sqrt(task.posterior_var / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - x / 2) < 3 * se)

    def test_gaussian_linear_zero_observation(self):
        task = make_task("GaussianLinear")
        mean, var = task.oracle_posterior_moments(np.zeros(10))
        np.testing.assert_array_equal(mean, np.zeros(10))
        np.testing.assert_allclose(var, 0.05)

    def test_two_moons_bimodal(self):
        # at x = 0 the two crescents sit at theta1+theta2 ~ +-0.25..0.4 with
        # |perpendicular| < 0.25, so sign(theta1) separates the modes
        task = make_task("TwoMoons")
        draws = task.oracle_posterior_sample(np.zeros(2), rng(5), 4000)
        frac_pos = np.mean(draws[:, 0] > 0)
        assert 0.2 <= frac_pos <= 0.8

    def test_logdensity_outside_uniform_support(self):
        task = make_task("GaussianLinearUniform")
        x = np.zeros(10)
        theta = np.full(10, 1.5)
        assert task.oracle_logdensity(theta, x) == -np.inf

    def test_gaussian_linear_logdensity_at_mean(self):
        # closed form: -(d/2) log(2 pi v) at the posterior mean
        task = make_task("GaussianLinear")
        x = np.full(10, 0.4)
        expected = -5.0 * math.log(2 * math.pi * task.posterior_var)
        assert task.oracle_logdensity(x / 2, x) == pytest.approx(expected, rel=1e-12)

    def test_mixture_logdensity_matches_direct_formula(self):
        # unnormalized log-posterior differences equal log-likelihood
        # differences computed independently
        task = make_task("GaussianMixture")
        x = np.array([0.2651, -0.1454])
        r = rng(11)
        thetas = r.uniform(-3, 3, (50, 2))

        def direct(theta):
            sq = np.sum((x - 0.8 * theta) ** 2)
            broad = math.exp(-0.5 * sq / 1.0) / (2 * math.pi * 1.0)
            narrow = math.exp(-0.5 * sq / 0.01) / (2 * math.pi * 0.01)
            return math.log(0.5 * broad + 0.5 * narrow)

        ld = task.oracle_logdensity(thetas, x)
        direct_vals = np.array([direct(t) for t in thetas])
        diffs = (ld - ld[0]) - (direct_vals - direct_vals[0])
        assert np.max(np.abs(diffs)) < 1e-6

    def test_mixture_grid_normalization(self):
        # grid quadrature of the normalized cell probabilities is 1 by
        # construction; check the quadrature against an independent
        # 2-D integration of the likelihood to ~grid accuracy
        task = make_task("GaussianMixture")
        x = np.array([0.2651, -0.1454])
        points, probs = task.grid_posterior(x)
        assert probs.shape == (512 * 512,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

        def lik(t0, t1):
            sq = (x[0] - 0.8 * t0) ** 2 + (x[1] - 0.8 * t1) ** 2
            return (0.5 * math.exp(-0.5 * sq) / (2 * math.pi)
                    + 0.5 * math.exp(-0.5 * sq / 0.01) / (2 * math.pi * 0.01))

        z_quad, _ = integrate.dblquad(lik, -3, 3, -3, 3, epsabs=1e-10)
        z_grid = np.exp(task.oracle_logdensity(points, x)).sum() * task.grid_cell_area
        assert z_grid == pytest.approx(z_quad, rel=1e-3)

    def test_rejection_cap_degenerate_observation(self):
        task = make_task("GaussianLinearUniform")
        with pytest.raises(TaskError, match="degenerate"):
            task.oracle_posterior_sample(np.full(10, 50.0), rng(), 100)

    def test_truncated_moments_match_rejection(self):
        task = make_task("GaussianLinearUniform")
        x = np.linspace(-0.9, 0.9, 10)
        draws = task.oracle_posterior_sample(x, rng(9), 50_000)
        mean, var = task.oracle_posterior_moments(x)
        se = np.sqrt(var / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
        np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.05)


class TestHeteroskedastic:
    def test_noise_regimes(self):
        task = make_task("Heteroskedastic")
        r = rng(13)
        lo = [task.simulate(np.array([0.0]), r) for _ in range(4000)]
        x2_lo = np.array([x[1] for x in lo if x[0] < 0])
        x2_hi = np.array([x[1] for x in lo if x[0] >= 0])
        assert abs(x2_lo.std() - 0.3) < 0.03
        assert abs(x2_hi.std() - 0.9) < 0.09

    def test_posterior_sd_ratio_near_three(self):
        task = make_task("Heteroskedastic")
        _, v_lo = task.oracle_posterior_moments(np.array([-0.5, 0.2]))
        _, v_hi = task.oracle_posterior_moments(np.array([0.5, 0.2]))
        assert math.sqrt(v_hi[0] / v_lo[0]) == pytest.approx(3.0, abs=0.05)


class TestGridVersusRejection:
    """Grid importance sampling agrees with likelihood rejection sampling."""

    @pytest.mark.parametrize("name", ["TwoMoons", "GaussianMixture"])
    def test_first_two_moments_agree(self, name):
        task = make_task(name)
        r = rng(17)
        for spot in range(5):
            theta = task.prior_sample(r, 1)[0]
            x = task.simulate(theta, r)
            grid_draws = task.oracle_posterior_sample(x, r, 5000)
            rej_draws = _rejection_oracle(task, x, r, 5000)
            for draws_fn in (lambda d: d, lambda d: d**2):
                a, b = draws_fn(grid_draws), draws_fn(rej_draws)
                se = np.sqrt(a.var(axis=0) / len(a) + b.var(axis=0) / len(b))
                assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se)


def _rejection_oracle(task, x, r, n):
    # independent oracle: propose from the prior, accept with
    # likelihood / max-likelihood estimated on the task grid
    points, _ = task.grid_posterior(x)
    log_max = np.max(task.oracle_logdensity(points, x))
    out = []
    while sum(len(o) for o in out) < n:
        props = task.prior_sample(r, 50_000)
        logl = task.oracle_logdensity(props, x)
        accept = np.log(r.uniform(size=props.shape[0])) < (logl - log_max)
        out.append(props[accept])
    return np.concatenate(out)[:n]


class TestOracleCoverageInvariant:
    @pytest.mark.parametrize("name", task_names())
    def test_hpd_level_sets_cover(self, name):
        # c chosen so the oracle-sample mass of {logdensity >= c} is 0.9;
        # fresh oracle draws must land inside with frequency 0.9 +- 0.03
        task = make_task(name)
        r = rng(23)
        for _ in range(20):
            theta = task.prior_sample(r, 1)[0]
            x = task.simulate(theta, r)
            ref = task.oracle_posterior_sample(x, r, 10_000)
            ld_ref = np.atleast_1d(task.oracle_logdensity(ref, x))
            c = np.quantile(ld_ref, 0.1)
            fresh = task.oracle_posterior_sample(x, r, 1000)
            hit = np.mean(np.atleast_1d(task.oracle_logdensity(fresh, x)) >= c)
            assert abs(hit - 0.9) < 0.03


class TestDatasets:
    def test_sizes(self):
        task = make_task("GaussianLinear")
        assert generate_dataset(task, 2000, rng(0)).size == 2000
        assert generate_dataset(task, 1, rng(0)).size == 1
        assert generate_dataset(task, 400, rng(0)).size == 400

    def test_determinism(self):
        task = make_task("GaussianMixture")
        a = generate_dataset(task, 50, rng(123))
        b = generate_dataset(task, 50, rng(123))
        np.testing.assert_array_equal(a.thetas, b.thetas)
        np.testing.assert_array_equal(a.xs, b.xs)

    def test_csv_round_trip(self, tmp_path):
        task = make_task("TwoMoons")
        ds = generate_dataset(task, 25, rng(3))
        path = tmp_path / "pairs.csv"
        write_dataset_csv(ds, path)
        header = path.read_text().splitlines()[0]
        assert header == "theta_0,theta_1,x_0,x_1"
        back = read_dataset_csv(path)
        np.testing.assert_array_equal(back.thetas, ds.thetas)
        np.testing.assert_array_equal(back.xs, ds.xs)

    def test_mismatched_rows_rejected(self):
        with pytest.raises(TaskError):
            CalibrationSet(np.zeros((3, 2)), np.zeros((4, 2)))
