from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from skewgbm import rng as rngmod
from skewgbm.errors import DomainError, QuadratureError
from skewgbm.quadrature import adaptive_gauss_legendre, tanh_sinh
from skewgbm.sbm import (
    DensityQuery,
    SbmPath,
    SkewStepKernel,
    azzalini_marginal_sample,
    density_const,
    density_inhom,
    density_inhom_batch,
    density_table,
    local_time_estimate,
    sample_step,
    sample_steps,
    simulate_path,
    simulate_paths,
    step_cdf_const,
)
from skewgbm.timefunc import PiecewiseConstantFn, TimeGrid


def const_alpha(a, s=0.0, t=1.0):
    return PiecewiseConstantFn.constant(a, s, t, (0.0, 1.0))


def last_visit_integral(alpha_fn, s, t, x, y):
    """Independent evaluation of the last-visit formula with scipy's adaptive quadrature."""
    T = t - s
    img = 0.0
    if x * y > 0:
        img = (math.exp(-((y - x) ** 2) / (2 * T)) - math.exp(-((y + x) ** 2) / (2 * T))) / math.sqrt(2 * math.pi * T)

    def g(u):
        a = alpha_fn(s + u)
        return (
            abs(y) * (1 + (2 * a - 1) * np.sign(y)) / (2 * math.pi * (T - u) ** 1.5 * math.sqrt(u))
            * math.exp(-y * y / (2 * (T - u)) - x * x / (2 * u))
        )

    pts = [p - s for p in alpha_fn.grid.points if s < p < t]
    val, _ = integrate.quad(g, 0, T, points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-12)
    return img + val


class TestQuadrature:
    def test_endpoint_singularity(self):
        got = tanh_sinh(lambda da, db: da**-0.5, 0.0, 1.0)
        assert got == pytest.approx(2.0, abs=1e-9)

    def test_log_singularity(self):
        assert tanh_sinh(lambda da, db: np.log(da), 0.0, 1.0) == pytest.approx(-1.0, abs=1e-9)

    def test_batched(self):
        k = np.arange(1, 4)[:, None]
        got = tanh_sinh(lambda da, db: da ** (k - 1), 0.0, 1.0)
        np.testing.assert_allclose(got, 1.0 / np.arange(1, 4), atol=1e-10)

    def test_budget_exhaustion_reports_achieved(self):
        with pytest.raises(QuadratureError) as exc:
            tanh_sinh(lambda da, db: np.sin(1e4 * da), 0.0, 1.0, tol=1e-15, max_level=4)
        assert exc.value.achieved > 0

    def test_gauss_legendre(self):
        assert adaptive_gauss_legendre(np.exp, 0.0, 2.0) == pytest.approx(math.expm1(2.0), rel=1e-13)


class TestRng:
    def test_order_independent(self):
        whole = rngmod.step_uniforms(5, 3, 0, 20)
        np.testing.assert_array_equal(rngmod.step_uniforms(5, 3, 7, 6), whole[7:13])

    def test_open_interval(self):
        u = rngmod.step_uniforms(1, 0, 0, 10**5)
        assert u.min() > 0 and u.max() < 1

    def test_streams_differ(self):
        assert not np.array_equal(rngmod.step_uniforms(1, 0, 0, 8), rngmod.step_uniforms(1, 1, 0, 8))
        assert not np.array_equal(rngmod.step_uniforms(1, 0, 0, 8), rngmod.step_uniforms(2, 0, 0, 8))


class TestDensityConst:
    def test_standard_case(self):
        assert density_const(SkewStepKernel(0.5, 1.0), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)

    def test_reflected_has_no_negative_mass(self):
        assert density_const(SkewStepKernel(1.0, 1.0), -0.3) == 0.0

    def test_against_last_visit_formula(self):
        k = SkewStepKernel(0.7, 2.0, 0.5)
        ref = last_visit_integral(const_alpha(0.7, 0, 2), 0.0, 2.0, 0.5, 1.0)
        assert density_const(k, 1.0) == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("alpha, x0, dt", [(0.0, 0.3, 1.0), (0.3, -1.0, 0.5), (0.9, 2.0, 3.0), (1.0, -0.4, 1.0)])
    def test_normalised(self, alpha, x0, dt):
        k = SkewStepKernel(alpha, dt, x0)
        sd = math.sqrt(dt)
        total = sum(
            integrate.quad(lambda y: density_const(k, y), a, b, epsabs=1e-14)[0]
            for a, b in [(x0 - 15 * sd, min(0.0, x0 - 15 * sd)), (min(0.0, x0 - 15 * sd), 0.0), (0.0, abs(x0) + 15 * sd)]
            if b > a
        )
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_degenerate_shapes(self):
        ys = np.linspace(-3, -0.01, 50)
        assert np.all(density_const(SkewStepKernel(1.0, 1.0, 0.5), ys) == 0.0)
        assert np.all(density_const(SkewStepKernel(0.0, 1.0, -0.5), -ys) == 0.0)

    def test_chapman_kolmogorov(self, rng):
        for _ in range(5):
            a, x, y = rng.uniform(0, 1), rng.uniform(-2, 2), rng.uniform(-2, 2)
            d1, d2 = rng.uniform(0.2, 2, size=2)

            def inner(z):
                return density_const(SkewStepKernel(a, d1, x), z) * density_const(SkewStepKernel(a, d2, z), y)

            lhs = integrate.quad(inner, -30, 0, epsabs=1e-12)[0] + integrate.quad(inner, 0, 30, epsabs=1e-12)[0]
            assert lhs == pytest.approx(density_const(SkewStepKernel(a, d1 + d2, x), y), abs=2e-6)


class TestStepCdf:
    def test_symmetric_median(self):
        assert step_cdf_const(SkewStepKernel(0.5, 1.0), 0.0) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("alpha", [0.0, 0.1, 0.6, 1.0])
    @pytest.mark.parametrize("dt", [0.01, 1.0, 7.0])
    def test_negative_mass(self, alpha, dt):
        assert step_cdf_const(SkewStepKernel(alpha, dt), 0.0) == pytest.approx(1 - alpha, abs=1e-15)

    def test_limits_and_monotone(self):
        k = SkewStepKernel(0.3, 2.0, -0.7)
        ys = np.linspace(-20, 20, 4001)
        c = step_cdf_const(k, ys)
        assert c[0] == pytest.approx(0.0, abs=1e-12) and c[-1] == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(c) >= -1e-15)

    def test_derivative_is_density(self):
        k = SkewStepKernel(0.8, 1.5, 0.4)
        ys = np.array([-2.0, -0.5, 0.3, 1.0, 2.5])
        h = 1e-6
        num = (step_cdf_const(k, ys + h) - step_cdf_const(k, ys - h)) / (2 * h)
        np.testing.assert_allclose(num, density_const(k, ys), atol=1e-8)


class TestSampling:
    def test_reflected_nonnegative(self):
        u = rngmod.step_uniforms(3, 0, 0, 10**4)
        assert np.all(sample_steps(SkewStepKernel(1.0, 1.0), u) >= 0)

    def test_inversion_accuracy(self):
        k = SkewStepKernel(0.35, 2.0, 0.8)
        u = rngmod.step_uniforms(9, 0, 0, 2000)
        y = sample_steps(k, u)
        np.testing.assert_allclose(step_cdf_const(k, y), u, atol=1e-11)

    def test_standard_case_is_normal(self):
        u = rngmod.step_uniforms(11, 0, 0, 10**5)
        y = sample_steps(SkewStepKernel(0.5, 1.0), u)
        assert stats.kstest(y, "norm").pvalue > 0.01

    def test_sign_mass(self):
        u = rngmod.step_uniforms(12, 0, 0, 10**5)
        y = sample_steps(SkewStepKernel(0.75, 1.0), u)
        assert abs(np.mean(y > 0) - 0.75) < 3 * math.sqrt(0.75 * 0.25 / 1e5)

    def test_sample_step_generator(self):
        g = rngmod.generator(4)
        k = SkewStepKernel(0.9, 1.0, -0.2)
        draws = np.array([sample_step(k, g) for _ in range(200)])
        assert np.all(np.isfinite(draws))

    def test_azzalini_special_cases(self, rng):
        z = azzalini_marginal_sample(1.0, 2.0, rng, size=1000)
        assert np.all(z >= 0)
        z = azzalini_marginal_sample(0.5, 2.0, rng, size=10**5)
        assert np.var(z) == pytest.approx(2.0, rel=0.03)

    def test_azzalini_skewness(self, rng):
        z = azzalini_marginal_sample(0.8, 1.0, rng, size=10**5)
        d = 0.6
        b = d * math.sqrt(2 / math.pi)
        want = (4 - math.pi) / 2 * b**3 / (1 - b * b) ** 1.5
        assert stats.skew(z) == pytest.approx(want, abs=0.05)


class TestDensityInhom:
    def test_symmetric_example(self):
        q = DensityQuery(0.0, 1.0, 0.2, 0.4, const_alpha(0.5))
        assert density_inhom(q) == pytest.approx(density_const(SkewStepKernel(0.5, 1.0, 0.2), 0.4), abs=1e-8)

    def test_constant_alpha_matches_closed_form(self, rng):
        for _ in range(40):
            a, x, y, dt = rng.uniform(0, 1), rng.uniform(-3, 3), rng.uniform(-4, 4), rng.uniform(0.1, 4)
            q = DensityQuery(1.0, 1.0 + dt, x, y, const_alpha(a, 1.0, 1.0 + dt))
            assert density_inhom(q) == pytest.approx(density_const(SkewStepKernel(a, dt, x), y), abs=1e-8)

    def test_two_step_matches_scipy(self):
        alpha = PiecewiseConstantFn(TimeGrid((0.0, 0.5, 1.0)), (0.3, 0.8))
        for x, y in [(0.0, 0.7), (0.4, -0.9), (-1.0, 1.3), (0.8, 0.5)]:
            got = density_inhom(DensityQuery(0.0, 1.0, x, y, alpha))
            assert got == pytest.approx(last_visit_integral(alpha, 0.0, 1.0, x, y), abs=1e-8)

    def test_zero_is_average_of_limits(self):
        alpha = PiecewiseConstantFn(TimeGrid((0.0, 0.5, 1.0)), (0.3, 0.8))
        eps = 1e-7
        left, mid, right = density_inhom_batch(alpha, 0.0, 1.0, 0.3, [-eps, 0.0, eps])
        assert mid == pytest.approx(0.5 * (left + right), abs=1e-6)

    def test_normalisation_two_step(self):
        alpha = PiecewiseConstantFn(TimeGrid((0.0, 0.5, 1.0)), (0.3, 0.8))
        f = lambda ys: density_inhom_batch(alpha, 0.0, 1.0, 0.0, ys)  # noqa: E731
        total = adaptive_gauss_legendre(f, -20.0, 0.0) + adaptive_gauss_legendre(f, 0.0, 20.0)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_query_validation(self):
        with pytest.raises(DomainError):
            DensityQuery(1.0, 1.0, 0.0, 0.0, const_alpha(0.5, 0.0, 2.0))
        with pytest.raises(DomainError):
            DensityQuery(0.0, 3.0, 0.0, 0.0, const_alpha(0.5, 0.0, 2.0))

    def test_table_format(self):
        text = density_table(const_alpha(0.6), 0.0, 1.0, 0.0, [-1.0, 0.0, 1.0])
        lines = text.splitlines()
        assert lines[0] == "y,p" and len(lines) == 4


class TestSimulation:
    def test_grid_must_contain_breakpoints(self):
        alpha = PiecewiseConstantFn(TimeGrid((0.0, 0.3, 1.0)), (0.2, 0.7))
        with pytest.raises(DomainError):
            simulate_paths(alpha, TimeGrid.uniform(0, 1, 4), 0.0, 1, 3)

    def test_path_shape_and_start(self):
        p = simulate_path(const_alpha(0.6), TimeGrid.uniform(0, 1, 16), 0.25, seed=3, path_index=5)
        assert len(p.states) == 17 and p.states[0] == 0.25
        assert p.to_csv().startswith("# seed=3 path=5 alpha=")

    def test_path_index_consistency(self):
        grid = TimeGrid.uniform(0, 1, 8)
        batch = simulate_paths(const_alpha(0.3), grid, 0.0, 42, 10)
        single = simulate_path(const_alpha(0.3), grid, 0.0, 42, path_index=7)
        np.testing.assert_array_equal(batch[7], single.states)

    def test_brownian_variance(self):
        x = simulate_paths(const_alpha(0.5), TimeGrid.uniform(0, 1, 32), 0.0, 8, 10**4)
        assert np.var(x[:, -1]) == pytest.approx(1.0, abs=4 * math.sqrt(2 / 1e4))

    def test_reflected_path_stays_nonnegative(self):
        x = simulate_paths(const_alpha(1.0), TimeGrid.uniform(0, 1, 64), 0.0, 2, 500)
        assert x.min() >= 0

    def test_marginal_law_at_horizon(self):
        x = simulate_paths(const_alpha(0.6), TimeGrid.uniform(0, 1, 64), 0.0, 13, 10**4)
        k = SkewStepKernel(0.6, 1.0)
        assert stats.kstest(x[:, -1], lambda y: step_cdf_const(k, y)).statistic < 0.02

    def test_piecewise_refinement_converges(self):
        """Coupled paths under step approximations of a continuous alpha approach the fine solution."""
        grid = TimeGrid.uniform(0, 1, 64)
        cont = lambda t: 0.15 + 0.7 * t  # noqa: E731

        def approx(n):
            pts = tuple(np.linspace(0, 1, n + 1))
            mids = [cont(0.5 * (a + b)) for a, b in zip(pts, pts[1:])]
            return PiecewiseConstantFn(TimeGrid(pts), tuple(mids), (0.0, 1.0))

        ref = simulate_paths(approx(64), grid, 0.0, 77, 4000)
        errs = [np.mean(np.max(np.abs(simulate_paths(approx(n), grid, 0.0, 77, 4000) - ref), axis=1)) for n in (2, 4, 8, 16)]
        assert all(b < a for a, b in zip(errs, errs[1:])), errs


class TestLocalTime:
    def test_far_from_zero(self):
        grid = TimeGrid.uniform(0, 1, 128)
        path = SbmPath(grid, np.full(len(grid), 3.0))
        assert local_time_estimate(path, 0.1) == 0.0

    def test_needs_fine_grid(self):
        grid = TimeGrid.uniform(0, 1, 10)
        with pytest.raises(DomainError):
            local_time_estimate(SbmPath(grid, np.zeros(11)), 0.1)

    def test_bounded_by_time_on_average(self):
        grid = TimeGrid.uniform(0, 1, 512)
        x = simulate_paths(const_alpha(0.5), grid, 0.0, 21, 400)
        est = [local_time_estimate(SbmPath(grid, row), 0.05) for row in x]
        assert np.mean(est) <= 1.0

    def test_reflected_mean(self):
        grid = TimeGrid.uniform(0, 1, 512)
        x = simulate_paths(const_alpha(1.0), grid, 0.0, 22, 1000)
        est = np.mean([local_time_estimate(SbmPath(grid, row), 0.05) for row in x])
        assert est == pytest.approx(math.sqrt(2 / math.pi), rel=0.2)
