import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from mfld import toys
from mfld.diagnostics import (BoundCheck, EmpiricalSampler, GapReport, MomentMeasure,
                              ProximalGibbs, batch_energy_and_bregman, bregman, bregman_mc_bound,
                              bridge_residual, energy, linear_gibbs_target, mean_field_minimizer,
                              measure_moments, mfld_reference_pool, n_particle_gibbs_logdensity,
                              prop1_gap_check, prop2_inequality_check, proximal_gibbs_logdensity,
                              variance_bound_mc)
from mfld.gaussian import AnalyticGaussian, gaussian_entropy
from mfld.model import Dataset, Loss, ProblemSpec, TanhLinear, energy_f, first_variation

coords = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def objective(spec, g):
    """L(mu) = F(mu) + lam Ent(mu) for a Gaussian or a quadrature Gibbs measure."""
    ent = gaussian_entropy(g) if isinstance(g, AnalyticGaussian) else g.entropy()
    return energy(spec, g) + spec.lam * ent


class TestMoments:
    def test_ensemble(self, regression):
        ens = np.array([[0.1], [0.9]])
        pred, s = measure_moments(regression, ens)
        np.testing.assert_allclose(pred, np.mean(np.tanh(np.outer(ens[:, 0], regression.data.z[:, 0])), 0))
        assert s == pytest.approx(0.41)

    def test_gaussian_quadrature_against_monte_carlo(self, classification):
        g = AnalyticGaussian(np.array([0.3, -0.2]), np.array([0.5, 1.2]))
        pred, s = measure_moments(classification, g)
        x = g.sample(np.random.default_rng(0), 400_000)
        mc = np.mean(np.tanh(x @ classification.data.z.T), axis=0)
        np.testing.assert_allclose(pred, mc, atol=5e-3)
        assert s == pytest.approx(0.09 + 0.04 + 1.7)

    def test_quadratic_feature_closed_form(self, linear):
        pred, s = measure_moments(linear, AnalyticGaussian.isotropic(1, 0.7))
        assert s == pytest.approx(0.7) and pred[0] == pytest.approx(0.5 * 0.7)

    def test_moment_measure(self, regression):
        m = MomentMeasure(np.arange(4.0), 2.0)
        pred, s = measure_moments(regression, m)
        assert pred.tolist() == [0, 1, 2, 3] and s == 2.0
        with pytest.raises(ValueError):
            measure_moments(regression, MomentMeasure(np.zeros(3), 1.0))

    def test_dimension_checks(self, regression):
        with pytest.raises(ValueError):
            measure_moments(regression, AnalyticGaussian.isotropic(2, 1.0))
        with pytest.raises(ValueError):
            measure_moments(regression, np.zeros((3, 2)))


class TestBregman:
    def test_self_divergence_vanishes(self, toy, rng):
        ens = rng.standard_normal((5, toy.dim))
        assert bregman(toy, ens, ens) == 0.0

    @given(arrays(np.float64, (4, 1), elements=coords), arrays(np.float64, (6, 1), elements=coords))
    def test_squared_loss_closed_form(self, a, b):
        spec = toys.make_toy("regression")
        pa, _ = measure_moments(spec, a)
        pb, _ = measure_moments(spec, b)
        closed = np.mean((pa - pb) ** 2) / 2
        assert bregman(spec, a, b) == pytest.approx(closed, rel=1e-9, abs=1e-15)

    @given(arrays(np.float64, (4, 2), elements=coords), arrays(np.float64, (3, 2), elements=coords))
    def test_nonnegative_for_convex_loss(self, a, b):
        spec = toys.make_toy("classification")
        assert bregman(spec, a, b) >= -1e-12

    def test_linear_loss_is_zero(self, linear, rng):
        a, b = rng.standard_normal((4, 1)), rng.standard_normal((9, 1))
        assert bregman(linear, a, b) == pytest.approx(0.0, abs=1e-13)
        _, bb = batch_energy_and_bregman(linear, rng.standard_normal((3, 4, 1)), b)
        assert np.all(bb == 0.0)

    def test_batched_matches_single(self, classification, rng):
        xs = rng.standard_normal((6, 5, 2))
        mu = AnalyticGaussian.isotropic(2, 0.8)
        f, b = batch_energy_and_bregman(classification, xs, mu)
        np.testing.assert_allclose(f, [energy_f(classification, x) for x in xs], rtol=1e-13)
        np.testing.assert_allclose(b, [bregman(classification, x, mu) for x in xs], rtol=1e-9, atol=1e-15)


class TestProximalGibbs:
    def test_normalised_on_grid(self, toy):
        g = ProximalGibbs(toy, AnalyticGaussian.isotropic(toy.dim, 0.6))
        assert g.quadrature_residual() < 1e-9

    def test_unnormalised_log_density(self, regression, rng):
        base = rng.standard_normal((5, 1))
        x = rng.standard_normal((4, 1))
        want = -first_variation(regression, base, x) / regression.lam
        np.testing.assert_allclose(proximal_gibbs_logdensity(regression, base, x), want, rtol=1e-13)

    def test_normalised_density_integrates_to_one(self, regression):
        base = np.array([[0.4], [-0.3]])
        x = np.linspace(-12, 12, 40001)[:, None]
        p = np.exp(proximal_gibbs_logdensity(regression, base, x, normalized=True))
        assert np.trapezoid(p, x[:, 0]) == pytest.approx(1.0, abs=1e-9)

    def test_quadratic_feature_is_gaussian(self, linear):
        g = linear_gibbs_target(linear)
        assert g.gaussian.var[0] == pytest.approx(linear.lam / (2 * (0.5 + linear.lam_prime)))
        assert g.log_partition == pytest.approx(0.5 * math.log(2 * math.pi * g.gaussian.var[0]))

    def test_rejection_sampler_matches_density(self, regression):
        g = ProximalGibbs(regression, AnalyticGaussian.isotropic(1, 0.5))
        x = g.sample(np.random.default_rng(0), 20_000)[:, 0]
        grid = np.linspace(-10, 10, 200_001)
        cdf = np.cumsum(np.exp(g.logpdf(grid[:, None]))) * (grid[1] - grid[0])
        res = stats.kstest(x, lambda t: np.interp(t, grid, cdf))
        assert res.pvalue > 1e-3

    def test_requires_low_dimension(self):
        spec = ProblemSpec(TanhLinear(3), Loss("squared"), Dataset(np.eye(3), np.zeros(3)), 1.0, 1.0)
        with pytest.raises(ValueError):
            ProximalGibbs(spec, np.zeros((1, 3)))
        with pytest.raises(ValueError):
            proximal_gibbs_logdensity(spec, np.zeros((1, 3)), np.zeros(3), normalized=True)
        # the unnormalised density is still available
        assert np.isfinite(proximal_gibbs_logdensity(spec, np.zeros((1, 3)), np.zeros(3)))


class TestMinimiser:
    def test_fixed_point(self, toy):
        g = mean_field_minimizer(toy)
        pred, _ = measure_moments(toy, g)
        again, _ = measure_moments(toy, ProximalGibbs(toy, g))
        np.testing.assert_allclose(again, pred, atol=1e-10)

    def test_beats_nearby_measures(self, regression):
        g = mean_field_minimizer(regression)
        best = objective(regression, g)
        for var in (0.5, 1.0, 2.0):
            assert objective(regression, AnalyticGaussian.isotropic(1, var)) > best
        # proximal Gibbs of other bases are also worse
        other = ProximalGibbs(regression, AnalyticGaussian.isotropic(1, 3.0))
        assert objective(regression, other) > best

    def test_entropy_sandwich(self, regression):
        # lam KL(mu || mu*) <= L(mu) - L(mu*), checked for a Gaussian mu on the grid
        g = mean_field_minimizer(regression)
        mu = AnalyticGaussian.isotropic(1, 0.8, mean=0.3)
        x = np.linspace(-15, 15, 200_001)[:, None]
        p = np.exp(mu.logpdf(x))
        kl = np.trapezoid(p * (mu.logpdf(x) - g.logpdf(x)), x[:, 0])
        assert regression.lam * kl <= objective(regression, mu) - objective(regression, g) + 1e-9

    def test_damping_validated(self, regression):
        with pytest.raises(ValueError):
            mean_field_minimizer(regression, damping=1.0)


class TestBridge:
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_residual_vanishes(self, n, seed):
        rng = np.random.default_rng(seed)
        for name in toys.TOYS:
            spec = toys.make_toy(name)
            mu = rng.standard_normal((4, spec.dim))
            probes = [rng.normal(0, 1.5, (n, spec.dim)) for _ in range(3)]
            assert bridge_residual(spec, mu, probes) < 1e-9

    def test_probe_validation(self, regression):
        with pytest.raises(ValueError):
            bridge_residual(regression, np.zeros((1, 1)), [np.zeros((2, 1))])
        with pytest.raises(ValueError):
            bridge_residual(regression, np.zeros((1, 1)), [np.zeros((2, 1)), np.zeros((3, 1))])

    def test_n_particle_log_density(self, classification, rng):
        ens = rng.standard_normal((5, 2))
        assert n_particle_gibbs_logdensity(classification, ens) == pytest.approx(
            -5 / classification.lam * energy_f(classification, ens))


class TestGapIdentities:
    def test_linear_closed_form(self, linear):
        rho, mu = AnalyticGaussian.isotropic(1, 0.8, 0.3), AnalyticGaussian.isotropic(1, 0.6)
        to_mu, to_gibbs = prop1_gap_check(linear, rho, mu, 5, 100, closed_form=True)
        assert abs(to_mu.residual) < 1e-12 and abs(to_gibbs.residual) < 1e-12
        assert to_mu.mc_standard_error == 0.0

    @pytest.mark.parametrize("name", toys.TOYS)
    def test_monte_carlo_within_error(self, name):
        spec = toys.make_toy(name)
        rho = AnalyticGaussian.isotropic(spec.dim, 0.8, 0.3)
        mu = AnalyticGaussian.isotropic(spec.dim, 0.6, -0.2)
        for rep in prop1_gap_check(spec, rho, mu, 4, 20_000, seed=1):
            assert rep.within(4.0)

    def test_preconditions(self, regression):
        g = AnalyticGaussian.isotropic(1, 1.0)
        with pytest.raises(ValueError):
            prop1_gap_check(regression, g, g, 4, 100, closed_form=True)

    def test_report_residual(self):
        r = GapReport("x", 1.0, {"a": 0.4, "b": 0.5}, 0.05)
        assert r.residual == pytest.approx(0.1) and not r.within(1.0) and r.within(2.0)


class TestMonteCarloBounds:
    def test_variance_bound(self, regression):
        g = mean_field_minimizer(regression)
        for n in (4, 64):
            chk = variance_bound_mc(regression, g, n, regression.data.z[0], 20_000, seed=n, reference=g)
            assert chk.passed and chk.bound == pytest.approx(1.0 / n)

    def test_bregman_gap_matches_variance_oracle(self, regression):
        # for the squared loss N E[B] = (1/2n) sum_j Var_mu h(X, z_j) for every N
        g = mean_field_minimizer(regression)
        pts, q, _ = g._require_grid()
        h = np.tanh(pts @ regression.data.z.T)
        var = q @ h ** 2 - (q @ h) ** 2
        oracle = var.sum() / (2 * regression.data.n)
        for n in (2, 32):
            chk = bregman_mc_bound(regression, g, n, 20_000, g, seed=n)
            assert abs(chk.estimate - oracle) < 4 * chk.stderr
            assert chk.passed

    def test_trials_minimum(self, regression):
        g = AnalyticGaussian.isotropic(1, 1.0)
        with pytest.raises(ValueError):
            bregman_mc_bound(regression, EmpiricalSampler(np.zeros((3, 1))), 4, 10, g)

    def test_bound_check(self):
        assert BoundCheck("b", 1.1, 0.05, 1.0).passed
        assert not BoundCheck("b", 1.2, 0.05, 1.0).passed

    def test_prop2_linear_degenerates(self, linear):
        g = linear_gibbs_target(linear)
        stack = g.sample(np.random.default_rng(0), (100, 3))
        r = prop2_inequality_check(linear, g, stack, 100)
        assert r.estimate == 0.0 and r.passed

    def test_prop2_needs_stack(self, regression):
        with pytest.raises(ValueError):
            prop2_inequality_check(regression, np.zeros((1, 1)), np.zeros((10, 3, 1)), 100)

    def test_reference_pool(self, regression):
        pool = mfld_reference_pool(regression, 0.05, 40, n_ref=64, every=10)
        assert pool.shape == (64 * 3, 1)
