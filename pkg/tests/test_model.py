import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfld import model, toys
from mfld.model import (Dataset, DimensionError, Loss, ProblemSpec, TanhGated, TanhLinear,
                        as_ensemble, energy_f, first_variation, model_predict, neuron_eval,
                        quadratic_feature, regularity, wasserstein_gradient)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        g[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestEnsemble:
    def test_promotes_single_particle(self):
        assert as_ensemble([1.0, 2.0]).shape == (1, 2)

    def test_rejects_three_dimensional_input(self):
        with pytest.raises(DimensionError):
            as_ensemble(np.zeros((2, 2, 2)))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            as_ensemble(np.zeros((0, 2)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            as_ensemble([[0.0], [np.nan]])


class TestNeurons:
    def test_tanh_value(self):
        assert neuron_eval(TanhLinear(2), [0.5, -1.0], [2.0, 1.0]) == pytest.approx(math.tanh(0.0))
        assert neuron_eval(TanhLinear(1), [0.3], [2.0]) == pytest.approx(math.tanh(0.6))

    def test_gated_value(self):
        v = neuron_eval(TanhGated(3), [2.0, 0.5, -0.5], [1.0, 0.2])
        assert v == pytest.approx(math.tanh(2.0 * math.tanh(0.5 - 0.1)))

    def test_feature_dim_mismatch(self):
        with pytest.raises(DimensionError):
            neuron_eval(TanhLinear(2), [1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(DimensionError):
            TanhGated(3).check_features(np.zeros((1, 3)))

    @pytest.mark.parametrize("neuron,p", [(TanhLinear(2), 2), (TanhGated(3), 2)])
    def test_grad_matches_finite_difference(self, neuron, p, rng):
        z = rng.standard_normal((5, p))
        w = rng.standard_normal(5)
        x = rng.standard_normal((4, neuron.dim))
        fd = central_diff(lambda t: neuron.value(t, z) @ w, x)
        np.testing.assert_allclose(neuron.grad(x, z, w), fd, rtol=1e-6, atol=1e-8)

    def test_tanh_bounds(self):
        z = np.array([[3.0, 4.0], [1.0, 0.0]])
        n = TanhLinear(2)
        assert n.grad_bound(z) == pytest.approx(5.0)
        assert n.hess_bound(z) == pytest.approx(model.TANH_D2_MAX * 25.0)
        assert model.TANH_D2_MAX == pytest.approx(max(abs(-2 * np.tanh(t) * (1 - np.tanh(t) ** 2))
                                                      for t in np.linspace(0, 3, 30001)), rel=1e-6)

    def test_gated_has_no_gradient_bound(self):
        assert math.isinf(TanhGated(3).grad_bound(np.ones((1, 2))))

    def test_quadratic_feature(self):
        q = quadratic_feature(0.5, 2)
        x = np.array([[1.0, 2.0]])
        assert q.value(x, np.zeros((3, 1)))[0].tolist() == [2.5, 2.5, 2.5]
        np.testing.assert_allclose(q.grad(x, np.zeros((3, 1)), np.ones(3)), 3 * x)


class TestLoss:
    @pytest.mark.parametrize("kind", ["squared", "logistic", "linear"])
    def test_derivative(self, kind):
        loss = Loss(kind)
        a = np.linspace(-2, 2, 9)
        y = np.where(np.arange(9) % 2, 1.0, -1.0)
        fd = (loss.value(a + 1e-6, y) - loss.value(a - 1e-6, y)) / 2e-6
        np.testing.assert_allclose(loss.deriv(a, y), fd, atol=1e-8)

    def test_smoothness_constants(self):
        assert Loss("squared").smoothness == 1.0
        assert Loss("logistic").smoothness == 0.25
        assert Loss("linear").smoothness == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Loss("hinge")

    def test_logistic_labels_validated(self):
        with pytest.raises(ValueError):
            ProblemSpec(TanhLinear(1), Loss("logistic"), Dataset([[1.0]], [0.5]), 1.0, 1.0)


class TestProblemSpec:
    @pytest.mark.parametrize("lam,lp", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_nonpositive_regularisation(self, lam, lp):
        with pytest.raises(ValueError):
            ProblemSpec(TanhLinear(1), Loss("squared"), Dataset([[1.0]], [0.5]), lam, lp)

    def test_replace(self, regression):
        s = regression.replace(lam=2.0)
        assert s.lam == 2.0 and s.lam_prime == regression.lam_prime

    def test_dataset_round_trip(self, tmp_path, classification):
        p = tmp_path / "d.csv"
        model.save_dataset(classification.data, p)
        back = model.load_dataset(p)
        np.testing.assert_array_equal(back.z, classification.data.z)
        np.testing.assert_array_equal(back.y, classification.data.y)
        assert p.read_text().splitlines()[0] == "z1,z2,y"

    def test_dataset_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((3, 1)), np.zeros(2))


class TestEvaluation:
    def test_predict_is_mean_of_neurons(self, regression):
        ens = np.array([[0.2], [-1.0], [0.7]])
        assert model_predict(regression, ens, [0.7]) == pytest.approx(np.mean(np.tanh(ens[:, 0] * 0.7)))

    def test_energy_by_hand(self, regression):
        ens = np.array([[0.5], [-0.25]])
        z, y = regression.data.z[:, 0], regression.data.y
        h = np.mean(np.tanh(np.outer(ens[:, 0], z)), axis=0)
        want = np.mean(0.5 * (h - y) ** 2) + regression.lam_prime * np.mean(ens[:, 0] ** 2)
        assert energy_f(regression, ens) == pytest.approx(want, rel=1e-14)

    def test_first_variation_by_hand(self, regression):
        ens = np.array([[0.5], [-0.25]])
        z, y = regression.data.z[:, 0], regression.data.y
        h = np.mean(np.tanh(np.outer(ens[:, 0], z)), axis=0)
        x = 0.9
        want = np.mean((h - y) * np.tanh(x * z)) + regression.lam_prime * x * x
        assert first_variation(regression, ens, [x]) == pytest.approx(want, rel=1e-14)

    def test_first_variation_is_directional_derivative(self, toy, rng):
        # d/de F((1-e) mu + e delta_x) at e=0 equals dF(mu)(x) - <dF(mu), mu>
        ens = rng.standard_normal((6, toy.dim))
        x = rng.standard_normal(toy.dim)
        m = 1000
        big = np.repeat(ens, m, axis=0)
        k = 6
        mixed = np.vstack([big, np.repeat(x[None], k, axis=0)])
        eps = k / mixed.shape[0]
        lhs = (energy_f(toy, mixed) - energy_f(toy, big)) / eps
        rhs = first_variation(toy, ens, x) - np.mean(first_variation(toy, ens, ens))
        assert lhs == pytest.approx(rhs, rel=2e-3, abs=2e-3)

    @given(arrays(np.float64, (5, 2), elements=finite), arrays(np.float64, (3, 2), elements=finite))
    def test_gradient_matches_finite_difference(self, ens, x):
        spec = toys.make_toy("classification")
        fd = central_diff(lambda t: first_variation(spec, ens, t), x)
        np.testing.assert_allclose(wasserstein_gradient(spec, ens, x), fd, rtol=1e-6, atol=1e-7)

    def test_drift_is_gradient_at_particles(self, toy, rng):
        ens = rng.standard_normal((7, toy.dim))
        np.testing.assert_allclose(model.drift(toy, ens), wasserstein_gradient(toy, ens, ens),
                                   rtol=1e-13)

    @given(arrays(np.float64, (6, 1), elements=finite), st.permutations(range(6)))
    def test_energy_is_permutation_invariant(self, ens, perm):
        spec = toys.make_toy("regression")
        assert energy_f(spec, ens[list(perm)]) == pytest.approx(energy_f(spec, ens), rel=1e-13)

    def test_batch_matches_single(self, regression, rng):
        xs = rng.standard_normal((4, 5, 1))
        want = [energy_f(regression, x) for x in xs]
        np.testing.assert_allclose(model.batch_energy(regression, xs), want, rtol=1e-13)

    def test_wrong_point_dimension(self, regression):
        with pytest.raises(DimensionError):
            first_variation(regression, [[0.0]], [[1.0, 2.0]])


class TestRegularity:
    def test_regression_surrogates(self, regression):
        reg = regularity(regression)
        gbar = 1.0 + 0.6
        assert reg.loss_deriv == pytest.approx(gbar)
        assert reg.m1 == pytest.approx(gbar * 2.0)
        assert reg.m2 == pytest.approx(gbar * model.TANH_D2_MAX * 4.0 + 1.0 * 4.0)
        assert reg.lam_prime_eff == regression.lam_prime

    def test_linear_toy_folds_feature_into_regulariser(self, linear):
        reg = regularity(linear)
        assert reg.lam_prime_eff == pytest.approx(linear.lam_prime + 0.5)
        assert reg.m1_eff == 0.0 and reg.m2_eff == 0.0
        assert linear.r_bound == math.inf

    def test_logistic_derivative_bound(self, classification):
        assert regularity(classification).loss_deriv == 1.0

    def test_toy_target(self, linear):
        g = toys.linear_toy_target(linear)
        assert g.var[0] == pytest.approx(linear.lam / (2 * (0.5 + linear.lam_prime)))

    def test_unknown_toy(self):
        with pytest.raises(ValueError):
            toys.make_toy("nope")
