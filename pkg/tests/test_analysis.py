import math

import numpy as np
import pytest

from conftest import random_net
from slt_lab.analysis import (
    adaptive_simpson, counterexample_const, counterexample_exp, factorize_recursive, factorize_univariate,
    predict_signal_moment, relu_fit_loss, scheme_stds, verify_signal_moment,
)
from slt_lab.init import InitSpec, init_network
from slt_lab.nn import Network, predict


class TestFactorization:
    def test_one_layer(self):
        net = Network([1, 2], [np.array([[2.0], [-3.0]])], [np.zeros(2)])
        for f in (factorize_univariate(net), factorize_recursive(net)):
            assert f.w_plus.tolist() == [2.0, 0.0]
            assert f.w_minus.tolist() == [0.0, 3.0]

    def test_identity_net(self):
        net = Network([1, 2, 1], [np.array([[1.0], [-1.0]]), np.array([[1.0, -1.0]])], [np.zeros(2), np.zeros(1)], True)
        for f in (factorize_univariate(net), factorize_recursive(net)):
            assert f.w_plus.tolist() == [1.0]
            assert f.w_minus.tolist() == [-1.0]

    def test_random_depth5(self, rng):
        grid = np.linspace(-1, 1, 1001)
        for _ in range(50):
            widths = [1] + list(rng.integers(1, 20, size=4)) + [3]
            net = random_net(rng, widths, output_linear=bool(rng.integers(2)), bias=False)
            fa, fb = factorize_univariate(net), factorize_recursive(net)
            assert np.abs(predict(net, grid[None]) - fa(grid)).max() <= 1e-9
            np.testing.assert_allclose(fa.w_plus, fb.w_plus, atol=1e-12)
            np.testing.assert_allclose(fa.w_minus, fb.w_minus, atol=1e-12)

    def test_rejects_bias_and_wide_input(self, rng):
        with pytest.raises(ValueError):
            factorize_univariate(random_net(rng, [1, 3, 1]))
        with pytest.raises(ValueError):
            factorize_recursive(random_net(rng, [2, 3, 1], bias=False))


class TestQuadrature:
    def test_polynomial_and_exp(self):
        assert adaptive_simpson(lambda x: x**3 - x, -1, 2) == pytest.approx(2.25, abs=1e-12)
        assert adaptive_simpson(math.exp, -1, 1) == pytest.approx(math.e - 1 / math.e, abs=1e-10)


class TestCounterexamples:
    def test_constant(self):
        r = counterexample_const()
        assert (r.w_plus, r.w_minus, r.loss) == (0.75, 0.75, 0.125)
        assert abs(r.numeric_w_plus - 0.75) <= 1e-6 and abs(r.numeric_w_minus - 0.75) <= 1e-6
        assert abs(r.numeric_loss - 0.125) <= 1e-6 and abs(r.quadrature_loss - 0.125) <= 1e-9

    def test_biased_neuron_represents_constant(self):
        net = Network([1, 1], [np.zeros((1, 1))], [np.array([0.5])])
        x = np.linspace(-1, 1, 101)[None]
        assert adaptive_simpson(lambda t: (0.5 - predict(net, np.array([[t]]))[0, 0]) ** 2, -1, 1) == 0.0
        np.testing.assert_array_equal(predict(net, x), 0.5)

    def test_exp_minimizer(self):
        r = counterexample_exp()
        assert r.w_plus == 3.0
        assert r.w_minus == pytest.approx(-3 * (2 / math.e - 1))
        assert abs(r.numeric_w_plus - 3.0) <= 1e-6 and abs(r.numeric_w_minus - r.w_minus) <= 1e-6

    def test_exp_loss_matches_quadrature(self):
        r = counterexample_exp()
        assert abs(r.quadrature_loss - r.loss) <= 1e-6
        assert abs(r.numeric_loss - r.loss) <= 1e-6

    def test_exp_local_minimum(self):
        r = counterexample_exp(numeric=False)
        for d in (-0.1, 0.1):
            assert relu_fit_loss(math.exp, r.w_plus + d, r.w_minus) > r.loss
            assert relu_fit_loss(math.exp, r.w_plus, r.w_minus + d) > r.loss


class TestMomentFormula:
    def test_no_bias(self):
        sw = [0.3, 0.5, 0.2]
        got = predict_signal_moment([4, 10, 20, 5], sw, [0, 0, 0], 2.0)
        assert got == pytest.approx(2.0 * (10 * 0.09 / 2) * (20 * 0.25 / 2) * (5 * 0.04 / 2))

    def test_he_scales(self):
        widths = [7, 50, 50, 50]
        sw = np.sqrt(2 / np.array(widths[1:]))
        got = predict_signal_moment(widths, sw, np.cumprod(sw), 3.0)
        assert got == pytest.approx(3.0 + 1 + 2 / 50 + (2 / 50) ** 2)

    def test_plug_in(self):
        assert predict_signal_moment([3, 2], [1.0], [1.0], 1.0) == pytest.approx(2.0)

    def test_orthovar_and_linear_output(self):
        assert predict_signal_moment([3, 4, 6], [1, 1], [0.5, 0.2], 1.5, orthovar=True) == pytest.approx(
            1.5 + 0.25 * 2 + 0.04 * 3
        )
        lin = predict_signal_moment([3, 2], [1.0], [1.0], 1.0, relu_output=False)
        assert lin == pytest.approx(4.0)

    def test_uniform_stds(self):
        w, b = scheme_stds([3, 6, 6], InitSpec("uniform", sigma_w=[0.9, 0.3]))
        np.testing.assert_allclose(w, np.array([0.9, 0.3]) / np.sqrt(3))
        np.testing.assert_allclose(b, np.array([0.9, 0.27]) / np.sqrt(3))


class TestMonteCarlo:
    x0 = np.random.default_rng(0).uniform(-1, 1, size=20)

    @pytest.mark.parametrize("scheme", ["uniform", "normal", "looks_linear"])
    def test_within_three_se(self, scheme):
        r = verify_signal_moment([20, 20, 20, 20], InitSpec(scheme, seed=5), self.x0, 20_000)
        assert r.z <= 3
        assert r.trials == 20_000

    def test_linear_output(self):
        r = verify_signal_moment([20, 20, 20, 4], InitSpec("normal", seed=6), self.x0, 20_000, output_linear=True)
        assert r.z <= 3 and r.convention == "linear-output"

    def test_zero_input_zero_bias(self):
        r = verify_signal_moment([5, 8, 8], InitSpec("normal", zero_bias=True), np.zeros(5), 1000)
        assert r.predicted == 0 and r.empirical == 0

    def test_looks_linear_zero_bias_exact(self):
        x0 = self.x0[:10]
        r = verify_signal_moment([10, 20, 20, 20], InitSpec("looks_linear", zero_bias=True, seed=1), x0, 2000)
        assert r.empirical == pytest.approx(x0 @ x0, rel=1e-10)
        assert r.stderr <= 1e-10 * r.empirical

    def test_chunking_is_irrelevant_to_order(self):
        a = verify_signal_moment([5, 8, 8], InitSpec("normal", seed=2), np.ones(5), 3000, chunk=1000)
        b = verify_signal_moment([5, 8, 8], InitSpec("normal", seed=2), np.ones(5), 3000, chunk=1000)
        assert a.empirical == b.empirical
