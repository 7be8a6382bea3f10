import json

import numpy as np
import pytest

from conftest import random_mask, random_net
from slt_lab.nn import (
    FORMAT_VERSION, Mask, Network, Sgd, SgdConfig, ShapeError, apply_mask, backward_scores, backward_train,
    forward, load_network, mse_loss, network_from_dict, network_to_dict, predict, save_network, softmax_xent,
)


def one_layer(w, b):
    return Network([1, 1], [np.array([[w]], dtype=float)], [np.array([b], dtype=float)])


class TestForward:
    def test_hand_case(self):
        tr = forward(one_layer(2, 1), np.array([[3.0]]))
        assert tr.pre[0][0, 0] == 7
        assert tr.output[0, 0] == 7

    def test_bias_masked(self):
        net = one_layer(2, 1)
        mask = Mask([np.ones((1, 1), bool)], [np.zeros(1, bool)])
        assert forward(net, np.array([[3.0]]), mask).output[0, 0] == 6

    def test_all_ones_mask_matches_unmasked(self, rng):
        for _ in range(100):
            widths = list(rng.integers(1, 12, size=5))
            net = random_net(rng, widths, output_linear=bool(rng.integers(2)))
            x = rng.uniform(-1, 1, size=(widths[0], 7))
            np.testing.assert_array_equal(predict(net, x, Mask.ones(net)), predict(net, x))

    def test_masked_equals_zeroed(self, rng):
        for _ in range(20):
            widths = list(rng.integers(1, 12, size=4))
            net = random_net(rng, widths)
            mask = random_mask(rng, net)
            x = rng.uniform(-1, 1, size=(widths[0], 5))
            np.testing.assert_array_equal(predict(net, x, mask), predict(apply_mask(net, mask), x))

    def test_relu_output_nonnegative(self, rng):
        net = random_net(rng, [3, 8, 4])
        tr = forward(net, rng.normal(size=(3, 10)))
        for h, x in zip(tr.pre, tr.post):
            np.testing.assert_array_equal(x, np.maximum(h, 0))

    def test_positive_homogeneity(self, rng):
        net = random_net(rng, [4, 3], bias=False)
        x = rng.normal(size=(4, 6))
        scaled = Network(net.widths, [2.5 * net.weights[0]], net.biases)
        np.testing.assert_allclose(predict(scaled, x), 2.5 * predict(net, x), rtol=1e-12, atol=1e-14)

    def test_shape_errors(self, rng):
        net = random_net(rng, [3, 2])
        with pytest.raises(ShapeError):
            predict(net, np.zeros((4, 2)))
        with pytest.raises(ShapeError):
            Network([3, 2], [np.zeros((3, 2))], [np.zeros(2)])
        with pytest.raises(ShapeError):
            predict(net, np.zeros((3, 1)), Mask([np.ones((2, 2), bool)], [np.ones(2, bool)]))

    def test_deterministic(self):
        a = random_net(np.random.default_rng(5), [3, 6, 2])
        b = random_net(np.random.default_rng(5), [3, 6, 2])
        x = np.linspace(-1, 1, 9).reshape(3, 3)
        assert predict(a, x).tobytes() == predict(b, x).tobytes()


def _loss(net, x, y, mask=None):
    return mse_loss(predict(net, x, mask), y)[0]


def finite_difference(net, x, y, mask=None, h=1e-5):
    gw, gb = [], []
    for arrs, out in ((net.weights, gw), (net.biases, gb)):
        for a in arrs:
            g = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                old = a[idx]
                a[idx] = old + h
                up = _loss(net, x, y, mask)
                a[idx] = old - h
                down = _loss(net, x, y, mask)
                a[idx] = old
                g[idx] = (up - down) / (2 * h)
            out.append(g)
    return gw, gb


class TestBackward:
    def test_scalar_hand_case(self):
        # L = (w x + b - y)^2 with a linear output
        net = Network([1, 1], [np.array([[0.5]])], [np.array([0.2])], output_linear=True)
        x, y = np.array([[3.0]]), np.array([[1.0]])
        tr = forward(net, x)
        _, g = mse_loss(tr.output, y)
        gw, gb = backward_train(net, tr, g)
        r = 0.5 * 3 + 0.2 - 1
        assert gw[0][0, 0] == pytest.approx(2 * r * 3)
        assert gb[0][0] == pytest.approx(2 * r)

    @pytest.mark.parametrize("depth", [1, 2, 3, 5])
    def test_finite_differences(self, rng, depth):
        widths = [3] + [int(rng.integers(2, 21)) for _ in range(depth - 1)] + [2]
        net = random_net(rng, widths, output_linear=True)
        mask = random_mask(rng, net, 0.8) if depth > 1 else None
        x = rng.uniform(-1, 1, size=(3, 4))
        y = rng.normal(size=(2, 4))
        tr = forward(net, x, mask)
        gw, gb = backward_train(net, tr, mse_loss(tr.output, y)[1], mask)
        fw, fb = finite_difference(net, x, y, mask)
        for a, b in zip(gw + gb, fw + fb):
            scale = max(np.abs(b).max(), 1e-3)
            assert np.abs(a - b).max() / scale <= 1e-4

    def test_pruned_gradient_is_zero(self, rng):
        net = random_net(rng, [3, 5, 2])
        mask = random_mask(rng, net, 0.5)
        x = rng.normal(size=(3, 8))
        tr = forward(net, x, mask)
        gw, gb = backward_train(net, tr, np.ones((2, 8)), mask)
        for g, m in zip(gw + gb, mask.weights + mask.biases):
            assert np.all(g[~m] == 0)

    def test_stale_trace(self, rng):
        net = random_net(rng, [3, 5, 2])
        tr = forward(net, rng.normal(size=(3, 4)))
        other = random_net(rng, [3, 6, 2])
        with pytest.raises(ShapeError):
            backward_train(other, tr, np.ones((2, 4)))

    def test_xent_gradient(self, rng):
        logits = rng.normal(size=(4, 5))
        labels = rng.integers(0, 4, size=5)
        _, g = softmax_xent(logits, labels)
        h = 1e-6
        for idx in np.ndindex(logits.shape):
            lp, lm = logits.copy(), logits.copy()
            lp[idx] += h
            lm[idx] -= h
            fd = (softmax_xent(lp, labels)[0] - softmax_xent(lm, labels)[0]) / (2 * h)
            assert g[idx] == pytest.approx(fd, abs=1e-7)


class TestScoreGradients:
    def test_single_neuron(self):
        net = Network([1, 1], [np.array([[0.5]])], [np.array([0.0])], output_linear=True)
        tr = forward(net, np.array([[3.0]]))
        sw, sb = backward_scores(net, tr, np.array([[2.0]]))
        assert sw[0][0, 0] == 3.0
        assert sb[0][0] == 0.0

    def test_equals_weight_gradient_times_weight(self, rng):
        # d/ds of L(w * m(s)) through the straight-through estimator is dL/dw_eff * w
        net = random_net(rng, [2, 4, 3, 1], output_linear=True)
        x = rng.normal(size=(2, 6))
        tr = forward(net, x)
        g = rng.normal(size=(1, 6))
        gw, gb = backward_train(net, tr, g)
        sw, sb = backward_scores(net, tr, g)
        for a, b, w in zip(sw, gw, net.weights):
            np.testing.assert_allclose(a, b * w, rtol=1e-12)
        for a, b, bias in zip(sb, gb, net.biases):
            np.testing.assert_allclose(a, b * bias, rtol=1e-12)

    def test_pruned_parameters_get_scores(self, rng):
        net = random_net(rng, [3, 4, 1], output_linear=True)
        mask = Mask([np.zeros((4, 3), bool), np.ones((1, 4), bool)], [np.ones(4, bool), np.ones(1, bool)])
        x = rng.normal(size=(3, 5))
        tr = forward(net, x, mask)
        sw, _ = backward_scores(net, tr, np.ones((1, 5)), mask)
        assert np.any(sw[0] != 0)


class TestSgd:
    def test_cosine_schedule(self):
        cfg = SgdConfig(lr=0.1, total_steps=100)
        assert cfg.lr_at(0) == pytest.approx(0.1)
        assert cfg.lr_at(50) == pytest.approx(0.05)
        assert cfg.lr_at(100) == pytest.approx(0.0)

    def test_plain_gradient_step(self):
        p = [np.array([1.0, 2.0])]
        Sgd(SgdConfig(lr=0.5, momentum=0.0, weight_decay=0.0, schedule="constant")).step(p, [np.array([1.0, -2.0])], 0)
        np.testing.assert_allclose(p[0], [0.5, 3.0])

    def test_momentum_and_decay(self):
        p = [np.array([1.0])]
        opt = Sgd(SgdConfig(lr=0.1, momentum=0.9, weight_decay=0.1, schedule="constant"))
        opt.step(p, [np.array([1.0])], 0)  # v = 1 + 0.1 = 1.1
        assert p[0][0] == pytest.approx(1 - 0.11)
        opt.step(p, [np.array([1.0])], 1)  # v = 0.99 + 1 + 0.089
        assert p[0][0] == pytest.approx(0.89 - 0.1 * (0.99 + 1 + 0.1 * 0.89))

    @pytest.mark.parametrize("kw", [{"lr": 0}, {"momentum": 1.0}, {"weight_decay": -1}, {"schedule": "step"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SgdConfig(**kw)


class TestSerialization:
    def test_round_trip(self, rng, tmp_path):
        net = random_net(rng, [3, 4, 2], output_linear=True)
        mask = random_mask(rng, net)
        scores = ([rng.normal(size=w.shape) for w in net.weights], [rng.normal(size=b.shape) for b in net.biases])
        path = tmp_path / "net.json"
        save_network(path, net, mask, scores, {"seed": 3})
        net2, mask2, scores2, meta = load_network(path)
        for a, b in zip(net.weights + net.biases, net2.weights + net2.biases):
            np.testing.assert_array_equal(a, b)
        assert mask2 == mask
        np.testing.assert_array_equal(scores2[0][1], scores[0][1])
        assert meta == {"seed": 3} and net2.output_linear

    def test_rejects_unknown_version(self, rng):
        doc = network_to_dict(random_net(rng, [2, 2]))
        doc["version"] = FORMAT_VERSION + 1
        with pytest.raises(ValueError):
            network_from_dict(json.loads(json.dumps(doc)))
