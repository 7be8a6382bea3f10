import numpy as np
import pytest

from slt_lab.data import (
    ONION_BOUNDARIES, gen_onion, gen_shifted_relu, load_dataset, make_dataset, onion_class, onion_value,
    save_dataset, shifted_relu, split,
)


class TestShiftedRelu:
    def test_points(self):
        assert shifted_relu(-0.9) == 0.0
        assert shifted_relu(0.5) == 1.0

    def test_noiseless_mean(self):
        ds = gen_shifted_relu(n=10**6, noise_sd=0.0, seed=1)
        # int_{-1}^{1} relu(x + 0.5) dx / 2 = (1.5^2 / 2) / 2
        assert ds.targets.mean() == pytest.approx(0.5625, abs=3e-3)
        np.testing.assert_array_equal(ds.targets, shifted_relu(ds.inputs))

    def test_range_and_noise(self):
        ds = gen_shifted_relu(n=20000, seed=2)
        assert ds.inputs.min() >= -1 and ds.inputs.max() <= 1
        resid = ds.targets - shifted_relu(ds.inputs)
        assert resid.std() == pytest.approx(0.01, rel=0.05)

    def test_invalid(self):
        with pytest.raises(ValueError):
            gen_shifted_relu(n=0)


class TestOnion:
    def test_points(self):
        assert onion_value(0.3, -0.5) == 0.0 and onion_class(0.0) == 0
        assert onion_value(1.0, -0.5) == pytest.approx(0.245)
        assert onion_class(onion_value(1.0, -0.5)) == 1

    def test_bins_partition(self):
        assert [int(onion_class(v)) for v in (0.0, 0.2, 0.49, 0.5, 0.7, 5.0)] == [0, 1, 1, 2, 3, 3]
        assert ONION_BOUNDARIES == (0.2, 0.5, 0.7)

    def test_noiseless_labels_are_a_function(self):
        a = gen_onion(n=5000, flip_prob=0.0, seed=1)
        b = gen_onion(n=5000, flip_prob=0.0, seed=2)
        for ds in (a, b):
            np.testing.assert_array_equal(ds.targets, onion_class(onion_value(ds.inputs[0], ds.inputs[1])))

    def test_flip_rate(self):
        n = 10**6
        ds = gen_onion(n=n, flip_prob=0.01, seed=3)
        clean = onion_class(onion_value(ds.inputs[0], ds.inputs[1]))
        changed = ds.targets != clean
        se = np.sqrt(0.01 * 0.99 / n)
        assert abs(changed.mean() - 0.01) <= 3 * se
        assert np.all(np.abs(ds.targets - clean)[changed] == 1)
        assert ds.targets.min() >= 0 and ds.targets.max() <= 3


class TestSplit:
    def test_sizes(self):
        ds = gen_shifted_relu(n=10, seed=0)
        tr, te = split(ds, 0.2, seed=0)
        assert (len(tr), len(te)) == (8, 2)
        merged = np.sort(np.concatenate([tr.inputs[0], te.inputs[0]]))
        np.testing.assert_array_equal(merged, np.sort(ds.inputs[0]))

    def test_seeded(self):
        ds = gen_onion(n=100, seed=0)
        a, _ = split(ds, 0.3, seed=5)
        b, _ = split(ds, 0.3, seed=5)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    @pytest.mark.parametrize("frac", [0.0, 1.0, 0.01])
    def test_degenerate(self, frac):
        with pytest.raises(ValueError):
            split(gen_shifted_relu(n=10), frac)


def test_csv_round_trip(tmp_path):
    for ds in (gen_shifted_relu(n=50, seed=1), gen_onion(n=50, seed=1)):
        path = tmp_path / f"{ds.kind}.csv"
        save_dataset(ds, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.targets, ds.targets)
        assert back.meta == ds.meta and back.kind == ds.kind


def test_make_dataset_unknown():
    with pytest.raises(ValueError):
        make_dataset("mnist")
