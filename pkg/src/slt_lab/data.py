"""Synthetic benchmarks: a shifted ReLU regression and the onion-slice classifier."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .io import atomic_write_text

ONION_BOUNDARIES = (0.2, 0.5, 0.7)


@dataclass
class Dataset:
    inputs: np.ndarray  # (n0, N)
    targets: np.ndarray  # (n_out, N) floats or (N,) integer labels
    kind: str = "regression"
    num_classes: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.inputs.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    def subset(self, idx) -> "Dataset":
        targets = self.targets[idx] if self.is_classification else self.targets[:, idx]
        return Dataset(self.inputs[:, idx], targets, self.kind, self.num_classes, dict(self.meta))


def gen_shifted_relu(n=10_000, shift=0.5, noise_sd=0.01, seed=0) -> Dataset:
    """x ~ U[-1, 1], y = max(0, x + shift) + N(0, noise_sd^2)."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(1, n))
    y = shifted_relu(x, shift)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=y.shape)
    meta = {"generator": "shifted_relu", "n": n, "shift": shift, "noise_sd": noise_sd, "seed": seed}
    return Dataset(x, y, "regression", None, meta)


def shifted_relu(x, shift=0.5):
    return np.maximum(np.asarray(x, dtype=float) + shift, 0.0)


def onion_value(x1, x2):
    return 0.5 * (np.asarray(x1) - 0.3) ** 2 + 1.2 * (np.asarray(x2) + 0.5) ** 2


def onion_class(value):
    """Bin index with lower-inclusive half-open bins."""
    return np.searchsorted(np.asarray(ONION_BOUNDARIES), value, side="right")


def gen_onion(n=10_000, flip_prob=0.01, seed=0) -> Dataset:
    """Elliptic rings labelled by ring index; labels flipped to a neighbour w.p. ``flip_prob``."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(2, n))
    labels = onion_class(onion_value(x[0], x[1]))
    num_classes = len(ONION_BOUNDARIES) + 1
    flips = rng.random(n) < flip_prob
    step = np.where(rng.random(n) < 0.5, -1, 1)
    # at the outer classes the only neighbour is inward
    step = np.where(labels == 0, 1, np.where(labels == num_classes - 1, -1, step))
    labels = np.where(flips, labels + step, labels)
    meta = {"generator": "onion", "n": n, "flip_prob": flip_prob, "seed": seed, "flips": int(flips.sum())}
    return Dataset(x, labels.astype(int), "classification", num_classes, meta)


def split(ds: Dataset, test_fraction=0.2, seed=0) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(ds)
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"cannot split {n} samples with test fraction {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    train, test = ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))
    for part, name in ((train, "train"), (test, "test")):
        part.meta.update(split=name, test_fraction=test_fraction, split_seed=seed)
    return train, test


def make_dataset(name: str, **kw) -> Dataset:
    if name == "shifted_relu":
        return gen_shifted_relu(**kw)
    if name == "onion":
        return gen_onion(**kw)
    raise ValueError(f"unknown dataset {name!r}")


def save_dataset(ds: Dataset, path):
    """CSV with columns x0.., then y0.. or label; JSON sidecar holds the generator spec."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n0 = ds.inputs.shape[0]
    if ds.is_classification:
        writer.writerow([f"x{i}" for i in range(n0)] + ["label"])
        for col, lab in zip(ds.inputs.T, ds.targets):
            writer.writerow([repr(float(v)) for v in col] + [int(lab)])
    else:
        n_out = ds.targets.shape[0]
        writer.writerow([f"x{i}" for i in range(n0)] + [f"y{i}" for i in range(n_out)])
        for col, y in zip(ds.inputs.T, ds.targets.T):
            writer.writerow([repr(float(v)) for v in col] + [repr(float(v)) for v in y])
    atomic_write_text(path, buf.getvalue())
    sidecar = {"kind": ds.kind, "num_classes": ds.num_classes, "meta": ds.meta}
    atomic_write_text(os.fspath(path) + ".json", json.dumps(sidecar, indent=2, sort_keys=True))


def load_dataset(path) -> Dataset:
    with open(os.fspath(path) + ".json") as fh:
        sidecar = json.load(fh)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n0 = sum(1 for h in header if h.startswith("x"))
    arr = np.array([[float(v) for v in r] for r in body]).T
    x = arr[:n0]
    if sidecar["kind"] == "classification":
        targets = arr[n0].astype(int)
    else:
        targets = arr[n0:]
    return Dataset(x, targets, sidecar["kind"], sidecar["num_classes"], sidecar["meta"])
