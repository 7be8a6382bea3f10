"""Dense ReLU networks with masks, manual backprop and an SGD optimizer.

Samples are stored column-wise: a batch is an ``(n_0, B)`` array and every
layer is a single matrix product ``W @ x + b[:, None]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when arrays do not line up with a network's architecture."""


def relu(x):
    return np.maximum(x, 0.0)


@dataclass
class Network:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_linear: bool = False

    def __post_init__(self):
        self.widths = [int(n) for n in self.widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ShapeError(f"invalid architecture {self.widths}")
        if len(self.weights) != self.depth or len(self.biases) != self.depth:
            raise ShapeError("need one weight matrix and one bias vector per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            n_out, n_in = self.widths[l + 1], self.widths[l]
            if w.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ShapeError(
                    f"layer {l + 1}: got W{w.shape}, b{b.shape}, "
                    f"expected W({n_out}, {n_in}), b({n_out},)"
                )

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @classmethod
    def zeros(cls, widths, output_linear=False):
        ws = [np.zeros((widths[l + 1], widths[l])) for l in range(len(widths) - 1)]
        bs = [np.zeros(widths[l + 1]) for l in range(len(widths) - 1)]
        return cls(list(widths), ws, bs, output_linear)

    def copy(self) -> "Network":
        return Network(
            list(self.widths),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_linear,
        )

    def num_weights(self) -> int:
        return sum(w.size for w in self.weights)

    def num_params(self) -> int:
        return self.num_weights() + sum(b.size for b in self.biases)

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() for w in self.weights) and all(
            np.isfinite(b).all() for b in self.biases
        )

    def __call__(self, x, mask=None):
        return predict(self, x, mask)


@dataclass
class Mask:
    """Binary keep/prune indicator for every weight and bias of a network."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def ones(cls, net: Network) -> "Mask":
        return cls(
            [np.ones(w.shape, dtype=bool) for w in net.weights],
            [np.ones(b.shape, dtype=bool) for b in net.biases],
        )

    @classmethod
    def zeros(cls, net: Network) -> "Mask":
        return cls(
            [np.zeros(w.shape, dtype=bool) for w in net.weights],
            [np.zeros(b.shape, dtype=bool) for b in net.biases],
        )

    def copy(self) -> "Mask":
        return Mask([m.copy() for m in self.weights], [m.copy() for m in self.biases])

    def check(self, net: Network):
        if len(self.weights) != net.depth or len(self.biases) != net.depth:
            raise ShapeError("mask depth does not match network")
        for m, w in zip(self.weights, net.weights):
            if m.shape != w.shape:
                raise ShapeError(f"weight mask {m.shape} vs weights {w.shape}")
        for m, b in zip(self.biases, net.biases):
            if m.shape != b.shape:
                raise ShapeError(f"bias mask {m.shape} vs biases {b.shape}")

    def kept_weights(self) -> int:
        return int(sum(m.sum() for m in self.weights))

    def kept_params(self) -> int:
        return self.kept_weights() + int(sum(m.sum() for m in self.biases))

    def weight_sparsity(self) -> float:
        """Fraction of weights retained (biases not counted)."""
        total = sum(m.size for m in self.weights)
        return self.kept_weights() / total

    def param_sparsity(self) -> float:
        """Fraction of all parameters (weights and biases) retained."""
        total = sum(m.size for m in self.weights) + sum(m.size for m in self.biases)
        return self.kept_params() / total

    def __eq__(self, other):
        if not isinstance(other, Mask) or len(self.weights) != len(other.weights):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and all(
            np.array_equal(a, b) for a, b in zip(self.biases, other.biases)
        )


def apply_mask(net: Network, mask: Mask | None) -> Network:
    """Return a copy of ``net`` with pruned parameters overwritten by zero."""
    if mask is None:
        return net.copy()
    mask.check(net)
    return Network(
        list(net.widths),
        [w * m for w, m in zip(net.weights, mask.weights)],
        [b * m for b, m in zip(net.biases, mask.biases)],
        net.output_linear,
    )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    def activation(self, l: int) -> np.ndarray:
        """x^(l) with x^(0) the input batch."""
        return self.inputs if l == 0 else self.post[l - 1]


def _effective(net, mask):
    if mask is None:
        return net.weights, net.biases
    mask.check(net)
    ws = [w * m for w, m in zip(net.weights, mask.weights)]
    bs = [b * m for b, m in zip(net.biases, mask.biases)]
    return ws, bs


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != net.widths[0] or x.shape[1] < 1:
        raise ShapeError(f"batch of shape {x.shape} does not fit input width {net.widths[0]}")
    return x


def forward(net: Network, batch, mask: Mask | None = None) -> ForwardTrace:
    x = _as_batch(net, batch)
    ws, bs = _effective(net, mask)
    trace = ForwardTrace(x)
    for l, (w, b) in enumerate(zip(ws, bs)):
        h = w @ x + b[:, None]
        x = h if (net.output_linear and l == net.depth - 1) else relu(h)
        trace.pre.append(h)
        trace.post.append(x)
    return trace


def predict(net: Network, batch, mask: Mask | None = None) -> np.ndarray:
    x = _as_batch(net, batch)
    ws, bs = _effective(net, mask)
    last = net.depth - 1
    for l, (w, b) in enumerate(zip(ws, bs)):
        x = w @ x + b[:, None]
        if not (net.output_linear and l == last):
            x = relu(x)
    return x


def _deltas(net, ws, trace, loss_grad):
    """dL/dh^(l) for every layer, back-propagated through effective weights."""
    if len(trace.pre) != net.depth:
        raise ShapeError("trace depth does not match network")
    g = np.asarray(loss_grad, dtype=float)
    if g.shape != trace.output.shape:
        raise ShapeError(f"loss gradient {g.shape} vs output {trace.output.shape}")
    for l, h in enumerate(trace.pre):
        if h.shape[0] != net.widths[l + 1]:
            raise ShapeError("stale trace: layer widths changed")
    deltas = [None] * net.depth
    for l in range(net.depth - 1, -1, -1):
        if not (net.output_linear and l == net.depth - 1):
            g = g * (trace.pre[l] > 0)
        deltas[l] = g
        if l > 0:
            g = ws[l].T @ g
    return deltas


def backward_train(net: Network, trace: ForwardTrace, loss_grad, mask: Mask | None = None):
    """Gradients of the loss w.r.t. weights and biases.

    ``loss_grad`` is dL/d(output) with shape ``(n_L, B)``. Pruned entries get
    exactly zero gradient.
    """
    ws, _ = _effective(net, mask)
    deltas = _deltas(net, ws, trace, loss_grad)
    gw, gb = [], []
    for l, d in enumerate(deltas):
        w_grad = d @ trace.activation(l).T
        b_grad = d.sum(axis=1)
        if mask is not None:
            w_grad = w_grad * mask.weights[l]
            b_grad = b_grad * mask.biases[l]
        gw.append(w_grad)
        gb.append(b_grad)
    return gw, gb


def backward_scores(net: Network, trace: ForwardTrace, loss_grad, mask: Mask | None = None):
    """Straight-through popup-score gradients.

    For weight (l, i, j): dL/dh_i^(l) * w_ij * x_j^(l-1); for bias (l, i):
    dL/dh_i^(l) * b_i. Computed for every parameter whether pruned or not;
    the mask only enters through the forward pass and the back-propagated
    deltas.
    """
    ws, _ = _effective(net, mask)
    deltas = _deltas(net, ws, trace, loss_grad)
    sw, sb = [], []
    for l, d in enumerate(deltas):
        sw.append((d @ trace.activation(l).T) * net.weights[l])
        sb.append(d.sum(axis=1) * net.biases[l])
    return sw, sb


# losses return (value, dL/d(output)) with the mean taken over the batch


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax_xent(logits, labels):
    labels = np.asarray(labels, dtype=int)
    z = logits - logits.max(axis=0, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    n = logits.shape[1]
    cols = np.arange(n)
    loss = -float(logp[labels, cols].mean())
    grad = np.exp(logp)
    grad[labels, cols] -= 1.0
    return loss, grad / n


LOSSES = {"mse": mse_loss, "xent": softmax_xent}


@dataclass
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    total_steps: int | None = None
    batch_size: int = 32

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.schedule == "constant":
            return self.lr
        if self.total_steps is None:
            raise ValueError("cosine schedule needs total_steps")
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / self.total_steps))


class Sgd:
    """SGD with heavy-ball momentum and L2 weight decay, updating arrays in place."""

    def __init__(self, cfg: SgdConfig):
        self.cfg = cfg
        self.velocity: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], step: int):
        cfg = self.cfg
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        lr = cfg.lr_at(step)
        for p, g, v in zip(params, grads, self.velocity):
            v *= cfg.momentum
            v += g
            if cfg.weight_decay:
                v += cfg.weight_decay * p
            p -= lr * v
        return lr


# serialization


def _mask_to_lists(mask):
    return {
        "weights": [m.astype(int).tolist() for m in mask.weights],
        "biases": [m.astype(int).tolist() for m in mask.biases],
    }


def network_to_dict(net: Network, mask: Mask | None = None, scores=None, meta=None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "widths": list(net.widths),
        "output_linear": bool(net.output_linear),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    if mask is not None:
        doc["mask"] = _mask_to_lists(mask)
    if scores is not None:
        sw, sb = scores
        doc["scores"] = {"weights": [s.tolist() for s in sw], "biases": [s.tolist() for s in sb]}
    if meta is not None:
        doc["meta"] = meta
    return doc


def network_from_dict(doc: dict):
    """Inverse of :func:`network_to_dict`; returns ``(net, mask, scores, meta)``."""
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {version!r}")
    widths = doc["widths"]
    ws = [np.asarray(w, dtype=float).reshape(widths[l + 1], widths[l]) for l, w in enumerate(doc["weights"])]
    bs = [np.asarray(b, dtype=float).reshape(widths[l + 1]) for l, b in enumerate(doc["biases"])]
    net = Network(widths, ws, bs, bool(doc.get("output_linear", False)))
    mask = scores = None
    if "mask" in doc:
        mask = Mask(
            [np.asarray(m, dtype=bool).reshape(w.shape) for m, w in zip(doc["mask"]["weights"], ws)],
            [np.asarray(m, dtype=bool).reshape(b.shape) for m, b in zip(doc["mask"]["biases"], bs)],
        )
        mask.check(net)
    if "scores" in doc:
        scores = (
            [np.asarray(s, dtype=float).reshape(w.shape) for s, w in zip(doc["scores"]["weights"], ws)],
            [np.asarray(s, dtype=float).reshape(b.shape) for s, b in zip(doc["scores"]["biases"], bs)],
        )
    return net, mask, scores, doc.get("meta")


def save_network(path, net, mask=None, scores=None, meta=None):
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(network_to_dict(net, mask, scores, meta)))


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))
