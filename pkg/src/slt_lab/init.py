"""Nonzero-bias initialization schemes: uniform, normal and looks-linear.

Bias scales are never stored; they are the running products of the weight
scales, ``sigma_b[l] = prod(sigma_w[:l + 1])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Network

SCHEMES = ("uniform", "normal", "looks_linear")


class InitConfigError(ValueError):
    pass


@dataclass
class InitSpec:
    scheme: str = "normal"
    sigma_w: list[float] | None = None
    zero_bias: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InitConfigError(f"unknown scheme {self.scheme!r}")
        if self.sigma_w is not None:
            self.sigma_w = [float(s) for s in self.sigma_w]
            if any(not s > 0 for s in self.sigma_w):
                raise InitConfigError("weight scales must be positive")

    def weight_scales(self, widths) -> np.ndarray:
        L = len(widths) - 1
        if self.sigma_w is None:
            return default_weight_scales(widths, self.scheme)
        if len(self.sigma_w) != L:
            raise InitConfigError(f"need {L} weight scales, got {len(self.sigma_w)}")
        return np.asarray(self.sigma_w, dtype=float)

    def bias_scales(self, widths) -> np.ndarray:
        return np.cumprod(self.weight_scales(widths))


def default_weight_scales(widths, scheme="normal") -> np.ndarray:
    """He-style scales giving weight variance 2/n_l.

    For the uniform scheme the scale is the half-width of U[-s, s], so it is
    sqrt(3) larger than the standard deviation.
    """
    n = np.asarray(widths[1:], dtype=float)
    s = np.sqrt(2.0 / n)
    return s * math.sqrt(3.0) if scheme == "uniform" else s


def layer_rng(seed: int, layer: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, layer, stream); order of calls is irrelevant."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(layer), int(stream)])


def weight_std(scheme: str, scale: float) -> float:
    return scale / math.sqrt(3.0) if scheme == "uniform" else scale


def _draw(scheme, rng, shape, scale):
    if scheme == "uniform":
        return rng.uniform(-1.0, 1.0, size=shape) * scale
    return rng.standard_normal(shape) * scale


def orthogonal(rng, rows: int, cols: int, batch=()) -> np.ndarray:
    """Haar-distributed matrix with orthonormal rows or columns.

    QR of a Gaussian matrix with the signs of diag(R) folded into Q.
    """
    tall = rows >= cols
    m, k = (rows, cols) if tall else (cols, rows)
    a = rng.standard_normal(tuple(batch) + (m, k))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    q = q * d[..., None, :]
    return q if tall else np.swapaxes(q, -1, -2)


def _looks_linear_layer(rng, n_in, n_out, l, L, output_linear, scale, bias_scale, zero_bias, batch=()):
    first = l == 0
    readout = output_linear and l == L - 1
    if not readout and n_out % 2:
        raise InitConfigError(f"looks-linear needs an even width for layer {l + 1}, got {n_out}")
    if not first and n_in % 2:
        raise InitConfigError(f"looks-linear needs an even width for layer {l}, got {n_in}")
    rows = n_out if readout else n_out // 2
    cols = n_in if first else n_in // 2
    # entries of an orthonormal rows x cols matrix have variance 1/max(rows, cols)
    w0 = orthogonal(rng, rows, cols, batch) * (scale * math.sqrt(max(rows, cols)))
    if zero_bias:
        b0 = np.zeros(tuple(batch) + (rows,))
    else:
        b0 = rng.standard_normal(tuple(batch) + (rows,)) * bias_scale
    if readout and first:
        return w0, b0
    if readout:
        return np.concatenate([w0, -w0], axis=-1), b0
    if first:
        return np.concatenate([w0, -w0], axis=-2), np.concatenate([b0, -b0], axis=-1)
    top = np.concatenate([w0, -w0], axis=-1)
    return np.concatenate([top, -top], axis=-2), np.concatenate([b0, -b0], axis=-1)


def sample_layers(widths, spec: InitSpec, output_linear=False, batch=(), rngs=None):
    """Draw all layers; with ``batch`` every array gets that leading shape.

    ``rngs`` overrides the per-layer generators (used for Monte Carlo batches).
    """
    L = len(widths) - 1
    sw = spec.weight_scales(widths)
    sb = np.cumprod(sw)
    if rngs is None:
        rngs = [layer_rng(spec.seed, l) for l in range(L)]
    weights, biases = [], []
    for l in range(L):
        n_in, n_out = widths[l], widths[l + 1]
        rng = rngs[l]
        if spec.scheme == "looks_linear":
            w, b = _looks_linear_layer(
                rng, n_in, n_out, l, L, output_linear, sw[l], sb[l], spec.zero_bias, batch
            )
        else:
            w = _draw(spec.scheme, rng, tuple(batch) + (n_out, n_in), sw[l])
            if spec.zero_bias:
                b = np.zeros(tuple(batch) + (n_out,))
            else:
                b = _draw(spec.scheme, rng, tuple(batch) + (n_out,), sb[l])
        weights.append(w)
        biases.append(b)
    return weights, biases


def _build(widths, spec, output_linear, scheme):
    if spec.scheme != scheme:
        raise InitConfigError(f"spec scheme is {spec.scheme!r}, expected {scheme!r}")
    ws, bs = sample_layers(widths, spec, output_linear)
    return Network(list(widths), ws, bs, output_linear)


def init_uniform(widths, spec: InitSpec, output_linear=False) -> Network:
    """w ~ U[-s_l, s_l], b ~ U[-prod s, prod s]."""
    return _build(widths, spec, output_linear, "uniform")


def init_normal(widths, spec: InitSpec, output_linear=False) -> Network:
    """w ~ N(0, s_l^2), b ~ N(0, (prod s)^2)."""
    return _build(widths, spec, output_linear, "normal")


def init_looks_linear(widths, spec: InitSpec, output_linear=False) -> Network:
    """Mirrored orthogonal blocks [[W0, -W0], [-W0, W0]] with biases [b0, -b0].

    The first layer uses the stacked form [W0; -W0] to create the (+, -)
    pair representation; a linear readout uses [W0, -W0].
    """
    return _build(widths, spec, output_linear, "looks_linear")


def init_network(widths, spec: InitSpec, output_linear=False) -> Network:
    ws, bs = sample_layers(widths, spec, output_linear)
    return Network(list(widths), ws, bs, output_linear)
