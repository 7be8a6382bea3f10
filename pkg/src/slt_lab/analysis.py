"""Analytic facts about bias-free and biased ReLU networks, with numeric oracles.

* Univariate zero-bias networks factor as f(x) = W+ relu(x) + W- relu(-x).
* Consequently they cannot fit functions with an offset: closed-form best fits
  for g(x) = 0.5 and g(x) = exp(x) on [-1, 1].
* The expected squared output norm of a randomly initialized network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .init import InitSpec, sample_layers, weight_std
from .nn import Network, predict
from .scaling import golden_section


# ---------------------------------------------------------------- factorization


@dataclass
class Factorization:
    w_plus: np.ndarray
    w_minus: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return self.w_plus[:, None] * np.maximum(x, 0) + self.w_minus[:, None] * np.maximum(-x, 0)


def _check_univariate(net: Network):
    if net.widths[0] != 1:
        raise ValueError(f"need a single input, got n0={net.widths[0]}")
    if any(np.any(b != 0) for b in net.biases):
        raise ValueError("factorization requires all biases to be zero")


def factorize_univariate(net: Network) -> Factorization:
    """W+ = f(1), W- = f(-1); valid by positive homogeneity."""
    _check_univariate(net)
    out = predict(net, np.array([[1.0, -1.0]]))
    return Factorization(out[:, 0].copy(), out[:, 1].copy())


def factorize_recursive(net: Network) -> Factorization:
    """The same factors via layerwise clipped products W+^(l+1) = relu(W^(l+1) W+^(l))."""
    _check_univariate(net)
    # x^(l) = wp * x for x > 0 and x^(l) = wm * (-x) for x < 0
    wp, wm = np.array([1.0]), np.array([-1.0])
    for l, w in enumerate(net.weights):
        wp, wm = w @ wp, w @ wm
        if not (net.output_linear and l == net.depth - 1):
            wp, wm = np.maximum(wp, 0.0), np.maximum(wm, 0.0)
    return Factorization(wp, wm)


# ---------------------------------------------------------------- quadrature


def adaptive_simpson(f, a, b, tol=1e-9, max_depth=50):
    """Integral of a scalar function on [a, b] by adaptive Simpson's rule."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return rec(a, m, fa, flm, fm, left, tol / 2, depth - 1) + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


def relu_fit_loss(g, w_plus, w_minus, tol=1e-9):
    """Integral over [-1, 1] of (g(x) - w+ relu(x) - w- relu(-x))^2, split at the kink."""
    left = adaptive_simpson(lambda x: (g(x) - w_minus * (-x)) ** 2, -1.0, 0.0, tol)
    right = adaptive_simpson(lambda x: (g(x) - w_plus * x) ** 2, 0.0, 1.0, tol)
    return left + right


def numeric_best_fit(g, lo=-10.0, hi=10.0, sweeps=3, tol=1e-9):
    """Coordinate-wise golden-section minimization of :func:`relu_fit_loss`."""
    wp, wm = 0.0, 0.0
    for _ in range(sweeps):
        wp = golden_section(lambda w: relu_fit_loss(g, w, wm), lo, hi, tol=tol)
        wm = golden_section(lambda w: relu_fit_loss(g, wp, w), lo, hi, tol=tol)
    return wp, wm, relu_fit_loss(g, wp, wm)


@dataclass
class Counterexample:
    w_plus: float
    w_minus: float
    loss: float
    numeric_w_plus: float
    numeric_w_minus: float
    numeric_loss: float
    quadrature_loss: float  # quadrature evaluated at the closed-form minimizer


def counterexample_const(numeric=True) -> Counterexample:
    """Best zero-bias fit of g = 0.5: w+ = w- = 3/4 with squared error 1/8."""
    g = lambda x: 0.5
    wp = wm = 0.75
    loss = 0.125
    quad = relu_fit_loss(g, wp, wm)
    nwp, nwm, nloss = numeric_best_fit(g) if numeric else (math.nan,) * 3
    return Counterexample(wp, wm, loss, nwp, nwm, nloss, quad)


def counterexample_exp(numeric=True) -> Counterexample:
    """Best zero-bias fit of g = exp.

    w+ = 3 int_0^1 x e^x dx = 3 and w- = 3 int_-1^0 (-x) e^x dx = 3 (1 - 2/e).
    The residual is int e^{2x} - (w+^2 + w-^2) / 3, i.e.
    e^2/2 - 6 + 12/e - 12.5/e^2.
    """
    e = math.e
    wp = 3.0
    wm = -3.0 * (2.0 / e - 1.0)
    loss = 0.5 * e**2 - 6.0 + 12.0 / e - 12.5 / e**2
    quad = relu_fit_loss(math.exp, wp, wm)
    nwp, nwm, nloss = numeric_best_fit(math.exp) if numeric else (math.nan,) * 3
    return Counterexample(wp, wm, loss, nwp, nwm, nloss, quad)


# ---------------------------------------------------------------- signal moments


def predict_signal_moment(widths, sw_std, sb_std, x_norm2, orthovar=False, relu_output=True) -> float:
    """Expected ||f(x0)||^2 for independent symmetric weights and biases.

    With ReLU everywhere, m_l = n_l/2 (sw_l^2 m_{l-1} + sb_l^2) and m_0 = ||x0||^2.
    A linear output layer drops the halving at the last layer. ``orthovar``
    gives the mirrored orthogonal variant: ||x0||^2 + sum_l sb_l^2 n_l / 2
    (again without the halving for a linear readout).
    """
    n = np.asarray(widths[1:], dtype=float)
    sw = np.asarray(sw_std, dtype=float)
    sb = np.asarray(sb_std, dtype=float)
    L = n.size
    if sw.shape != (L,) or sb.shape != (L,):
        raise ValueError("need one weight and one bias scale per layer")
    if orthovar:
        terms = sb**2 * n / 2.0
        if not relu_output:
            terms[-1] *= 2.0
        return float(x_norm2 + terms.sum())
    m = float(x_norm2)
    for l in range(L):
        half = 1.0 if (l == L - 1 and not relu_output) else 0.5
        m = half * n[l] * (sw[l] ** 2 * m + sb[l] ** 2)
    return m


def scheme_stds(widths, spec: InitSpec):
    """Per-layer weight and bias standard deviations implied by an InitSpec."""
    sw = spec.weight_scales(widths)
    sb = np.cumprod(sw)
    if spec.scheme == "uniform":
        w_std = np.array([weight_std("uniform", s) for s in sw])
        b_std = sb / math.sqrt(3.0)
    else:
        w_std, b_std = sw, sb
    if spec.zero_bias:
        b_std = np.zeros_like(b_std)
    return w_std, b_std


@dataclass
class SignalMomentReport:
    scheme: str
    predicted: float
    empirical: float
    stderr: float
    trials: int
    convention: str  # "relu-output" or "linear-output"

    @property
    def deviation(self) -> float:
        return abs(self.empirical - self.predicted) / self.predicted if self.predicted else abs(self.empirical)

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.empirical == self.predicted else math.inf
        return abs(self.empirical - self.predicted) / self.stderr


def _batched_forward(weights, biases, x, output_linear):
    h = np.broadcast_to(x, (weights[0].shape[0], x.size))
    for l, (w, b) in enumerate(zip(weights, biases)):
        h = np.einsum("bij,bj->bi", w, h) + b
        if not (output_linear and l == len(weights) - 1):
            h = np.maximum(h, 0.0)
    return h


def verify_signal_moment(widths, spec: InitSpec, x0, trials=100_000, output_linear=False, chunk=2000, seed=None):
    """Monte Carlo estimate of E||f(x0)||^2 against :func:`predict_signal_moment`.

    Chunk c draws layer l from ``default_rng([seed, c, l])``, so the estimate
    does not depend on how chunks are scheduled.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != widths[0]:
        raise ValueError("input does not match the first width")
    seed = spec.seed if seed is None else seed
    sums = []
    for c, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        rngs = [np.random.default_rng([int(seed), c, l]) for l in range(len(widths) - 1)]
        ws, bs = sample_layers(widths, spec, output_linear, batch=(size,), rngs=rngs)
        out = _batched_forward(ws, bs, x0, output_linear)
        sums.append((out**2).sum(axis=1))
    vals = np.concatenate(sums)
    w_std, b_std = scheme_stds(widths, spec)
    pred = predict_signal_moment(
        widths, w_std, b_std, float(x0 @ x0), orthovar=spec.scheme == "looks_linear", relu_output=not output_linear
    )
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    conv = "linear-output" if output_linear else "relu-output"
    return SignalMomentReport(spec.scheme, pred, float(vals.mean()), stderr, int(vals.size), conv)
