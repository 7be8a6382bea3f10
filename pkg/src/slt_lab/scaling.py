"""Layerwise parameter rescaling and output-scale fitting.

Multiplying layer-l weights by s_l and layer-l biases by prod(s[:l+1])
multiplies the output of a ReLU (or identity-output) network by prod(s).
"""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np

from .nn import Network

log = logging.getLogger(__name__)

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class LambdaFitWarning(UserWarning):
    """The fitted scale is a fallback or sits on a bracket edge."""


def apply_scaling(net: Network, sigma) -> Network:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (net.depth,):
        raise ValueError(f"need {net.depth} layer scales, got shape {sigma.shape}")
    if not np.all(sigma > 0):
        raise ValueError("layer scales must be positive")
    out = net.copy()
    cum = 1.0
    for l, s in enumerate(sigma):
        cum *= s
        out.weights[l] *= s
        out.biases[l] *= cum
    return out


def distribute_lambda(net: Network, lam: float) -> Network:
    """Spread an output factor evenly: weights times lam^(1/L), biases times lam^(l/L)."""
    if not lam > 0:
        raise ValueError(f"output scale must be positive, got {lam}")
    return apply_scaling(net, np.full(net.depth, lam ** (1.0 / net.depth)))


def clamp_lambda(lam: float) -> tuple[float, bool]:
    clamped = min(max(lam, LAMBDA_MIN), LAMBDA_MAX)
    if clamped != lam:
        log.info("output scale %.3g clamped to %.3g", lam, clamped)
    return clamped, clamped != lam


def fit_lambda_mse(pred, target) -> float:
    """argmin_lam sum ||y - lam * x||^2 = <y, x> / <x, x>."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    den = float(np.sum(pred * pred))
    if den == 0.0:
        warnings.warn("all-zero predictions; output scale left at 1", LambdaFitWarning, stacklevel=2)
        return 1.0
    return float(np.sum(target * pred)) / den


def golden_section(f, lo, hi, tol=1e-6, max_iter=500):
    """Minimize a unimodal ``f`` on [lo, hi] to absolute tolerance ``tol``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_lambda_generic(loss, lam0: float = 1.0, tol: float = 1e-6, max_expand: int = 3) -> float:
    """Minimize a scalar ``loss(lam)`` over lam > 0.

    Golden-section search on [lam0/64, 64*lam0]; when the minimum lands on a
    bracket edge, the bracket is widened by 64x towards that edge, at most
    ``max_expand`` times and never past the global clamp range.
    """
    if not lam0 > 0:
        raise ValueError("lam0 must be positive")
    if not math.isfinite(loss(lam0)):
        raise ValueError("loss is not finite at the starting scale")

    def safe(lam):
        v = loss(lam)
        return v if math.isfinite(v) else math.inf

    lo, hi = lam0 / 64.0, lam0 * 64.0
    for attempt in range(max_expand + 1):
        best = golden_section(safe, lo, hi, tol=tol)
        if not math.isfinite(safe(best)):
            raise ValueError("loss is not finite anywhere in the bracket")
        at_hi = hi - best <= 2 * tol and hi < LAMBDA_MAX
        at_lo = best - lo <= 2 * tol and lo > LAMBDA_MIN
        if not (at_hi or at_lo) or attempt == max_expand:
            break
        if at_hi:
            lo, hi = hi / 64.0, min(hi * 64.0, LAMBDA_MAX)
        else:
            lo, hi = max(lo / 64.0, LAMBDA_MIN), lo * 64.0
    if hi - best <= 2 * tol:
        warnings.warn(f"output scale at upper bracket edge {hi:.6g}", LambdaFitWarning, stacklevel=2)
        return hi
    if best - lo <= 2 * tol:
        warnings.warn(f"output scale at lower bracket edge {lo:.6g}", LambdaFitWarning, stacklevel=2)
        return lo
    return best
