"""Constructive strong tickets: approximate a target ReLU network by pruning a
random mother network of twice the depth.

Every target layer l becomes two mother layers. The first (intermediary) layer
holds candidate neurons that, once pruned to a single incoming weight or a
single positive bias, compute |w1| relu(x_j), |w1| relu(-x_j) or the constant
b1. The second layer then sums a subset of these candidates per target
parameter, chosen by an approximate subset-sum solver:

    x_i = relu(sum_j w_ij relu(x_j) - sum_j w_ij relu(-x_j) + b_i)

All work is done on the mother network divided by its per-layer scales, so the
ticket output must be multiplied by ``lam = prod(sigma_w)^-1``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .init import InitSpec, init_network
from .nn import Mask, Network, apply_mask, predict
from .scaling import apply_scaling
from .subset_sum import solve_subset_sum

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-12
DEFAULT_C = 10.0


class ConstructionError(ValueError):
    pass


# ---------------------------------------------------------------- targets


def in_degrees(net: Network) -> list[np.ndarray]:
    """k_i = number of nonzero incoming weights plus one for a nonzero bias."""
    return [np.count_nonzero(w, axis=1) + (b != 0) for w, b in zip(net.weights, net.biases)]


@dataclass
class TargetNetwork:
    net: Network
    scale: float = 1.0  # the stored net computes scale * (original target)

    @property
    def depth(self) -> int:
        return self.net.depth

    @property
    def widths(self) -> list[int]:
        return list(self.net.widths)

    @property
    def k(self) -> list[np.ndarray]:
        return in_degrees(self.net)

    @property
    def k_max(self) -> np.ndarray:
        return np.array([int(k.max()) if k.size else 0 for k in self.k])

    @property
    def theta_max(self) -> float:
        vals = [np.abs(a).max() for a in self.net.weights + self.net.biases if a.size]
        return float(max(vals)) if vals else 0.0

    @classmethod
    def from_network(cls, net: Network) -> "TargetNetwork":
        """Wrap ``net``, rescaling layerwise when some |parameter| exceeds 1.

        Layer scales are chosen greedily so every weight and every (cumulatively
        scaled) bias lands in [-1, 1]; the product is kept in ``scale``.
        """
        sig = np.ones(net.depth)
        cum = 1.0
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            wmax = np.abs(w).max() if w.size else 0.0
            bmax = np.abs(b).max() if b.size else 0.0
            s = 1.0
            if wmax > 1:
                s = 1.0 / wmax
            if bmax * cum * s > 1:
                s = 1.0 / (bmax * cum)
            sig[l] = s
            cum *= s
        if np.all(sig == 1.0):
            return cls(net.copy(), 1.0)
        return cls(apply_scaling(net, sig), float(np.prod(sig)))


def random_sparse_target(widths, density=0.5, seed=0, bias_range=0.5, output_linear=True) -> Network:
    """Weights U[-1, 1] kept with probability ``density``; biases U[-bias_range, bias_range]."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = rng.uniform(-1, 1, size=(n_out, n_in))
        w *= rng.random((n_out, n_in)) < density
        ws.append(w)
        bs.append(rng.uniform(-bias_range, bias_range, size=n_out))
    return Network(list(widths), ws, bs, output_linear)


def sample_domain(n0, count=10_000, seed=0, vertices=True) -> np.ndarray:
    """Uniform points of [-1, 1]^n0 as columns, plus all 2^n0 corners when n0 <= 10."""
    x = np.random.default_rng(seed).uniform(-1, 1, size=(n0, count))
    if vertices and n0 <= 10:
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=n0))).T
        x = np.concatenate([x, corners], axis=1)
    return x


# ---------------------------------------------------------------- budget


@dataclass
class EpsilonBudget:
    eps: float
    eps_layers: np.ndarray
    sup_l1: np.ndarray  # S_l >= sup ||x^(l-1)||_1
    w_inf: np.ndarray  # max |w_ij| per layer
    k_max: np.ndarray

    def to_dict(self):
        return {
            "eps": self.eps,
            "eps_layers": self.eps_layers.tolist(),
            "sup_l1": self.sup_l1.tolist(),
            "w_inf": self.w_inf.tolist(),
            "k_max": self.k_max.tolist(),
        }


def activations_l1(net: Network, x) -> np.ndarray:
    """max over columns of ||x^(l)||_1 for l = 0..L-1 (the inputs of every layer)."""
    out = [np.abs(x).sum(axis=0).max()]
    h = x
    for l in range(net.depth - 1):
        h = np.maximum(net.weights[l] @ h + net.biases[l][:, None], 0.0)
        out.append(h.sum(axis=0).max())
    return np.array(out, dtype=float)


def eps_layers_formula(eps, widths, k_max, sup_l1, w_inf) -> np.ndarray:
    """eps / (L sqrt(n_l k_max,l) (1 + S_l) prod_{k>l} (||W^(k)||_inf + eps/L))."""
    L = len(widths) - 1
    out = np.empty(L)
    for l in range(L):
        tail = np.prod([w_inf[k] + eps / L for k in range(l + 1, L)])
        denom = L * math.sqrt(widths[l + 1] * max(int(k_max[l]), 1)) * (1.0 + sup_l1[l]) * tail
        out[l] = eps / denom
    return out


def epsilon_budget(target, eps, sample_inputs=None, margin=0.1, analytic_floor=False) -> EpsilonBudget:
    """Per-layer parameter tolerances that keep the output error below ``eps``.

    S_l is the largest sampled ||x^(l-1)||_1 times (1 + margin); with
    ``analytic_floor`` it is at least n_{l-1}.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if isinstance(target, Network):
        target = TargetNetwork.from_network(target)
    net = target.net
    if sample_inputs is None:
        sample_inputs = sample_domain(net.widths[0])
    sup = activations_l1(net, sample_inputs) * (1.0 + margin)
    if analytic_floor:
        sup = np.maximum(sup, np.asarray(net.widths[:-1], dtype=float))
    w_inf = np.array([np.abs(w).max() if w.size else 0.0 for w in net.weights])
    k_max = target.k_max
    el = eps_layers_formula(eps, net.widths, k_max, sup, w_inf)
    if np.any(el < EPS_FLOOR):
        bad = int(np.argmin(el))
        raise ConstructionError(
            f"layer {bad + 1} tolerance {el[bad]:.3g} underflows; use a larger eps or a shallower target"
        )
    return EpsilonBudget(float(eps), el, sup, w_inf, k_max)


# ---------------------------------------------------------------- mother


@dataclass
class MotherNetwork:
    net: Network
    target_widths: list[int]
    C: float
    delta: float
    delta_layers: np.ndarray
    sigma_w: np.ndarray
    spec: InitSpec

    @property
    def lam(self) -> float:
        return float(np.prod(1.0 / self.sigma_w))

    def normalized(self) -> Network:
        """The mother divided by its layer scales; its output is lam times the mother's."""
        return apply_scaling(self.net, 1.0 / self.sigma_w)


def mother_widths(target_widths, eps_layers, delta_layers, C, even=False) -> list[int]:
    out = [int(target_widths[0])]
    for l in range(len(target_widths) - 1):
        n_prev = target_widths[l]
        m = math.ceil(C * n_prev * math.log(1.0 / min(eps_layers[l], delta_layers[l])))
        m = max(m, 2 * n_prev + 1)
        if even and m % 2:
            m += 1
        out += [m, int(target_widths[l + 1])]
    return out


def build_mother(target, budget: EpsilonBudget, delta=0.1, C=DEFAULT_C, spec=None, max_width=200_000):
    """Random mother of depth 2L sized so each subset-sum pool is large enough."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    if isinstance(target, Network):
        target = TargetNetwork.from_network(target)
    spec = spec or InitSpec("uniform")
    tw = target.widths
    L = len(tw) - 1
    kmax = np.maximum(target.k_max, 1)
    dl = np.array([delta / (L * kmax[l] * tw[l + 1]) for l in range(L)])
    widths = mother_widths(tw, budget.eps_layers, dl, C, even=spec.scheme == "looks_linear")
    if max(widths[1:-1] or [0]) > max_width:
        raise ConstructionError(f"mother width {max(widths)} exceeds the cap {max_width}")
    net = init_network(widths, spec, output_linear=target.net.output_linear)
    sigma = spec.weight_scales(widths)
    return MotherNetwork(net, tw, float(C), float(delta), dl, np.asarray(sigma, dtype=float), spec)


# ---------------------------------------------------------------- extraction


@dataclass
class PlanEntry:
    layer: int  # target layer, 1-based
    neuron: int
    kind: str  # "w+", "w-" or "b"
    source: int  # input neuron j, -1 for biases
    theta: float
    pool: list[int]
    subset: list[int]
    residual: float
    ok: bool
    method: str

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ConstructionPlan:
    entries: list[PlanEntry]
    eps_layers: list[float]

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def failures(self) -> list[PlanEntry]:
        return [e for e in self.entries if not e.ok]

    def max_residual_ratio(self) -> float:
        r = [e.residual / self.eps_layers[e.layer - 1] for e in self.entries]
        return max(r) if r else 0.0

    def to_dict(self):
        return {"eps_layers": list(self.eps_layers), "entries": [e.to_dict() for e in self.entries]}


@dataclass
class Ticket:
    mother: MotherNetwork
    mask: Mask
    plan: ConstructionPlan
    lam: float  # multiply the pruned mother output by this to approximate the original target
    target_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.plan.ok

    @property
    def weight_sparsity(self) -> float:
        return self.mask.weight_sparsity()

    @property
    def param_sparsity(self) -> float:
        return self.mask.param_sparsity()

    def __call__(self, x, chunk=1000) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        outs = [predict(self.mother.net, x[:, s : s + chunk], self.mask) for s in range(0, x.shape[1], chunk)]
        return self.lam * np.concatenate(outs, axis=1)

    def pruned_network(self) -> Network:
        return apply_mask(self.mother.net, self.mask)


_KIND_CODE = {"w+": 0, "w-": 1, "b": 2}


def _pool_layout(w1, b1, n_prev):
    """Assign intermediary neurons to pools round-robin.

    Neuron c gets slot c mod (2 n_prev + 1). Slots 2j and 2j+1 serve source j:
    the neuron keeps its weight to x_j and lands in the relu(x_j) pool when
    that weight is positive, in the relu(-x_j) pool otherwise. The last slot
    carries the bias and is usable only when the bias is positive.
    Returns per-neuron source (-1 for bias carriers), sign and coefficient.
    """
    width = w1.shape[0]
    slot = np.arange(width) % (2 * n_prev + 1)
    is_bias = slot == 2 * n_prev
    src = np.where(is_bias, -1, slot // 2)
    rows = np.arange(width)
    wsel = w1[rows, np.where(is_bias, 0, src)]
    coef = np.where(is_bias, b1, np.abs(wsel))
    sign = np.where(is_bias, 1, np.sign(wsel)).astype(int)
    usable = np.where(is_bias, b1 > 0, wsel != 0)
    return src, sign, coef, usable


def extract_ticket(mother: MotherNetwork, target, budget: EpsilonBudget, plan_seed=0, method="auto", restarts=64):
    """Prune ``mother`` into an approximation of ``target``; see module docstring."""
    if isinstance(target, Network):
        target = TargetNetwork.from_network(target)
    tnet = target.net
    L = tnet.depth
    norm = mother.normalized()
    if norm.depth != 2 * L:
        raise ConstructionError("mother depth does not match the target")
    wm = [np.zeros(w.shape, dtype=bool) for w in norm.weights]
    bm = [np.zeros(b.shape, dtype=bool) for b in norm.biases]
    entries = []
    for l in range(L):
        a, b = 2 * l, 2 * l + 1
        n_prev = tnet.widths[l]
        eps_l = float(budget.eps_layers[l])
        src, sign, coef, usable = _pool_layout(norm.weights[a], norm.biases[a], n_prev)
        pools = {}
        for j in range(n_prev):
            pools[("w+", j)] = np.flatnonzero(usable & (src == j) & (sign > 0))
            pools[("w-", j)] = np.flatnonzero(usable & (src == j) & (sign < 0))
        pools[("b", -1)] = np.flatnonzero(usable & (src == -1))
        w2 = norm.weights[b]
        wt, bt = tnet.weights[l], tnet.biases[l]
        used = np.zeros(norm.widths[a + 1], dtype=bool)
        for i in range(tnet.widths[l + 1]):
            jobs = [("w+", j, wt[i, j]) for j in range(n_prev)]
            jobs += [("w-", j, -wt[i, j]) for j in range(n_prev)]
            jobs.append(("b", -1, bt[i]))
            for kind, j, theta in jobs:
                pool = pools[(kind, j)]
                rng = np.random.default_rng([int(plan_seed), l, _KIND_CODE[kind], i, j + 1])
                vals = coef[pool] * w2[i, pool]
                res = solve_subset_sum(vals, float(theta), eps_l, rng=rng, restarts=restarts, method=method)
                chosen = pool[res.subset]
                wm[b][i, chosen] = True
                used[chosen] = True
                entries.append(
                    PlanEntry(
                        l + 1, i, kind, int(j), float(theta), pool.tolist(), chosen.tolist(),
                        float(res.residual), bool(res.ok), res.method,
                    )
                )
        for c in np.flatnonzero(used):
            if src[c] < 0:
                bm[a][c] = True
            else:
                wm[a][c, src[c]] = True
    plan = ConstructionPlan(entries, [float(e) for e in budget.eps_layers])
    mask = Mask(wm, bm)
    if not plan.ok:
        log.warning("%d of %d subset-sum instances failed", len(plan.failures), len(entries))
    lam = mother.lam / target.scale
    return Ticket(mother, mask, plan, lam, target.scale, {"plan_seed": plan_seed, "method": method})


def sup_error(target_net: Network, ticket: Ticket, x) -> float:
    """max over columns of ||f(x) - lam f_eps(x)||_2."""
    diff = predict(target_net, x) - ticket(x)
    return float(np.sqrt((diff**2).sum(axis=0)).max())


def construct(target_net: Network, eps, delta=0.1, C=DEFAULT_C, spec=None, sample_inputs=None,
              plan_seed=0, method="auto", max_width=200_000) -> Ticket:
    """Target network in, ticket out: budget, mother and extraction in one call."""
    target = TargetNetwork.from_network(target_net)
    budget = epsilon_budget(target, eps * target.scale, sample_inputs)
    mother = build_mother(target, budget, delta, C, spec, max_width)
    ticket = extract_ticket(mother, target, budget, plan_seed, method)
    ticket.meta.update(eps=eps, delta=delta, C=C, budget=budget.to_dict())
    return ticket


@dataclass
class CalibrationRow:
    C: float
    trials: int
    failures: int
    mean_param_sparsity: float
    max_sup_error: float

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials


def calibrate_constant(make_target, eps, delta=0.1, trials=200, C0=DEFAULT_C, C_max=640.0,
                       max_sparsity=None, scheme="uniform", seed=0, eval_points=1000):
    """Double C from ``C0`` until the failure rate is at most ``delta``.

    A trial fails when any subset-sum instance fails or the sampled error
    exceeds eps. With ``max_sparsity`` the mean ticket parameter sparsity must
    also be at most that value. Returns (C, rows).
    """
    rows = []
    C = float(C0)
    while C <= C_max:
        fails, sparsities, worst = 0, [], 0.0
        for t in range(trials):
            target = make_target(seed + t)
            spec = InitSpec(scheme, seed=seed + 10_000 + t)
            ticket = construct(target, eps, delta, C, spec, plan_seed=t)
            x = sample_domain(target.widths[0], eval_points, seed=t)
            err = sup_error(target, ticket, x)
            worst = max(worst, err)
            fails += (not ticket.ok) or err > eps
            sparsities.append(ticket.param_sparsity)
        row = CalibrationRow(C, trials, fails, float(np.mean(sparsities)), worst)
        rows.append(row)
        log.info("C=%g failure rate %.3f sparsity %.2e", C, row.failure_rate, row.mean_param_sparsity)
        if row.failure_rate <= delta and (max_sparsity is None or row.mean_param_sparsity <= max_sparsity):
            return C, rows
        C *= 2
    raise ConstructionError(f"no C up to {C_max} meets the calibration criteria")
