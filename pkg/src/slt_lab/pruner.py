"""Edge-popup strong-ticket search with bias scores, sparsity annealing and rescaling.

Every weight and bias carries a popup score. The forward pass uses only the
top-scoring fraction of each layer; scores are trained by SGD on
straight-through gradients while the parameter values themselves stay
frozen, except for the optional per-epoch output rescaling.
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import LOSSES, Mask, Network, Sgd, SgdConfig, backward_scores, forward, predict
from .scaling import LambdaFitWarning, clamp_lambda, distribute_lambda, fit_lambda_generic, fit_lambda_mse

log = logging.getLogger(__name__)


class PruneDivergence(RuntimeError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class PruneConfig:
    sparsity: float
    levels: int = 5
    epochs_per_level: int = 10
    sgd: SgdConfig = field(default_factory=SgdConfig)
    rescale: bool = True
    score_init: float = 0.5
    seed: int = 0
    loss: str = "mse"
    prune_biases: bool | None = None  # None: only when the network has nonzero biases
    rescale_samples: int = 4096
    dump_dir: str | None = None

    def __post_init__(self):
        if not 0 < self.sparsity <= 1:
            raise ValueError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if self.levels < 1 or self.epochs_per_level < 1:
            raise ValueError("levels and epochs_per_level must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if isinstance(self.sgd, dict):
            self.sgd = SgdConfig(**self.sgd)


class ScoredNetwork:
    """A frozen network plus one score per weight and bias.

    Scores of layer l live in one flat array (weights row-major, then biases);
    ``weight_scores[l]`` and ``bias_scores[l]`` are views into it.
    """

    def __init__(self, net: Network, flat_scores: list[np.ndarray], prune_biases: bool = True):
        self.net = net
        self.flat = flat_scores
        self.prune_biases = prune_biases
        self.weight_scores = []
        self.bias_scores = []
        for w, s in zip(net.weights, flat_scores):
            if s.shape != (w.size + w.shape[0],):
                raise ValueError("score array does not match layer size")
            self.weight_scores.append(s[: w.size].reshape(w.shape))
            self.bias_scores.append(s[w.size :])

    @classmethod
    def from_network(cls, net: Network, init=0.5, prune_biases=None) -> "ScoredNetwork":
        if prune_biases is None:
            prune_biases = any(np.any(b != 0) for b in net.biases)
        flat = [np.full(w.size + w.shape[0], float(init)) for w in net.weights]
        return cls(net, flat, prune_biases)

    def copy(self) -> "ScoredNetwork":
        return ScoredNetwork(self.net.copy(), [s.copy() for s in self.flat], self.prune_biases)

    def mask(self, sparsity: float) -> Mask:
        return get_mask(self, sparsity)


def layer_budget(count: int, sparsity: float) -> int:
    # tiny slack so that e.g. 0.1 * 10100 does not round up to 1011
    return min(count, max(0, math.ceil(sparsity * count - 1e-9)))


def top_k_indicator(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean indicator of the k largest entries; ties go to the lower index."""
    n = scores.size
    if k >= n:
        return np.ones(n, dtype=bool)
    if k <= 0:
        return np.zeros(n, dtype=bool)
    thresh = np.partition(scores, n - k)[n - k]
    keep = scores > thresh
    need = k - int(keep.sum())
    if need > 0:
        keep[np.flatnonzero(scores == thresh)[:need]] = True
    return keep


def get_mask(scored: ScoredNetwork, sparsity: float) -> Mask:
    """Per-layer top-k over scores, weights and biases ranked in one pool."""
    if not 0 < sparsity <= 1:
        raise ValueError(f"sparsity must lie in (0, 1], got {sparsity}")
    wm, bm = [], []
    for w, flat in zip(scored.net.weights, scored.flat):
        if scored.prune_biases:
            keep = top_k_indicator(flat, layer_budget(flat.size, sparsity))
            wm.append(keep[: w.size].reshape(w.shape))
            bm.append(keep[w.size :])
        else:
            keep = top_k_indicator(flat[: w.size], layer_budget(w.size, sparsity))
            wm.append(keep.reshape(w.shape))
            bm.append(np.zeros(w.shape[0], dtype=bool))
    return Mask(wm, bm)


def anneal_schedule(rho: float, levels: int) -> list[float]:
    """[rho^(1/e), rho^(2/e), ..., rho]; the last entry is exactly rho."""
    if not 0 < rho <= 1:
        raise ValueError(f"sparsity must lie in (0, 1], got {rho}")
    if levels < 1:
        raise ValueError("need at least one annealing level")
    out = [rho ** (i / levels) for i in range(1, levels)]
    out.append(rho)
    return out


@dataclass
class PruneResult:
    net: Network  # parameters after all rescaling steps
    scores: list[np.ndarray]
    mask: Mask
    lam_last: float
    lam_cum: float
    history: list[dict]
    config: PruneConfig

    @property
    def weight_sparsity(self) -> float:
        return self.mask.weight_sparsity()

    @property
    def param_sparsity(self) -> float:
        return self.mask.param_sparsity()

    def scored(self) -> ScoredNetwork:
        return ScoredNetwork(self.net, self.scores, self.config.prune_biases)


def _targets(ds_targets, idx, classification):
    return ds_targets[idx] if classification else ds_targets[:, idx]


def _fit_scale(loss_name, pred, target):
    if loss_name == "mse":
        return fit_lambda_mse(pred, target)
    lossfn = LOSSES[loss_name]
    return fit_lambda_generic(lambda lam: lossfn(lam * pred, target)[0], 1.0)


def _dump_state(cfg, scored, where):
    state = {"where": where, "config": _config_dict(cfg)}
    if cfg.dump_dir:
        from .nn import network_to_dict

        os.makedirs(cfg.dump_dir, exist_ok=True)
        path = os.path.join(cfg.dump_dir, "divergence_dump.json")
        doc = network_to_dict(scored.net, scores=(scored.weight_scores, scored.bias_scores), meta=state)
        with open(path, "w") as fh:
            json.dump(doc, fh)
        state["dump"] = path
    return state


def _config_dict(cfg):
    d = asdict(cfg)
    return d


def edge_popup(net: Network, train, cfg: PruneConfig, eval_fn=None, on_epoch=None) -> PruneResult:
    """Search a strong ticket in ``net`` by score training alone.

    ``train`` is a :class:`slt_lab.data.Dataset`. ``eval_fn(net, mask)`` is an
    optional metric recorded each epoch; ``on_epoch(row)`` receives each log
    row as it is produced.
    """
    classification = train.is_classification
    if classification != (cfg.loss == "xent"):
        raise ValueError(f"loss {cfg.loss!r} does not match a {train.kind} dataset")
    lossfn = LOSSES[cfg.loss]
    scored = ScoredNetwork.from_network(net.copy(), cfg.score_init, cfg.prune_biases)
    cfg.prune_biases = scored.prune_biases

    x_all, y_all = train.inputs, train.targets
    n = x_all.shape[1]
    bs = cfg.sgd.batch_size
    steps_per_epoch = math.ceil(n / bs)
    schedule = anneal_schedule(cfg.sparsity, cfg.levels)
    total = len(schedule) * cfg.epochs_per_level * steps_per_epoch
    sgd_cfg = SgdConfig(**{**asdict(cfg.sgd), "total_steps": total})
    opt = Sgd(sgd_cfg)
    rng = np.random.default_rng(cfg.seed)
    if n > cfg.rescale_samples:
        fit_idx = np.sort(rng.choice(n, cfg.rescale_samples, replace=False))
    else:
        fit_idx = np.arange(n)
    x_fit, y_fit = x_all[:, fit_idx], _targets(y_all, fit_idx, classification)

    lam_last, lam_cum = 1.0, 1.0
    history = []
    step = 0
    for level, rho in enumerate(schedule, start=1):
        for epoch in range(1, cfg.epochs_per_level + 1):
            perm = rng.permutation(n)
            batch_losses = []
            for start in range(0, n, bs):
                idx = perm[start : start + bs]
                mask = get_mask(scored, rho)
                trace = forward(scored.net, x_all[:, idx], mask)
                loss, grad = lossfn(trace.output, _targets(y_all, idx, classification))
                if not math.isfinite(loss):
                    state = _dump_state(cfg, scored, {"level": level, "epoch": epoch, "step": step})
                    raise PruneDivergence(f"non-finite loss at level {level}, epoch {epoch}", state)
                sw, sb = backward_scores(scored.net, trace, grad, mask)
                grads = [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(sw, sb)]
                opt.step(scored.flat, grads, step)
                step += 1
                batch_losses.append(loss)

            mask = get_mask(scored, rho)
            pred = predict(scored.net, x_fit, mask)
            loss_before = lossfn(pred, y_fit)[0]
            lam, clamped = 1.0, False
            loss_after = loss_before
            if cfg.rescale:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", LambdaFitWarning)
                    lam = _fit_scale(cfg.loss, pred, y_fit)
                if not lam > 0:
                    lam, clamped = 1e-6, True
                else:
                    lam, clamped = clamp_lambda(lam)
                scored.net = distribute_lambda(scored.net, lam)
                lam_last = lam
                lam_cum *= lam
                loss_after = lossfn(predict(scored.net, x_fit, mask), y_fit)[0]
                if not math.isfinite(loss_after):
                    state = _dump_state(cfg, scored, {"level": level, "epoch": epoch, "rescale": lam})
                    raise PruneDivergence("non-finite loss after rescaling", state)
            row = {
                "level": level,
                "epoch": epoch,
                "sparsity": rho,
                "batch_loss": float(np.mean(batch_losses)),
                "loss_before_rescale": loss_before,
                "train_loss": loss_after,
                "eval_metric": eval_fn(scored.net, mask) if eval_fn else "",
                "lambda": lam,
                "lambda_cum": lam_cum,
                "clamped": clamped,
            }
            history.append(row)
            if on_epoch:
                on_epoch(row)
            log.debug("level %d epoch %d sparsity %.4g loss %.4g", level, epoch, rho, loss_after)

    final_mask = get_mask(scored, cfg.sparsity)
    return PruneResult(scored.net, scored.flat, final_mask, lam_last, lam_cum, history, cfg)


EPOCH_COLUMNS = [
    "level",
    "epoch",
    "sparsity",
    "batch_loss",
    "loss_before_rescale",
    "train_loss",
    "eval_metric",
    "lambda",
    "lambda_cum",
    "clamped",
]
