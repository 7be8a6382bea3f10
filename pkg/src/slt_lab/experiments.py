"""Experiment configuration, baseline training, evaluation and pruning sweeps."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .data import Dataset, make_dataset, split
from .init import InitSpec, init_network
from .io import write_csv, write_json
from .nn import LOSSES, Mask, Network, Sgd, SgdConfig, backward_train, forward, network_to_dict, predict
from .pruner import EPOCH_COLUMNS, PruneConfig, PruneDivergence, edge_popup

log = logging.getLogger(__name__)

MODES = ("train", "prune", "construct", "verify")


@dataclass
class ExperimentConfig:
    mode: str = "prune"
    dataset: dict = field(default_factory=lambda: {"name": "shifted_relu"})
    widths: list = field(default_factory=lambda: [1, 100, 100, 100, 100, 1])
    output_linear: bool = True
    init: dict = field(default_factory=lambda: {"scheme": "normal", "zero_bias": False})
    sgd: dict = field(default_factory=dict)
    prune: dict = field(default_factory=dict)  # PruneConfig fields; "levels": "auto" picks the benchmark default
    train: dict = field(default_factory=lambda: {"epochs": 50, "density": None, "finetune_epochs": 5})
    construct: dict = field(default_factory=lambda: {"eps": 0.05, "delta": 0.1, "C": 40.0, "target": None})
    sparsities: list = field(default_factory=lambda: [0.05])
    repetitions: int = 5
    test_fraction: float = 0.2
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        self.sparsities = [float(s) for s in self.sparsities]
        if any(not 0 < s <= 1 for s in self.sparsities):
            raise ValueError("sweep sparsities must lie in (0, 1]")

    @property
    def loss(self) -> str:
        return "xent" if self.dataset.get("name") == "onion" else "mse"

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a JSON or YAML file, then apply non-None keyword overrides."""
    doc = {}
    if path:
        with open(path) as fh:
            text = fh.read()
        doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text) or {}
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "zero_bias":
            doc.setdefault("init", {"scheme": "normal"})["zero_bias"] = bool(value)
        elif key == "rescale":
            doc.setdefault("prune", {})["rescale"] = bool(value)
        else:
            doc[key] = value
    return ExperimentConfig(**doc)


def write_resolved(cfg: ExperimentConfig, out_dir):
    write_json(os.path.join(out_dir, "config.resolved"), cfg.to_dict())


def default_levels(dataset_name: str, sparsity: float) -> int:
    """Annealing levels used for the synthetic benchmarks."""
    if dataset_name == "onion":
        return 20 if any(math.isclose(sparsity, s) for s in (0.01, 0.05)) else 10
    return 5


def init_spec(cfg: ExperimentConfig, seed: int) -> InitSpec:
    d = dict(cfg.init)
    d["seed"] = seed
    return InitSpec(**d)


def load_data(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    kw = dict(cfg.dataset)
    name = kw.pop("name")
    ds = make_dataset(name, seed=seed, **kw)
    return split(ds, cfg.test_fraction, seed)


# ---------------------------------------------------------------- evaluation


def evaluate(net: Network, mask: Mask | None, lam: float, ds: Dataset) -> dict:
    """MSE of lam * f for regression; accuracy and cross-entropy of lam * f for classification."""
    out = lam * predict(net, ds.inputs, mask)
    if ds.is_classification:
        acc = float(np.mean(out.argmax(axis=0) == ds.targets))
        return {"metric": acc, "accuracy": acc, "loss": LOSSES["xent"](out, ds.targets)[0]}
    mse = LOSSES["mse"](out, ds.targets)[0]
    return {"metric": mse, "mse": mse, "loss": mse}


# ---------------------------------------------------------------- baseline training


def magnitude_mask(net: Network, density: float) -> Mask:
    """Global magnitude pruning of weights: keep the ceil(density * count) largest |w|.

    Ties go to the lower flat index. Biases are kept.
    """
    flat = np.concatenate([np.abs(w).ravel() for w in net.weights])
    k = min(flat.size, math.ceil(density * flat.size - 1e-9))
    order = np.lexsort((np.arange(flat.size), -flat))
    keep = np.zeros(flat.size, dtype=bool)
    keep[order[:k]] = True
    wm, start = [], 0
    for w in net.weights:
        wm.append(keep[start : start + w.size].reshape(w.shape))
        start += w.size
    return Mask(wm, [np.ones(b.shape, dtype=bool) for b in net.biases])


def _sgd_epochs(net, mask, train: Dataset, loss_name, sgd_cfg: SgdConfig, epochs, rng):
    lossfn = LOSSES[loss_name]
    n = len(train)
    bs = sgd_cfg.batch_size
    total = epochs * math.ceil(n / bs)
    opt = Sgd(SgdConfig(**{**asdict(sgd_cfg), "total_steps": total}))
    history, step = [], 0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for s in range(0, n, bs):
            idx = perm[s : s + bs]
            y = train.targets[idx] if train.is_classification else train.targets[:, idx]
            trace = forward(net, train.inputs[:, idx], mask)
            loss, grad = lossfn(trace.output, y)
            if not math.isfinite(loss):
                raise FloatingPointError(f"training diverged in epoch {epoch + 1}")
            gw, gb = backward_train(net, trace, grad, mask)
            opt.step(net.weights + net.biases, gw + gb, step)
            if mask is not None:
                for w, m in zip(net.weights, mask.weights):
                    w *= m
            step += 1
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train_baseline(cfg: ExperimentConfig, seed=None):
    """SGD-train a dense net, optionally magnitude-prune it and fine-tune.

    Returns ``(net, mask, history)``; the net has pruned weights set to zero.
    """
    seed = cfg.seed if seed is None else seed
    train, _ = load_data(cfg, seed)
    net = init_network(cfg.widths, init_spec(cfg, seed), cfg.output_linear)
    sgd_cfg = SgdConfig(**cfg.sgd)
    rng = np.random.default_rng([seed, 1])
    tcfg = {"epochs": 50, "density": None, "finetune_epochs": 5, **cfg.train}
    history = _sgd_epochs(net, None, train, cfg.loss, sgd_cfg, tcfg["epochs"], rng)
    mask = None
    if tcfg.get("density") is not None:
        mask = magnitude_mask(net, tcfg["density"])
        for w, m in zip(net.weights, mask.weights):
            w *= m
        if tcfg["finetune_epochs"]:
            history += _sgd_epochs(net, mask, train, cfg.loss, sgd_cfg, tcfg["finetune_epochs"], rng)
    return net, mask, history


# ---------------------------------------------------------------- sweeps

RUN_COLUMNS = [
    "kind", "sparsity", "rep", "seed", "status", "levels", "metric", "test_loss", "train_loss",
    "weight_sparsity", "param_sparsity", "lambda_last", "lambda_cum", "n", "metric_min", "metric_max",
    "error", "wall_time",
]


def prune_config(cfg: ExperimentConfig, sparsity: float, seed: int, dump_dir=None) -> PruneConfig:
    p = dict(cfg.prune)
    if p.get("levels", "auto") == "auto":
        p["levels"] = default_levels(cfg.dataset.get("name", ""), sparsity)
    p.setdefault("loss", cfg.loss)
    return PruneConfig(sparsity=sparsity, seed=seed, sgd=SgdConfig(**cfg.sgd), dump_dir=dump_dir, **p)


def run_prune_cell(cfg: ExperimentConfig, sparsity: float, rep: int, out_dir=None):
    """One (sparsity, repetition) cell; returns ``(row, epoch_rows, result)``."""
    seed = cfg.seed + rep
    t0 = time.time()
    row = {"kind": "run", "sparsity": sparsity, "rep": rep, "seed": seed}
    dump = os.path.join(out_dir, f"dump_s{sparsity}_r{rep}") if out_dir else None
    try:
        train, test = load_data(cfg, seed)
        net = init_network(cfg.widths, init_spec(cfg, seed), cfg.output_linear)
        pcfg = prune_config(cfg, sparsity, seed, dump)
        res = edge_popup(net, train, pcfg)
        ev = evaluate(res.net, res.mask, 1.0, test)
        row.update(
            status="ok", levels=pcfg.levels, metric=ev["metric"], test_loss=ev["loss"],
            train_loss=res.history[-1]["train_loss"], weight_sparsity=res.weight_sparsity,
            param_sparsity=res.param_sparsity, lambda_last=res.lam_last, lambda_cum=res.lam_cum,
        )
        history = res.history
    except (PruneDivergence, FloatingPointError, ValueError) as exc:
        log.warning("cell sparsity=%g rep=%d failed: %s", sparsity, rep, exc)
        row.update(status="failed", error=str(exc))
        res, history = None, []
    row["wall_time"] = time.time() - t0
    return row, history, res


def _cell_task(args):
    cfg_dict, sparsity, rep, out_dir = args
    row, history, res = run_prune_cell(ExperimentConfig(**cfg_dict), sparsity, rep, out_dir)
    ticket = None
    if res is not None:
        ticket = network_to_dict(res.net, res.mask, (
            [s[: w.size].reshape(w.shape) for s, w in zip(res.scores, res.net.weights)],
            [s[w.size :] for s, w in zip(res.scores, res.net.weights)],
        ))
    return row, history, ticket


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean, min and max of the metric over successful repetitions, per sparsity."""
    out = []
    for s in sorted({r["sparsity"] for r in rows}, reverse=True):
        vals = [r["metric"] for r in rows if r["sparsity"] == s and r.get("status") == "ok"]
        agg = {"kind": "aggregate", "sparsity": s, "n": len(vals), "status": "ok" if vals else "failed"}
        if vals:
            agg.update(metric=float(np.mean(vals)), metric_min=float(min(vals)), metric_max=float(max(vals)))
        out.append(agg)
    return out


def run_sweep(cfg: ExperimentConfig, jobs=1, out_dir=None, save_tickets=True) -> list[dict]:
    """Every sparsity x repetition cell, then one aggregate row per sparsity.

    Cells run in separate processes when ``jobs > 1``; results are merged in
    (sparsity, rep) order so the tables do not depend on scheduling.
    """
    cells = [(s, r) for s in cfg.sparsities for r in range(cfg.repetitions)]
    tasks = [(cfg.to_dict(), s, r, out_dir) for s, r in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_task, tasks))
    else:
        results = [_cell_task(t) for t in tasks]
    rows = [r[0] for r in results]
    table = rows + aggregate(rows)
    if out_dir:
        prov = {"config": cfg.to_dict(), "master_seed": cfg.seed}
        write_resolved(cfg, out_dir)
        write_csv(os.path.join(out_dir, "runs.csv"), table, RUN_COLUMNS, prov)
        for (s, r), (_, history, ticket) in zip(cells, results):
            stem = f"s{s:g}_r{r}"
            write_csv(os.path.join(out_dir, "epochs", stem + ".csv"), history, EPOCH_COLUMNS,
                      {**prov, "sparsity": s, "rep": r})
            if save_tickets and ticket is not None:
                ticket["meta"] = {**prov, "sparsity": s, "rep": r}
                write_json(os.path.join(out_dir, "tickets", stem + ".json"), ticket)
    return table


def benchmark_config(name: str, **kw) -> ExperimentConfig:
    """The two synthetic benchmarks: four hidden layers of width 100."""
    if name == "shifted_relu":
        base = dict(dataset={"name": "shifted_relu"}, widths=[1, 100, 100, 100, 100, 1])
    elif name == "onion":
        base = dict(dataset={"name": "onion"}, widths=[2, 100, 100, 100, 100, 4])
    else:
        raise ValueError(f"unknown benchmark {name!r}")
    base.update(prune={"levels": "auto", "epochs_per_level": 10})
    init = {"scheme": "normal", "zero_bias": kw.pop("zero_bias", False)}
    base["init"] = init
    if "rescale" in kw:
        base["prune"]["rescale"] = kw.pop("rescale")
    base.update(kw)
    return ExperimentConfig(**copy.deepcopy(base))
