"""Command-line driver: ``slt-lab {dataset,train,prune,construct,verify,report}``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .analysis import counterexample_const, counterexample_exp, factorize_recursive, factorize_univariate, verify_signal_moment
from .construct import construct, random_sparse_target, sample_domain, sup_error
from .data import make_dataset, save_dataset
from .experiments import (
    ExperimentConfig, RUN_COLUMNS, aggregate, evaluate, load_config, load_data, run_sweep, train_baseline,
    write_resolved,
)
from .init import InitSpec, init_network
from .io import read_csv, write_csv, write_json
from .nn import Network, load_network, save_network
from .scaling import apply_scaling, distribute_lambda

log = logging.getLogger("slt_lab")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _common(p):
    p.add_argument("--config", help="JSON or YAML experiment config")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="slt-lab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a synthetic dataset as CSV")
    _common(p)
    p.add_argument("--name", choices=["shifted_relu", "onion"], default="shifted_relu")
    p.add_argument("-n", type=int, default=10_000)

    p = sub.add_parser("train", help="SGD-train a dense target network, optionally magnitude-pruned")
    _common(p)
    p.add_argument("--density", type=float, help="keep this fraction of weights after training")
    p.add_argument("--epochs", type=int)
    p.add_argument("--zero-bias", action="store_true", default=None)

    p = sub.add_parser("prune", help="edge-popup sweep over sparsities and repetitions")
    _common(p)
    p.add_argument("--sparsity", type=_floats, help="comma-separated target sparsities")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-rescale", dest="rescale", action="store_false", default=None)
    p.add_argument("--zero-bias", action="store_true", default=None)

    p = sub.add_parser("construct", help="build a ticket for a target network by subset sum")
    _common(p)
    p.add_argument("--target", help="target network JSON (default: random sparse 4-10-5-2 target)")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--C", type=float)
    p.add_argument("--scheme", choices=["uniform", "normal", "looks_linear"], default="uniform")

    p = sub.add_parser("verify", help="run the analytic and Monte Carlo checks")
    _common(p)
    p.add_argument("--trials", type=int, default=100_000)

    p = sub.add_parser("report", help="summarize a runs.csv written by prune")
    p.add_argument("runs", help="path to runs.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _cfg(args, mode, **extra):
    over = {"seed": args.seed, "out": args.out, "mode": mode, **extra}
    return load_config(args.config, **over)


def cmd_dataset(args):
    cfg = _cfg(args, "train")
    kw = {k: v for k, v in cfg.dataset.items() if k != "name"}
    name = args.name if not args.config else cfg.dataset["name"]
    ds = make_dataset(name, n=args.n, seed=cfg.seed, **{k: v for k, v in kw.items() if k != "n"})
    path = os.path.join(cfg.out, f"{name}.csv")
    save_dataset(ds, path)
    print(f"wrote {len(ds)} samples to {path}")


def cmd_train(args):
    extra = {"zero_bias": args.zero_bias}
    cfg = _cfg(args, "train", **extra)
    if args.density is not None or args.epochs is not None:
        cfg.train = {**cfg.train}
        if args.density is not None:
            cfg.train["density"] = args.density
        if args.epochs is not None:
            cfg.train["epochs"] = args.epochs
    write_resolved(cfg, cfg.out)
    net, mask, history = train_baseline(cfg)
    train, test = load_data(cfg, cfg.seed)
    tr, te = evaluate(net, mask, 1.0, train), evaluate(net, mask, 1.0, test)
    meta = {"config": cfg.to_dict(), "master_seed": cfg.seed, "train_metric": tr["metric"], "test_metric": te["metric"]}
    save_network(os.path.join(cfg.out, "target.json"), net, mask, meta=meta)
    write_csv(os.path.join(cfg.out, "train_history.csv"),
              [{"epoch": i + 1, "loss": v} for i, v in enumerate(history)], ["epoch", "loss"], meta)
    print(f"train metric {tr['metric']:.6g}  test metric {te['metric']:.6g}")


def cmd_prune(args):
    cfg = _cfg(args, "prune", sparsities=args.sparsity, repetitions=args.repetitions,
               rescale=args.rescale, zero_bias=args.zero_bias)
    t0 = time.time()
    table = run_sweep(cfg, jobs=args.jobs, out_dir=cfg.out)
    _print_table(table)
    print(f"{len(table)} rows written to {os.path.join(cfg.out, 'runs.csv')} in {time.time() - t0:.0f}s")


def cmd_construct(args):
    cfg = _cfg(args, "construct")
    c = {"eps": 0.05, "delta": 0.1, "C": 40.0, "target": None, **cfg.construct}
    for key in ("eps", "delta", "C", "target"):
        if getattr(args, key, None) is not None:
            c[key] = getattr(args, key)
    cfg.construct = c
    if c["target"]:
        target, tmask, _, _ = load_network(c["target"])
        if tmask is not None:
            target = Network(target.widths, [w * m for w, m in zip(target.weights, tmask.weights)],
                             [b * m for b, m in zip(target.biases, tmask.biases)], target.output_linear)
    else:
        target = random_sparse_target([4, 10, 5, 2], 0.5, seed=cfg.seed)
    spec = InitSpec(args.scheme, seed=cfg.seed)
    t0 = time.time()
    ticket = construct(target, c["eps"], c["delta"], c["C"], spec, plan_seed=cfg.seed)
    x = sample_domain(target.widths[0], 10_000, seed=cfg.seed + 1)
    err = sup_error(target, ticket, x)
    prov = {"config": cfg.to_dict(), "master_seed": cfg.seed}
    report = {
        **prov,
        "ok": ticket.ok,
        "failures": len(ticket.plan.failures),
        "sup_error": err,
        "lambda": ticket.lam,
        "weight_sparsity": ticket.weight_sparsity,
        "param_sparsity": ticket.param_sparsity,
        "mother_widths": ticket.mother.net.widths,
        "budget": ticket.meta["budget"],
        "seconds": time.time() - t0,
    }
    write_resolved(cfg, cfg.out)
    write_json(os.path.join(cfg.out, "report.json"), report)
    write_json(os.path.join(cfg.out, "plan.json"), {**prov, **ticket.plan.to_dict()})
    save_network(os.path.join(cfg.out, "ticket.json"), ticket.mother.net, ticket.mask,
                 meta={**prov, "lambda": ticket.lam})
    print(f"ok={ticket.ok} sup error {err:.3g} (eps {c['eps']}) lambda {ticket.lam:.4g} "
          f"param sparsity {ticket.param_sparsity:.3e} weight sparsity {ticket.weight_sparsity:.3e}")
    return 0 if ticket.ok and err <= c["eps"] else 1


def verify_checks(trials=100_000, seed=0):
    """Named checks returning (passed, details)."""
    rng = np.random.default_rng(seed)

    def const():
        r = counterexample_const()
        ok = abs(r.loss - 0.125) == 0 and abs(r.numeric_loss - r.loss) <= 1e-6 and abs(r.quadrature_loss - r.loss) <= 1e-6
        return ok, r.__dict__

    def expo():
        r = counterexample_exp()
        ok = abs(r.quadrature_loss - r.loss) <= 1e-6 and abs(r.numeric_loss - r.loss) <= 1e-6
        return ok, r.__dict__

    def factor():
        worst = 0.0
        grid = np.linspace(-1, 1, 1001)[None, :]
        for _ in range(100):
            depth = int(rng.integers(1, 7))
            widths = [1] + list(rng.integers(1, 33, size=depth - 1)) + [int(rng.integers(1, 5))]
            net = init_network(widths, InitSpec("normal", zero_bias=True, seed=int(rng.integers(1 << 31))), True)
            fa, fb = factorize_univariate(net), factorize_recursive(net)
            worst = max(worst, np.abs(net(grid) - fa(grid)).max(), np.abs(fa.w_plus - fb.w_plus).max())
        return worst <= 1e-9, {"sup_error": worst}

    def scaling():
        worst = 0.0
        for _ in range(100):
            depth = int(rng.integers(1, 9))
            widths = list(rng.integers(1, 20, size=depth + 1))
            net = init_network(widths, InitSpec("normal", seed=int(rng.integers(1 << 31))), bool(rng.integers(2)))
            s = np.exp(rng.uniform(-1, 1, size=depth))
            x = rng.uniform(-1, 1, size=(widths[0], 20))
            ref = np.prod(s) * net(x)
            got = apply_scaling(net, s)(x)
            worst = max(worst, np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300))
            lam = float(np.exp(rng.uniform(-2, 2)))
            got = distribute_lambda(net, lam)(x)
            worst = max(worst, np.abs(got - lam * net(x)).max() / max(np.abs(lam * net(x)).max(), 1e-300))
        return worst <= 1e-9, {"max_relative_error": worst}

    def moment(scheme):
        def check():
            x0 = np.random.default_rng(seed).uniform(-1, 1, size=50)
            r = verify_signal_moment([50, 50, 50, 50], InitSpec(scheme, seed=seed), x0, trials)
            return r.z <= 3, {**r.__dict__, "z": r.z, "deviation": r.deviation}

        return check

    return {
        "counterexample_const": const,
        "counterexample_exp": expo,
        "factorization": factor,
        "scaling_identity": scaling,
        "moment_uniform": moment("uniform"),
        "moment_normal": moment("normal"),
        "moment_looks_linear": moment("looks_linear"),
    }


def cmd_verify(args):
    cfg = _cfg(args, "verify")
    write_resolved(cfg, cfg.out)
    failed = 0
    for name, check in verify_checks(args.trials, cfg.seed).items():
        t0 = time.time()
        ok, details = check()
        failed += not ok
        write_json(os.path.join(cfg.out, "verify", f"{name}.json"),
                   {"check": name, "passed": bool(ok), "details": details, "master_seed": cfg.seed})
        print(f"{'PASS' if ok else 'FAIL'}  {name:<22s} {time.time() - t0:6.1f}s")
    return 1 if failed else 0


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return v


def _print_table(rows):
    cols = ["kind", "sparsity", "rep", "status", "metric", "metric_min", "metric_max", "param_sparsity"]
    print("  ".join(f"{c:>14s}" for c in cols))
    for r in rows:
        cells = []
        for c in cols:
            v = _num(r.get(c, ""))
            cells.append(f"{v:>14.6g}" if isinstance(v, float) and not math.isnan(v) else f"{str(v):>14s}")
        print("  ".join(cells))


def cmd_report(args):
    rows, prov = read_csv(args.runs)
    runs = [dict(r, sparsity=float(r["sparsity"]), metric=_num(r["metric"])) for r in rows if r["kind"] == "run"]
    _print_table(aggregate(runs))
    if prov:
        cfg = prov.get("config", {})
        print(f"dataset {cfg.get('dataset')} init {cfg.get('init')} master seed {prov.get('master_seed')}")


COMMANDS = {
    "dataset": cmd_dataset,
    "train": cmd_train,
    "prune": cmd_prune,
    "construct": cmd_construct,
    "verify": cmd_verify,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
