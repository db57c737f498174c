"""Command line interface: ``deepgat <command> [options]``.

Every command writes a JSON report (to ``--out`` or stdout). Exit status is 0
on success, 2 for usage errors (bad flags, missing files, invalid
configuration) and 1 for runtime failures; failures also print one JSON line
``{"error": ..., "message": ..., "exit_code": ...}`` on stderr.

The seed comes from ``--seed``, else the ``DEEPGAT_SEED`` environment
variable, else 0. ``--config`` reads a flat ``key=value`` file whose keys are
option names; explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import analysis
from .datasets import DatasetBundle, SynthConfig, generate_synthetic, load_dataset, save_dataset
from .exceptions import ConfigError, DeepGATError, InputError
from .graph import brute_force_paths, circulant, count_paths, erdos_renyi, graph_statistics
from .models import ModelConfig
from .serialization import build_report, dumps_report, load_checkpoint, load_config, save_checkpoint, write_csv
from .training import TrainConfig, predict_trace, train

COMMANDS = (
    "train",
    "eval",
    "curve",
    "verify-paths",
    "verify-lemma1",
    "verify-lemma2",
    "diagnose-kl",
    "estimate-bayes",
    "synth",
    "stats",
)


class UsageError(DeepGATError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# defaults applied after the config file; argparse defaults stay None so the
# precedence flag > config > default can be resolved
MODEL_DEFAULTS = {
    "model": "deepgat",
    "L": 2,
    "hidden": 16,
    "heads": 1,
    "attention": "dot_product",
    "activation": "elu",
    "label_propagation": True,
    "label_propagation_max_layer": 3,
    "epochs": 400,
    "lr": 5e-3,
    "weight_decay": 5e-4,
    "delta": 1.0,
    "patience": 100,
}
SYNTH_DEFAULTS = {
    "n": 1000,
    "classes": 2,
    "p_in": 0.03,
    "p_out": 0.025,
    "dim": 16,
    "separation": 3.0,
    "train_fraction": 0.1,
    "val_fraction": 0.1,
}


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--out", type=Path, help="report path (default: stdout)")
    parser.add_argument("--seed", type=int, help="random seed (fallback: $DEEPGAT_SEED, then 0)")
    parser.add_argument("--deterministic", action="store_true", help="omit timestamps and timings from the report")
    parser.add_argument("--config", type=Path, help="flat key=value file with option defaults")


def _data_options(parser: argparse.ArgumentParser):
    parser.add_argument("--data", type=Path, help="dataset directory (default: synthetic planted partition)")
    parser.add_argument("--n", type=int)
    parser.add_argument("--classes", type=int)
    parser.add_argument("--p-in", type=float)
    parser.add_argument("--p-out", type=float)
    parser.add_argument("--dim", type=int)
    parser.add_argument("--separation", type=float)
    parser.add_argument("--train-fraction", type=float)
    parser.add_argument("--val-fraction", type=float)


def _model_options(parser: argparse.ArgumentParser, layers: bool = True):
    parser.add_argument("--model", choices=("gat", "deepgat", "gcn"))
    if layers:
        parser.add_argument("--L", type=int, help="number of layers")
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--heads", type=int)
    parser.add_argument("--attention", help="additive|dot_product|scaled_dot_product (aliases ad, dp, sd)")
    parser.add_argument("--activation", choices=("elu", "tanh", "identity"))
    parser.add_argument("--label-propagation", dest="label_propagation", action="store_const", const=True)
    parser.add_argument("--no-label-propagation", dest="label_propagation", action="store_const", const=False)
    parser.add_argument("--label-propagation-max-layer", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--weight-decay", type=float)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepgat", description="Deep graph attention experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    _common(p), _data_options(p), _model_options(p)
    p.add_argument("--checkpoint", type=Path, help="checkpoint path (default: model.npz next to --out)")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    _common(p), _data_options(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("curve", help="micro-F1 against depth")
    _common(p), _data_options(p), _model_options(p, layers=False)
    p.add_argument("--layers", default="1,2,3,5,10", help="comma-separated depths")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", type=Path, help="also write the table as CSV")

    p = sub.add_parser("verify-paths", help="cross-check path counting against enumeration")
    _common(p)
    p.add_argument("--n", type=int, default=7, help="maximum number of nodes")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--max-length", type=int, default=4)

    for name, help_text in (("verify-lemma1", "Monte Carlo check of uniform attention"), ("verify-lemma2", "Monte Carlo check of oracle attention")):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--graphs", type=int, default=1 if name == "verify-lemma1" else 20)
        p.add_argument("--n", type=int, default=30, help="nodes (maximum for random graphs)")
        p.add_argument("--layers", type=int, default=3)
        p.add_argument("--samples", type=int, default=20_000)
        p.add_argument("--dim", type=int, default=2)
        if name == "verify-lemma1":
            p.add_argument("--degree", type=int, default=4, help="even degree of the ring lattice")

    p = sub.add_parser("diagnose-kl", help="KL divergence between shallow and deep attention")
    _common(p), _data_options(p), _model_options(p, layers=False)
    p.add_argument("--L-max", type=int, default=10)
    p.add_argument("--layer", type=int, default=2)

    p = sub.add_parser("estimate-bayes", help="Bayes error bounds from a 1-NN error")
    _common(p), _data_options(p)
    p.add_argument("--e-n", type=float, help="1-NN error rate; computed from --checkpoint when omitted")
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    _common(p), _data_options(p)
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("stats", help="dataset statistics row")
    _common(p), _data_options(p)
    p.add_argument("--hub-threshold", type=int, default=30)
    p.add_argument("--degree-convention", choices=("neighborhood", "doubled"), default="neighborhood")
    return parser


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("DEEPGAT_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"DEEPGAT_SEED must be an integer, got {env!r}") from None


def _resolve(args, defaults: dict, config: dict) -> dict:
    out = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        out[key] = value
    return out


def _dataset(args, config: dict, seed: int) -> DatasetBundle:
    if args.data is not None:
        return load_dataset(args.data)
    s = _resolve(args, SYNTH_DEFAULTS, config)
    cfg = SynthConfig(
        n=s["n"],
        n_classes=s["classes"],
        p_in=s["p_in"],
        p_out=s["p_out"],
        d=s["dim"],
        separation=s["separation"],
        seed=seed,
        train_fraction=s["train_fraction"],
        val_fraction=s["val_fraction"],
    )
    return generate_synthetic(cfg)


def _configs(args, config: dict, seed: int, n_classes: int):
    m = _resolve(args, MODEL_DEFAULTS, config)
    model_config = ModelConfig(
        n_layers=m["L"],
        n_classes=n_classes,
        hidden_dim=m["hidden"],
        heads=m["heads"],
        attention=m["attention"],
        activation=m["activation"],
        use_label_propagation=bool(m["label_propagation"]),
        label_propagation_max_layer=m["label_propagation_max_layer"],
    )
    train_config = TrainConfig(
        epochs=m["epochs"], lr=m["lr"], weight_decay=m["weight_decay"], delta=m["delta"], seed=seed, patience=m["patience"]
    )
    return m["model"], model_config, train_config


def _split_scores(kind, dataset, params, model_config) -> dict:
    trace = predict_trace(kind, dataset, params, model_config)
    pred = trace.output.value.argmax(axis=1)
    out = {}
    for split in ("train", "val", "test"):
        mask = getattr(dataset, f"{split}_mask")
        out[f"{split}_micro_f1"] = analysis.micro_f1(pred, dataset.labels, mask) if mask.any() else None
    return out


def cmd_train(args, config, seed):
    dataset = _dataset(args, config, seed)
    kind, model_config, train_config = _configs(args, config, seed, dataset.n_classes)
    params, report = train(kind, dataset, model_config, train_config)
    ckpt = args.checkpoint or ((args.out.parent if args.out else Path(".")) / "model.npz")
    save_checkpoint(ckpt, params, kind, model_config.to_dict())
    results = {"checkpoint": str(ckpt), "dataset": dataset.name, "training": report.to_dict(include_time=not args.deterministic)}
    results.update(_split_scores(kind, dataset, params, model_config))
    return results, {"model": kind, "model_config": model_config.to_dict(), "train_config": train_config.to_dict()}


def cmd_eval(args, config, seed):
    dataset = _dataset(args, config, seed)
    params, meta = load_checkpoint(args.checkpoint)
    kind = meta["model_kind"]
    model_config = ModelConfig.from_dict(meta["model_config"])
    results = _split_scores(kind, dataset, params, model_config)
    results["nn_error"] = analysis.representation_error(kind, dataset, params, model_config) if dataset.test_mask.any() else None
    return results, {"model": kind, "model_config": model_config.to_dict()}


def _parse_layers(text: str) -> List[int]:
    try:
        layers = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--layers must be comma-separated integers, got {text!r}") from None
    if not layers or min(layers) < 1:
        raise UsageError("--layers needs positive depths")
    return sorted(set(layers))


def cmd_curve(args, config, seed):
    dataset = _dataset(args, config, seed)
    kind, model_config, train_config = _configs(args, config, seed, dataset.n_classes)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    curve = analysis.oversmoothing_curve(kind, dataset, _parse_layers(args.layers), model_config, train_config, jobs=args.jobs)
    if args.csv:
        write_csv(args.csv, curve.rows)
    return curve.to_dict(), {"model": kind, "model_config": model_config.to_dict(), "train_config": train_config.to_dict()}


def cmd_verify_paths(args, config, seed):
    if args.n < 1 or args.trials < 1 or args.max_length < 0:
        raise UsageError("--n and --trials must be positive, --max-length non-negative")
    rng = np.random.default_rng(seed)
    checked, mismatches = 0, []
    for trial in range(args.trials):
        n = int(rng.integers(1, args.n + 1))
        g = erdos_renyi(n, float(rng.uniform(0.1, 0.9)), rng)
        labels = rng.integers(0, 2, size=n)
        for origin in range(n):
            for length in range(args.max_length + 1):
                for flt in (None, (labels, int(labels[origin]))):
                    fast = count_paths(g, origin, length, class_filter=flt).counts
                    slow = brute_force_paths(g, origin, length, class_filter=flt).counts
                    checked += 1
                    if not np.array_equal(fast, slow):
                        mismatches.append({"trial": trial, "origin": origin, "length": length, "filtered": flt is not None})
    results = {"checked": checked, "mismatches": mismatches[:20], "n_mismatches": len(mismatches), "passed": not mismatches}
    return results, {"n": args.n, "trials": args.trials, "max_length": args.max_length}


def _lemma_inputs(rng, dim, layers):
    means = np.zeros((2, dim))
    means[0, 0], means[1, 0] = -1.0, 1.0
    a = rng.standard_normal((dim, dim))
    covs = np.stack([np.eye(dim), np.eye(dim) + 0.3 * (a @ a.T) / dim])
    weights = [analysis.random_orthogonal(dim, rng) for _ in range(layers)]
    return means, covs, weights


def _summarize(results) -> dict:
    rows = [r.to_dict() for r in results]
    active = [r for r in results if not r.degenerate]
    passed = sum(r.passed for r in active)
    return {
        "nodes": rows,
        "n_checked": len(active),
        "n_degenerate": len(results) - len(active),
        "n_passed": passed,
        "pass_rate": passed / len(active) if active else None,
    }


def _balanced_labels(rng, n):
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    return labels


def cmd_verify_lemma1(args, config, seed):
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(args.graphs):
        g = circulant(args.n, args.degree)
        labels = _balanced_labels(rng, args.n)
        means, covs, weights = _lemma_inputs(rng, args.dim, args.layers)
        results += analysis.verify_lemma1(g, labels, means, covs, weights, args.layers, args.samples, int(rng.integers(2**31)))
    return _summarize(results), {"n": args.n, "degree": args.degree, "layers": args.layers, "samples": args.samples}


def cmd_verify_lemma2(args, config, seed):
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(args.graphs):
        n = int(rng.integers(4, args.n + 1))
        g = erdos_renyi(n, float(rng.uniform(0.1, 0.5)), rng)
        labels = _balanced_labels(rng, n)
        means, covs, weights = _lemma_inputs(rng, args.dim, args.layers)
        for layer in range(1, args.layers + 1):
            results += analysis.verify_lemma2(g, labels, means, covs, weights, layer, args.samples, int(rng.integers(2**31)))
    return _summarize(results), {"graphs": args.graphs, "n": args.n, "layers": args.layers, "samples": args.samples}


def cmd_diagnose_kl(args, config, seed):
    dataset = _dataset(args, config, seed)
    kind, model_config, train_config = _configs(args, config, seed, dataset.n_classes)
    if kind == "gcn":
        raise UsageError("diagnose-kl needs an attention model (gat or deepgat)")
    if args.L_max < args.layer or args.layer < 1:
        raise UsageError("need 1 <= --layer <= --L-max")
    models = []
    for L in (args.layer, args.L_max):
        cfg = replace(model_config, n_layers=L)
        params, _ = train(kind, dataset, cfg, train_config)
        models.append((params, cfg))
    stats = analysis.kl_boxstats(kind, dataset, models[0], models[1], layer=args.layer, pair=(f"L={args.layer}", f"L={args.L_max}"))
    return stats.to_dict(), {"model": kind, "model_config": model_config.to_dict(), "train_config": train_config.to_dict()}


def cmd_estimate_bayes(args, config, seed):
    if args.e_n is not None:
        e_n = args.e_n
        classes = _resolve(args, {"classes": SYNTH_DEFAULTS["classes"]}, config)["classes"]
    else:
        if args.checkpoint is None:
            raise UsageError("estimate-bayes needs --e-n or --checkpoint")
        dataset = _dataset(args, config, seed)
        params, meta = load_checkpoint(args.checkpoint)
        model_config = ModelConfig.from_dict(meta["model_config"])
        e_n = analysis.representation_error(meta["model_kind"], dataset, params, model_config)
        classes = dataset.n_classes
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        bound = analysis.bayes_bounds(e_n, classes)
    results = bound.to_dict() if hasattr(bound, "to_dict") else dict(bound.__dict__)
    results.update({"e_n": e_n, "n_classes": classes, "warnings": [str(w.message) for w in caught]})
    return results, None


def cmd_synth(args, config, seed):
    args.data = None
    dataset = _dataset(args, config, seed)
    save_dataset(dataset, args.out_dir)
    stats = graph_statistics(dataset.graph)
    return {"out_dir": str(args.out_dir), "stats": stats, "provenance": dataset.provenance}, _resolve(args, SYNTH_DEFAULTS, config)


def _table_row(name, stats, d, n_classes) -> str:
    return (
        f"{name}\tn={stats.n_nodes}\t|E|={stats.n_edges}\td={d}\t|C|={n_classes}\t"
        f"avg_degree={stats.avg_degree:.1f}\tmax_degree={stats.max_degree}\t"
        f"hub_node_rate={100 * stats.hub_node_rate:.2f}%\tdensity={stats.density:.2e}"
    )


def cmd_stats(args, config, seed):
    dataset = _dataset(args, config, seed)
    stats = graph_statistics(dataset.graph, hub_threshold=args.hub_threshold, degree_convention=args.degree_convention)
    print(_table_row(dataset.name, stats, dataset.features.shape[1], dataset.n_classes))
    results = {"name": dataset.name, "n_features": int(dataset.features.shape[1]), "n_classes": dataset.n_classes, "stats": stats}
    return results, {"hub_threshold": args.hub_threshold, "degree_convention": args.degree_convention}


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "curve": cmd_curve,
    "verify-paths": cmd_verify_paths,
    "verify-lemma1": cmd_verify_lemma1,
    "verify-lemma2": cmd_verify_lemma2,
    "diagnose-kl": cmd_diagnose_kl,
    "estimate-bayes": cmd_estimate_bayes,
    "synth": cmd_synth,
    "stats": cmd_stats,
}

# commands whose results encode a verdict; a failed verdict exits 1
_VERDICT = {"verify-paths"}


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit status."""
    try:
        args = build_parser().parse_args(argv)
        seed = resolve_seed(args.seed)
        config = load_config(args.config) if args.config else {}
        results, used_config = HANDLERS[args.command](args, config, seed)
        report = build_report(args.command, results, seed, used_config, deterministic=args.deterministic)
        text = dumps_report(report)
        if args.out:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(text, encoding="utf-8")
        elif args.command != "stats":
            sys.stdout.write(text)
    except (UsageError, InputError, ConfigError, FileNotFoundError) as exc:
        return _fail(exc, 2)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except (DeepGATError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        return _fail(exc, 1)
    if args.command in _VERDICT and not results.get("passed", True):
        print(json.dumps({"error": "VerificationFailed", "message": f"{results['n_mismatches']} mismatches", "exit_code": 1}), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
