"""Command line entry point: ``faceclust <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 file format error, 3 numeric or
training failure. Every subcommand writes ``<out>.manifest.json`` holding the
fully resolved configuration; timestamps only go to the log on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import ClusterPartition, LinkageSet, cluster_links, sweep_csv, sweep_threshold
from .data import FORMAT_VERSION, SyntheticSpec, generate, load_features, save_features
from .graph import GRAPH_VERSION, UsageError, build_knn, load_graph, save_graph
from .metrics import auc, evaluate, roc_points
from .model import FaceT, ModelConfig, Variant
from .numcore import VERSION as CHECKPOINT_VERSION
from .numcore import FormatError, NumericError
from .pipeline import DEFAULT_GRID, ablation_csv, ablation_table, parse_grid, predict_links, run_variant
from .plotting import plot_ablation, plot_loss, plot_roc, plot_sweep
from .train import TrainConfig, TrainingError, streams, train

log = logging.getLogger("faceclust")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _write_manifest(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func", "verbose")}
    manifest = {"tool": "faceclust", "version": __version__, "config": config,
                "formats": {"features": FORMAT_VERSION, "labels": FORMAT_VERSION,
                            "graph": GRAPH_VERSION, "checkpoint": CHECKPOINT_VERSION}}
    if extra:
        manifest.update(extra)
    _sibling(out, ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _labels_path(args) -> Path | None:
    return getattr(args, "labels", None)


def _load_store(args, need_labels: bool = False):
    store = load_features(args.features, _labels_path(args))
    if need_labels and store.labels is None:
        raise UsageError("--labels is required")
    return store


def _graph_for(args, store):
    if getattr(args, "graph", None) and Path(args.graph).exists():
        graph = load_graph(args.graph)
        if graph.n != store.n:
            raise FormatError(f"{args.graph}: graph has {graph.n} nodes, features have {store.n}")
        return graph
    return build_knn(store, args.hop1, args.hop2)


def _model_config(args, dim: int) -> ModelConfig:
    return ModelConfig(dim=dim, heads=args.heads, head_dim=args.head_dim, depth=args.depth,
                       dropout=args.dropout, variant=Variant(args.variant), hidden=args.hidden)


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, base_lr=args.lr, warmup_steps=args.warmup_steps,
                       epochs=args.epochs, weight_decay=args.weight_decay, optimizer=args.optimizer,
                       rotate=not args.no_rotate, seed=args.seed)


# -- subcommands --------------------------------------------------------------
def cmd_gen_data(args) -> None:
    spec = SyntheticSpec.from_file(args.config) if args.config else SyntheticSpec(
        identities=args.identities, min_samples=args.min_samples, max_samples=args.max_samples,
        dim=args.dim, sigma_clean=args.sigma_clean, hard_fraction=args.hard_fraction,
        sigma_hard=args.sigma_hard, seed=args.seed)
    store = generate(spec)
    labels = args.labels or args.out.with_suffix(".labels")
    save_features(store, args.out, labels)
    log.info("generated %d instances of dim %d -> %s, %s", store.n, store.d, args.out, labels)
    _write_manifest(args.out, args, {"synthetic": spec.to_dict()})


def cmd_build_knn(args) -> None:
    store = _load_store(args)
    save_graph(build_knn(store, args.hop1, args.hop2), args.out)
    _write_manifest(args.out, args)


def cmd_train(args) -> None:
    store = _load_store(args, need_labels=True)
    graph = _graph_for(args, store)
    cfg = _train_config(args)
    mcfg = _model_config(args, store.d)
    log.info("train config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    log.info("model config %s", json.dumps(mcfg.to_dict(), sort_keys=True))

    def snapshot(epoch: int, model: FaceT) -> None:
        if args.checkpoint_every and (epoch + 1) % args.checkpoint_every == 0:
            model.save(_sibling(args.out, f".epoch{epoch + 1}"))

    result = train(store, graph, cfg, mcfg, on_epoch=snapshot)
    result.model.save(args.out)
    _sibling(args.out, ".loss.csv").write_text(result.trace_csv())
    if result.losses:
        plot_loss(result.losses, result.lrs, _sibling(args.out, ".loss.png"))
    _write_manifest(args.out, args, {"train": cfg.to_dict(), "model": mcfg.to_dict()})


def _model_for(args, dim: int) -> FaceT:
    if args.checkpoint:
        model = FaceT.load(args.checkpoint)
        if model.config.dim != dim:
            raise FormatError(f"{args.checkpoint}: model dim {model.config.dim} != feature dim {dim}")
        return model
    if Variant(args.variant) is Variant.NAIVE:
        return FaceT.init(_model_config(args, dim), np.random.default_rng(0))
    log.warning("no --checkpoint given: scoring with freshly initialized %s parameters", args.variant)
    return FaceT.init(_model_config(args, dim), streams(args.seed)[0])


def cmd_predict(args) -> None:
    store = _load_store(args)
    graph = _graph_for(args, store)
    model = _model_for(args, store.d)
    links = predict_links(model, store, graph, args.tau, workers=args.workers)
    args.out.write_text(links.to_csv())
    _write_manifest(args.out, args, {"model": model.config.to_dict()})


def _read_links(args) -> LinkageSet:
    return LinkageSet.from_csv(Path(args.links).read_text(), args.tau)


def cmd_cluster(args) -> None:
    store = _load_store(args)
    part = cluster_links(store.n, _read_links(args), args.tau)
    args.out.write_text(part.to_text())
    log.info("%d clusters over %d instances", part.count, store.n)
    _write_manifest(args.out, args)


def cmd_evaluate(args) -> None:
    truth = _load_store(args, need_labels=True).labels
    part = ClusterPartition.from_text(Path(args.partition).read_text())
    if part.assignment.size != truth.size:
        raise UsageError(f"partition covers {part.assignment.size} instances, labels {truth.size}")
    report = evaluate(part, truth)
    args.out.write_text(report.to_text())
    args.out.with_suffix(".csv").write_text(report.to_csv())
    sys.stdout.write(report.to_text())
    _write_manifest(args.out, args)


def cmd_sweep(args) -> None:
    truth = _load_store(args, need_labels=True).labels
    grid = parse_grid(args.tau_grid) if args.tau_grid else list(DEFAULT_GRID)
    rows, best = sweep_threshold(_read_links(args), truth, grid)
    args.out.write_text(sweep_csv(rows))
    plot_sweep(rows, args.out.with_suffix(".png"))
    sys.stdout.write(f"best tau {best.tau:g}: pairwise F {best.pairwise_f:.4f} BCubed F {best.bcubed_f:.4f} "
                     f"NMI {best.nmi:.4f}\n")
    _write_manifest(args.out, args, {"best_tau": best.tau})


def cmd_roc(args) -> None:
    truth = _load_store(args, need_labels=True).labels
    links = _read_links(args)
    points = roc_points(links.queries, links.candidates, links.probs, truth, args.top_k)
    lines = ["threshold,fpr,tpr"] + [f"{t:.9g},{f:.6f},{p:.6f}" for t, f, p in points]
    args.out.write_text("\n".join(lines) + "\n")
    plot_roc({Path(args.links).stem: points}, args.out.with_suffix(".png"))
    sys.stdout.write(f"auc {auc(points):.4f}\n")
    _write_manifest(args.out, args)


def cmd_ablate(args) -> None:
    train_store = _load_store(args, need_labels=True)
    test_store = load_features(args.test_features, args.test_labels) if args.test_features else train_store
    if test_store.labels is None:
        raise UsageError("--test-labels is required with --test-features")
    graphs = build_knn(train_store, args.hop1, args.hop2), build_knn(test_store, args.hop1, args.hop2)
    grid = parse_grid(args.tau_grid) if args.tau_grid else list(DEFAULT_GRID)
    cfg = _train_config(args)
    mcfg = _model_config(args, train_store.d)
    results = [run_variant(v, train_store, test_store, mcfg, cfg, args.hop1, args.hop2, grid,
                           args.top_k, graphs) for v in ("naive", "only_re", "only_lp", "full")]
    table = ablation_table(results)
    args.out.write_text(ablation_csv(table))
    plot_ablation(table, args.out.with_suffix(".png"))
    plot_roc({r["variant"]: r["roc"] for r in results}, args.out.with_suffix(".roc.png"))
    sys.stdout.write(ablation_csv(table))
    _write_manifest(args.out, args, {"train": cfg.to_dict(), "model": mcfg.to_dict()})


# -- parser -------------------------------------------------------------------
def _add_model_flags(p) -> None:
    p.add_argument("--variant", choices=[v.value for v in Variant], default="full")
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--hidden", type=int, default=512, help="classifier hidden width")
    p.add_argument("--dropout", type=float, default=0.4)


def _add_train_flags(p) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--warmup-steps", type=int, default=100)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--optimizer", choices=["adamw", "sgd"], default="adamw")
    p.add_argument("--no-rotate", action="store_true", help="disable random-rotation augmentation")


def _add_graph_flags(p) -> None:
    p.add_argument("--graph", type=Path, help="cached neighbor graph (built when absent)")
    p.add_argument("--hop1", type=int, default=20)
    p.add_argument("--hop2", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faceclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("gen-data", cmd_gen_data, "generate a synthetic labeled feature set")
    p.add_argument("--labels", type=Path)
    p.add_argument("--config", type=Path, help="JSON file with generator parameters")
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--min-samples", type=int, default=16)
    p.add_argument("--max-samples", type=int, default=24)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--sigma-clean", type=float, default=0.1)
    p.add_argument("--hard-fraction", type=float, default=0.2)
    p.add_argument("--sigma-hard", type=float, default=0.4)

    p = command("build-knn", cmd_build_knn, "build and cache the hop1/hop2 neighbor graph")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--hop1", type=int, default=20)
    p.add_argument("--hop2", type=int, default=5)

    p = command("train", cmd_train, "train a model variant")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--checkpoint-every", type=int, default=0, help="also save every N epochs")
    _add_graph_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("predict", cmd_predict, "score hop1 candidates, writing q,k,p rows")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    _add_graph_flags(p)
    _add_model_flags(p)

    p = command("cluster", cmd_cluster, "threshold links and extract Union-Find clusters")
    p.add_argument("--features", type=Path, required=True, help="feature file (instance count)")
    p.add_argument("--links", type=Path, required=True)
    p.add_argument("--tau", type=float, default=0.5)

    p = command("evaluate", cmd_evaluate, "pairwise F, BCubed F and NMI of a partition")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--partition", type=Path, required=True)

    for name, func, help_ in (("sweep", cmd_sweep, "metrics over a threshold grid"),
                              ("roc", cmd_roc, "ROC points of linkage predictions")):
        p = command(name, func, help_)
        p.add_argument("--features", type=Path, required=True)
        p.add_argument("--labels", type=Path, required=True)
        p.add_argument("--links", type=Path, required=True)
        p.add_argument("--tau", type=float, default=0.5)
        p.add_argument("--tau-grid", help="lo:hi:step or comma list")
        p.add_argument("--top-k", type=int, default=80)

    p = command("ablate", cmd_ablate, "naive / only_re / only_lp / full comparison")
    p.add_argument("--features", type=Path, required=True, help="training features")
    p.add_argument("--labels", type=Path, required=True, help="training labels")
    p.add_argument("--test-features", type=Path)
    p.add_argument("--test-labels", type=Path)
    p.add_argument("--tau-grid")
    p.add_argument("--top-k", type=int, default=80)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--hop1", type=int, default=20)
    p.add_argument("--hop2", type=int, default=5)
    _add_model_flags(p)
    _add_train_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:      # --help/--version exit 0, bad flags exit 1
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    log.info("%s config %s", args.command, json.dumps(
        {k: str(v) if isinstance(v, Path) else v for k, v in sorted(vars(args).items()) if k != "func"},
        sort_keys=True))
    try:
        args.func(args)
    except FormatError as exc:
        log.error("format error: %s", exc)
        return EXIT_FORMAT
    except (TrainingError, NumericError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (UsageError, ValueError, FileNotFoundError) as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
