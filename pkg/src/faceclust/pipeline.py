"""End-to-end helpers shared by the CLI and the benchmark tests."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .cluster import LinkageSet, SweepRow, sweep_threshold
from .graph import FeatureStore, NeighborGraph, build_knn
from .metrics import auc, roc_points
from .model import FaceT, ModelConfig, Variant
from .train import TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(np.round(np.r_[np.arange(0.05, 0.951, 0.05), 0.96, 0.97, 0.98, 0.99,
                                    0.995, 0.998, 0.999], 3).tolist())


def parse_grid(text: str) -> list[float]:
    """``"0.1:0.9:0.1"`` (inclusive range) or ``"0.2,0.5,0.8"``."""
    text = text.strip()
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 10) for i in range(count)]
    return [float(x) for x in text.split(",") if x.strip()]


def predict_links(model: FaceT, store: FeatureStore, graph: NeighborGraph, tau: float = 0.5,
                  workers: int = 1, chunk: int = 256) -> LinkageSet:
    """Score every node's hop1 candidates. Chunks are merged in query order."""
    enhanced = model.encode_all(store, graph) if model.config.variant is not Variant.NAIVE else None
    starts = list(range(0, store.n, chunk))

    def run(s: int) -> np.ndarray:
        q = np.arange(s, min(s + chunk, store.n))
        return model.predict(store, graph, q, chunk=chunk, enhanced=enhanced)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    probs = np.concatenate(parts, axis=0) if parts else np.zeros((0, graph.hop1_size), np.float32)
    return LinkageSet.from_table(np.arange(store.n), graph.hop1_idx, probs, tau)


def run_variant(variant: Variant | str, train_store: FeatureStore, test_store: FeatureStore,
                model_cfg: ModelConfig, train_cfg: TrainConfig, hop1: int, hop2: int,
                grid=DEFAULT_GRID, roc_top_k: int | None = None,
                graphs: tuple[NeighborGraph, NeighborGraph] | None = None) -> dict:
    """Train one variant, predict on the test store and sweep thresholds."""
    variant = Variant(variant)
    if graphs is None:
        graphs = build_knn(train_store, hop1, hop2), build_knn(test_store, hop1, hop2)
    g_train, g_test = graphs
    result = train(train_store, g_train, train_cfg, replace(model_cfg, variant=variant))
    links = predict_links(result.model, test_store, g_test)
    rows, best = sweep_threshold(links, test_store.labels, grid)
    top_k = roc_top_k or g_test.hop1_size
    roc = roc_points(links.queries, links.candidates, links.probs, test_store.labels, top_k)
    log.info("%s: best tau %.3f pairwise F %.4f", variant.value, best.tau, best.pairwise_f)
    return {"variant": variant.value, "model": result.model, "losses": result.losses, "links": links,
            "sweep": rows, "best": best, "roc": roc, "auc": auc(roc)}


def ablation_table(results: list[dict]) -> list[dict]:
    table = []
    for r in results:
        best: SweepRow = r["best"]
        table.append({"variant": r["variant"], "tau": best.tau, "pairwise_f": best.pairwise_f,
                      "bcubed_f": best.bcubed_f, "nmi": best.nmi, "clusters": best.clusters,
                      "auc": r["auc"]})
    return table


def ablation_csv(table: list[dict]) -> str:
    lines = ["variant,tau,pairwise_f,bcubed_f,nmi,clusters,auc"]
    lines += [f"{r['variant']},{r['tau']:.4f},{r['pairwise_f']:.6f},{r['bcubed_f']:.6f},{r['nmi']:.6f},"
              f"{r['clusters']},{r['auc']:.6f}" for r in table]
    return "\n".join(lines) + "\n"
