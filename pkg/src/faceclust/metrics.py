"""Pairwise F-score, BCubed F-score, NMI and linkage ROC points."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .graph import UsageError


def _contingency(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pred = np.asarray(getattr(pred, "assignment", pred))
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise UsageError(f"prediction length {pred.shape} != truth length {truth.shape}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max(initial=-1) + 1, t.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table, table.sum(axis=1), table.sum(axis=0)


def _f(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def _pairs(x: np.ndarray) -> int:
    return int(sum(int(v) * (int(v) - 1) // 2 for v in x.ravel()))


def pairwise_f(pred, truth) -> tuple[float, float, float]:
    table, rows, cols = _contingency(pred, truth)
    tp, pred_pairs, true_pairs = _pairs(table), _pairs(rows), _pairs(cols)
    precision = tp / pred_pairs if pred_pairs else 0.0
    recall = tp / true_pairs if true_pairs else 0.0
    return precision, recall, _f(precision, recall)


def bcubed_f(pred, truth) -> tuple[float, float, float]:
    table, rows, cols = _contingency(pred, truth)
    n = int(table.sum())
    if n == 0:
        return 0.0, 0.0, 0.0
    sq = table.astype(np.float64) ** 2
    precision = float((sq / rows[:, None]).sum() / n)
    recall = float((sq / cols[None, :]).sum() / n)
    return precision, recall, _f(precision, recall)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return -math.fsum(p * np.log(p))


def nmi(pred, truth) -> float:
    table, rows, cols = _contingency(pred, truth)
    n = int(table.sum())
    if n == 0:
        raise UsageError("nmi needs at least one instance")
    h_pred, h_true = _entropy(rows, n), _entropy(cols, n)
    if h_pred == 0.0 or h_true == 0.0:
        return 1.0 if table.shape == (1, 1) else 0.0
    nz = table > 0
    pij = table[nz] / n
    outer = (rows[:, None] * cols[None, :])[nz] / (n * n)
    # fsum is exactly rounded, so swapping the arguments gives a bit-identical score
    mi = math.fsum(pij * np.log(pij / outer))
    return max(0.0, mi / math.sqrt(h_pred * h_true))


@dataclass(frozen=True)
class MetricsReport:
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f: float
    bcubed_precision: float
    bcubed_recall: float
    bcubed_f: float
    nmi: float
    instances: int
    predicted_clusters: int
    true_clusters: int

    def to_text(self) -> str:
        return "".join(f"{k}: {_fmt(v)}\n" for k, v in asdict(self).items())

    def to_csv(self) -> str:
        d = asdict(self)
        return ",".join(d) + "\n" + ",".join(_fmt(v) for v in d.values()) + "\n"


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.6f}"


def evaluate(pred, truth) -> MetricsReport:
    truth = np.asarray(truth)
    pred_arr = np.asarray(getattr(pred, "assignment", pred))
    return MetricsReport(*pairwise_f(pred_arr, truth), *bcubed_f(pred_arr, truth), nmi(pred_arr, truth),
                         int(truth.size), int(np.unique(pred_arr).size), int(np.unique(truth).size))


def roc_points(queries, candidates, probs, truth, top_k: int) -> list[tuple[float, float, float]]:
    """``(threshold, fpr, tpr)`` with a link predicted when ``p >= threshold``.

    Only each query's ``top_k`` candidates by probability are scored. The
    first row uses an infinite threshold and yields ``(0, 0)``.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    queries = np.asarray(queries)
    candidates = np.asarray(candidates)
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth)
    order = np.lexsort((candidates, -probs, queries))
    q_sorted = queries[order]
    starts = np.r_[0, np.flatnonzero(np.diff(q_sorted)) + 1]
    rank = np.arange(order.size) - np.repeat(starts, np.diff(np.r_[starts, order.size]))
    keep = order[rank < top_k]
    p = probs[keep]
    y = truth[queries[keep]] == truth[candidates[keep]]
    pos, neg = int(y.sum()), int((~y).sum())
    by_p = np.argsort(-p, kind="stable")
    p, y = p[by_p], y[by_p]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(p)), p.size - 1] if p.size else np.array([], dtype=int)
    points = [(math.inf, 0.0, 0.0)]
    for i in last:
        points.append((float(p[i]), fp[i] / neg if neg else 0.0, tp[i] / pos if pos else 0.0))
    return points


def auc(points) -> float:
    fpr = np.array([pt[1] for pt in points])
    tpr = np.array([pt[2] for pt in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
