"""Threshold linking and Union-Find connected components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import UsageError


@dataclass(frozen=True)
class LinkageSet:
    """Rows ``(query, candidate, p)`` plus the linking threshold."""

    queries: np.ndarray
    candidates: np.ndarray
    probs: np.ndarray
    tau: float = 0.5

    def __post_init__(self):
        if not (self.queries.shape == self.candidates.shape == self.probs.shape):
            raise ValueError("query, candidate and probability arrays must align")
        if self.probs.size and (self.probs.min() < 0 or self.probs.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def from_table(cls, queries: np.ndarray, hop1_idx: np.ndarray, probs: np.ndarray, tau: float = 0.5):
        """Flatten a ``(Q, hop1)`` probability table aligned with ``hop1_idx[queries]``."""
        queries = np.asarray(queries, dtype=np.int64)
        k = probs.shape[1]
        return cls(np.repeat(queries, k), hop1_idx[queries].reshape(-1).astype(np.int64),
                   np.asarray(probs, dtype=np.float32).reshape(-1), tau)

    def __len__(self) -> int:
        return self.probs.size

    def to_csv(self) -> str:
        lines = ["q,k,p"]
        lines += [f"{q},{k},{float(p):.9g}" for q, k, p in zip(self.queries, self.candidates, self.probs)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, tau: float = 0.5) -> "LinkageSet":
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:] if ln.strip()]
        q = np.array([int(r[0]) for r in rows], dtype=np.int64)
        k = np.array([int(r[1]) for r in rows], dtype=np.int64)
        p = np.array([float(r[2]) for r in rows], dtype=np.float32)
        return cls(q, k, p, tau)


@dataclass(frozen=True)
class ClusterPartition:
    assignment: np.ndarray

    @property
    def count(self) -> int:
        return int(self.assignment.max()) + 1 if self.assignment.size else 0

    def to_text(self) -> str:
        return "".join(f"{i}\t{c}\n" for i, c in enumerate(self.assignment))

    @classmethod
    def from_text(cls, text: str) -> "ClusterPartition":
        pairs = sorted((int(a), int(b)) for a, b in (ln.split("\t") for ln in text.splitlines() if ln.strip()))
        return cls(np.array([c for _, c in pairs], dtype=np.int64))


def threshold_links(links: LinkageSet, tau: float | None = None) -> np.ndarray:
    """``(E, 2)`` edges for rows with probability strictly above ``tau``."""
    tau = links.tau if tau is None else tau
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    keep = links.probs > tau
    return np.stack([links.queries[keep], links.candidates[keep]], axis=1)


class UnionFind:
    """Disjoint sets over ``0..n-1`` with union by rank and path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def union_find_clusters(n: int, edges) -> ClusterPartition:
    """Connected components; cluster ids follow each component's smallest member."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise UsageError(f"edge endpoint out of range [0, {n})")
    uf = UnionFind(n)
    for a, b in edges.tolist():
        uf.union(a, b)
    ids: dict[int, int] = {}
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = ids.setdefault(uf.find(i), len(ids))
    return ClusterPartition(out)


def cluster_links(n: int, links: LinkageSet, tau: float | None = None) -> ClusterPartition:
    return union_find_clusters(n, threshold_links(links, tau))


@dataclass(frozen=True)
class SweepRow:
    tau: float
    pairwise_f: float
    bcubed_f: float
    nmi: float
    clusters: int


def sweep_threshold(links: LinkageSet, truth, taus) -> tuple[list[SweepRow], SweepRow]:
    """Metrics per threshold and the row with the best pairwise F."""
    from .metrics import bcubed_f, nmi, pairwise_f

    truth = np.asarray(truth)
    rows = []
    for tau in taus:
        part = cluster_links(truth.size, links, float(tau))
        rows.append(SweepRow(float(tau), pairwise_f(part, truth)[2], bcubed_f(part, truth)[2],
                             nmi(part, truth), part.count))
    if not rows:
        raise ValueError("empty threshold grid")
    best = max(rows, key=lambda r: r.pairwise_f)
    return rows, best


def sweep_csv(rows: list[SweepRow]) -> str:
    out = ["tau,pairwise_f,bcubed_f,nmi,clusters"]
    out += [f"{r.tau:.4f},{r.pairwise_f:.6f},{r.bcubed_f:.6f},{r.nmi:.6f},{r.clusters}" for r in rows]
    return "\n".join(out) + "\n"
