"""Feature store and exact k-nearest-neighbor lists."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore.checkpoint import FormatError

log = logging.getLogger(__name__)

NORM_TOL = 1e-4
NORM_WARN = 1e-3


class UsageError(ValueError):
    """Invalid call arguments (bad index, missing labels, ...)."""


@dataclass(frozen=True, eq=False)
class FeatureStore:
    """``N x D`` unit-norm float32 features with optional integer identity labels."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        feats = np.ascontiguousarray(feats, dtype=np.float32)
        norms = np.linalg.norm(feats.astype(np.float64), axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise ValueError("features contain zero-norm or non-finite rows")
        off = np.abs(norms - 1.0)
        if off.max(initial=0.0) > NORM_WARN:
            log.warning("renormalizing %d rows with norm deviation > %g", int((off > NORM_WARN).sum()), NORM_WARN)
        bad = off > NORM_TOL
        if bad.any():
            feats = feats.copy()
            feats[bad] = (feats[bad].astype(np.float64) / norms[bad, None]).astype(np.float32)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise ValueError(f"labels length {labels.shape} != instance count {feats.shape[0]}")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Per-node neighbor lists sorted by similarity (desc), ties by index (asc).

    ``hop2`` is always the ``hop2_size`` prefix of ``hop1``.
    """

    hop1_idx: np.ndarray
    hop1_sim: np.ndarray
    hop2_size: int

    @property
    def n(self) -> int:
        return self.hop1_idx.shape[0]

    @property
    def hop1_size(self) -> int:
        return self.hop1_idx.shape[1]

    @property
    def hop2_idx(self) -> np.ndarray:
        return self.hop1_idx[:, : self.hop2_size]

    @property
    def hop2_sim(self) -> np.ndarray:
        return self.hop1_sim[:, : self.hop2_size]

    def _check(self, node: int) -> int:
        if not 0 <= int(node) < self.n:
            raise UsageError(f"node {node} out of range [0, {self.n})")
        return int(node)

    def context_of(self, node: int) -> np.ndarray:
        return self.hop2_idx[self._check(node)]

    def candidates_of(self, node: int) -> np.ndarray:
        return self.hop1_idx[self._check(node)]


def build_knn(store: FeatureStore, hop1_size: int, hop2_size: int, block: int = 1024) -> NeighborGraph:
    n = store.n
    if hop1_size >= n:
        raise ValueError(f"hop1_size={hop1_size} must be < N={n}")
    if not 1 <= hop2_size <= hop1_size:
        raise ValueError(f"need 1 <= hop2_size ({hop2_size}) <= hop1_size ({hop1_size})")
    feats = store.features.astype(np.float64)
    idx = np.empty((n, hop1_size), dtype=np.int64)
    sim = np.empty((n, hop1_size), dtype=np.float32)
    for start in range(0, n, block):
        stop = min(start + block, n)
        s = feats[start:stop] @ feats.T
        s[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # stable sort on -s keeps ascending index among exact ties
        order = np.argsort(-s, axis=1, kind="stable")[:, :hop1_size]
        idx[start:stop] = order
        sim[start:stop] = np.take_along_axis(s, order, axis=1)
    return NeighborGraph(idx, sim, hop2_size)


GRAPH_MAGIC = b"FCTG"
GRAPH_VERSION = 1


def save_graph(graph: NeighborGraph, path) -> None:
    head = GRAPH_MAGIC + struct.pack("<IQII", GRAPH_VERSION, graph.n, graph.hop1_size, graph.hop2_size)
    Path(path).write_bytes(head + graph.hop1_idx.astype("<i8").tobytes() + graph.hop1_sim.astype("<f4").tobytes())


def load_graph(path) -> NeighborGraph:
    buf = Path(path).read_bytes()
    if len(buf) < 24:
        raise FormatError(f"{path}: truncated header, {len(buf)} of 24 bytes")
    if buf[:4] != GRAPH_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at byte 0, expected {GRAPH_MAGIC!r}")
    version, n, hop1, hop2 = struct.unpack_from("<IQII", buf, 4)
    if version != GRAPH_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    expected = 24 + n * hop1 * 12
    if len(buf) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(buf)}")
    idx = np.frombuffer(buf, "<i8", n * hop1, 24).reshape(n, hop1).astype(np.int64)
    sim = np.frombuffer(buf, "<f4", n * hop1, 24 + n * hop1 * 8).reshape(n, hop1).astype(np.float32)
    return NeighborGraph(idx, sim, hop2)
