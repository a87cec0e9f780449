"""Supervised training of linkage probabilities.

Random streams are split from one ``SeedSequence(seed)``: child 0 initializes
parameters, child 1 drives dropout, child 2 shuffles queries each epoch and
child 3 draws the per-batch feature rotations.

Similarity rankings are invariant to orthogonal transforms of the feature
space, so each batch sees the features under a fresh random rotation. This
keeps a small training set from being memorized by identity direction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from .graph import FeatureStore, NeighborGraph, UsageError
from .model import FaceT, ModelConfig, Variant
from .numcore import DropoutSpec, NumericError, Tensor, backward, clip, log as tlog, tmean

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 0.002
    warmup_steps: int = 500
    epochs: int = 60
    weight_decay: float = 0.0005
    momentum: float = 0.9
    optimizer: str = "adamw"
    rotate: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingSample:
    query: int
    candidates: np.ndarray
    labels: np.ndarray


@dataclass
class TrainResult:
    model: FaceT
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    def trace_csv(self) -> str:
        rows = ["epoch,mean_loss,lr"]
        rows += [f"{i},{loss:.8f},{lr:.8g}" for i, (loss, lr) in enumerate(zip(self.losses, self.lrs))]
        return "\n".join(rows) + "\n"


def labeled_queries(store: FeatureStore) -> np.ndarray:
    if store.labels is None:
        raise UsageError("training needs identity labels")
    return np.flatnonzero(store.labels >= 0)


def link_labels(store: FeatureStore, queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """1 where the candidate shares the query's identity."""
    lab = store.labels
    return (lab[candidates] == lab[queries][:, None]) & (lab[candidates] >= 0)


def make_samples(store: FeatureStore, graph: NeighborGraph,
                 rng: np.random.Generator | None = None) -> Iterator[TrainingSample]:
    """One sample per labeled node, in a shuffled order when ``rng`` is given."""
    queries = labeled_queries(store)
    if rng is not None:
        queries = queries[rng.permutation(queries.size)]
    cands = graph.hop1_idx[queries]
    labels = link_labels(store, queries, cands).astype(np.float32)
    for q, c, y in zip(queries, cands, labels):
        yield TrainingSample(int(q), c, y)


def linkage_loss(probs, labels) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
    if not isinstance(probs, Tensor):
        probs = Tensor(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=probs.dtype)
    if labels.shape != probs.shape:
        raise UsageError(f"probabilities {probs.shape} and labels {labels.shape} differ in shape")
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = tlog(p) * labels + tlog(1.0 - p) * (1.0 - labels)
    return tmean(ll) * -1.0


def lr_at(step: int, cfg: TrainConfig, total_steps: int) -> float:
    w = cfg.warmup_steps
    if step < w:
        return cfg.base_lr * (step + 1) / w
    span = max(total_steps - w, 1)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - w) / span))


class SGD:
    """Momentum SGD with decoupled weight decay on a named subset of parameters."""

    def __init__(self, params: dict[str, Tensor], momentum: float, weight_decay: float, decayed: set[str]):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decayed = decayed
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float) -> None:
        if lr == 0.0:
            return
        for k, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            v = self.velocity[k]
            v *= self.momentum
            v += g
            update = lr * v
            if self.weight_decay and k in self.decayed:
                update = update + lr * self.weight_decay * t.data
            t.data = (t.data - update).astype(t.data.dtype)


class AdamW:
    """Adam with decoupled weight decay on a named subset of parameters."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float, decayed: set[str],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.decayed = decayed
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(t.shape) for k, t in params.items()}
        self.v = {k: np.zeros(t.shape) for k, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float) -> None:
        if lr == 0.0:
            return
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad.astype(np.float64)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and k in self.decayed:
                update += lr * self.weight_decay * t.data
            t.data = (t.data - update).astype(t.data.dtype)


OPTIMIZERS = ("sgd", "adamw")


def streams(seed: int) -> tuple[np.random.Generator, ...]:
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))


def random_rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def train(store: FeatureStore, graph: NeighborGraph, cfg: TrainConfig, model_cfg: ModelConfig,
          model: FaceT | None = None, on_epoch: Callable[[int, FaceT], None] | None = None) -> TrainResult:
    init_rng, drop_rng, shuffle_rng, aug_rng = streams(cfg.seed)
    if model is None:
        model = FaceT.init(model_cfg, init_rng)
    result = TrainResult(model)
    if model.config.variant is Variant.NAIVE:
        return result
    queries = labeled_queries(store)
    if queries.size == 0:
        raise UsageError("no labeled queries to train on")
    steps_per_epoch = math.ceil(queries.size / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    if cfg.optimizer == "sgd":
        opt = SGD(model.parameters(), cfg.momentum, cfg.weight_decay, model.decayed())
    else:
        opt = AdamW(model.parameters(), cfg.weight_decay, model.decayed())
    drop = DropoutSpec(model.config.dropout, drop_rng, training=True)
    step = 0
    for epoch in range(cfg.epochs):
        order = queries[shuffle_rng.permutation(queries.size)]
        total_loss, lr = 0.0, 0.0
        for b in range(steps_per_epoch):
            q = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            cands = graph.hop1_idx[q]
            y = link_labels(store, q, cands)
            feats = store.features
            if cfg.rotate:
                feats = (feats @ random_rotation(aug_rng, store.d)).astype(np.float32)
            opt.zero_grad()
            try:
                loss = linkage_loss(model.link_probs(feats, graph.hop2_idx, q, cands, drop), y)
            except NumericError as exc:
                raise TrainingError(f"numeric failure at step {step}: {exc}") from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}")
            backward(loss)
            lr = lr_at(step, cfg, total)
            opt.step(lr)
            total_loss += value * q.size
            step += 1
        result.losses.append(total_loss / queries.size)
        result.lrs.append(lr)
        log.info("epoch %d loss %.5f lr %.3g", epoch, result.losses[-1], lr)
        if on_epoch is not None:
            on_epoch(epoch, model)
    return result
