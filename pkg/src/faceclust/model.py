"""Relation Encoder, Linkage Predictor and the distance head.

Shapes follow a batch-first convention: a query batch of ``B`` nodes has
features ``(B, D)``, contexts ``(B, hop2, D)`` and candidates ``(B, hop1, D)``.
The single-query forms accept the same arrays without the leading axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .graph import FeatureStore, NeighborGraph, UsageError
from .numcore import (AttentionParams, ConfigError, DropoutSpec, LayerNormParams, Linear, Tensor,
                      broadcast_to, concat, dropout, l2_normalize, layer_norm, load_checkpoint,
                      multi_head_attention, prelu, reshape, save_checkpoint, scaled_softmax, square,
                      take, tsum)


class Variant(str, Enum):
    FULL = "full"
    ONLY_RE = "only_re"
    ONLY_LP = "only_lp"
    NAIVE = "naive"


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    heads: int = 2
    head_dim: int = 16
    depth: int = 2
    dropout: float = 0.4
    variant: Variant = Variant.FULL
    hidden: int | None = None
    query_in_lp: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.depth < 1:
            raise ConfigError("encoder depth must be >= 1")
        if self.heads < 1 or self.head_dim < 1:
            raise ConfigError("heads and head_dim must be positive")

    @property
    def hidden_width(self) -> int:
        return self.dim if self.hidden is None else self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class EncoderParams:
    """Self-attention stack, plus the cross-attention read-out for the RE."""

    layers: list[tuple[AttentionParams, LayerNormParams]]
    cross: AttentionParams | None = None
    final_norm: LayerNormParams | None = None

    @property
    def depth(self) -> int:
        return len(self.layers)

    @classmethod
    def init(cls, rng, cfg: ModelConfig, with_readout: bool, dtype=np.float32) -> "EncoderParams":
        layers = [(AttentionParams.init(rng, cfg.dim, cfg.heads, cfg.head_dim, dtype=dtype),
                   LayerNormParams.init(cfg.dim, cfg.ln_eps, dtype)) for _ in range(cfg.depth)]
        if not with_readout:
            return cls(layers)
        return cls(layers, AttentionParams.init(rng, cfg.dim, cfg.heads, cfg.head_dim, dtype=dtype),
                   LayerNormParams.init(cfg.dim, cfg.ln_eps, dtype))

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (attn, norm) in enumerate(self.layers):
            for k, t in attn.tensors().items():
                out[f"{prefix}.layer{i}.attn.{k}"] = t
            out[f"{prefix}.layer{i}.norm.gamma"] = norm.gamma
            out[f"{prefix}.layer{i}.norm.beta"] = norm.beta
        if self.cross is not None:
            for k, t in self.cross.tensors().items():
                out[f"{prefix}.cross.{k}"] = t
            out[f"{prefix}.final_norm.gamma"] = self.final_norm.gamma
            out[f"{prefix}.final_norm.beta"] = self.final_norm.beta
        return out


@dataclass
class ClassifierParams:
    hidden: Linear
    slope: Tensor
    out: Linear

    @classmethod
    def init(cls, rng, dim: int, hidden: int | None = None, dtype=np.float32) -> "ClassifierParams":
        hidden = dim if hidden is None else hidden
        return cls(Linear.init(rng, 2 * dim, hidden, dtype=dtype),
                   Tensor(np.full(1, 0.25, dtype), requires_grad=True),
                   Linear.init(rng, hidden, 2, dtype=dtype))

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.hidden.weight": self.hidden.weight, f"{prefix}.hidden.bias": self.hidden.bias,
                f"{prefix}.slope": self.slope,
                f"{prefix}.out.weight": self.out.weight, f"{prefix}.out.bias": self.out.bias}


def _self_attention_stack(x: Tensor, enc: EncoderParams, drop: DropoutSpec | None) -> Tensor:
    for attn, norm in enc.layers:
        x = layer_norm(dropout(multi_head_attention(x, x, x, attn), drop) + x, norm)
    return x


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def relation_encode(f_q, context, enc: EncoderParams, drop: DropoutSpec | None = None) -> Tensor:
    """Enhance ``f_q`` with its refined hop2 context.

    The context passes through the self-attention stack, ``f_q`` attends to
    the result, and the read-out is added back to ``f_q`` and layer-normalized.
    """
    f_q, context = _as_tensor(f_q), _as_tensor(context)
    single = f_q.ndim == 1
    if single:
        f_q, context = reshape(f_q, (1,) + f_q.shape), reshape(context, (1,) + context.shape)
    if context.shape[-2] == 0:
        raise UsageError("relation_encode needs a non-empty context")
    if context.shape[-1] != f_q.shape[-1] or context.shape[0] != f_q.shape[0]:
        raise ConfigError(f"context {context.shape} does not match query {f_q.shape}")
    if enc.cross is None:
        raise ConfigError("encoder has no cross-attention read-out")
    refined = _self_attention_stack(context, enc, drop)
    q = reshape(f_q, (f_q.shape[0], 1, f_q.shape[1]))
    readout = multi_head_attention(q, refined, refined, enc.cross)
    g = layer_norm(reshape(readout, f_q.shape) + f_q, enc.final_norm)
    return reshape(g, g.shape[1:]) if single else g


def linkage_forward(g_q, candidates, enc: EncoderParams, cls: ClassifierParams,
                    drop: DropoutSpec | None = None, query_in_context: bool = False) -> Tensor:
    """Link probability of each candidate to the query, order-aligned.

    With ``query_in_context`` the query row joins the candidate sequence in
    the self-attention stack and is dropped before classification.
    """
    g_q, candidates = _as_tensor(g_q), _as_tensor(candidates)
    single = g_q.ndim == 1
    if single:
        g_q, candidates = reshape(g_q, (1,) + g_q.shape), reshape(candidates, (1,) + candidates.shape)
    b, k, d = candidates.shape
    if k == 0:
        raise UsageError("linkage_forward needs at least one candidate")
    if query_in_context:
        seq = concat([reshape(g_q, (b, 1, d)), candidates], axis=1)
        refined = take(_self_attention_stack(seq, enc, drop), (slice(None), slice(1, None)))
    else:
        refined = _self_attention_stack(candidates, enc, drop)
    query = broadcast_to(reshape(g_q, (b, 1, d)), (b, k, d))
    edge = concat([query, refined], axis=-1)
    logits = cls.out(prelu(cls.hidden(edge), cls.slope))
    probs = scaled_softmax(logits, 1)
    p = reshape(take(probs, (Ellipsis, 0)), (b, k))
    return reshape(p, (k,)) if single else p


def distance_head(g_q, g_k) -> tuple[Tensor, Tensor]:
    """``(1 - e, e)`` with ``e = 0.25 * |n(g_q) - n(g_k)|^2`` and ``n`` the L2 normalization."""
    g_q, g_k = _as_tensor(g_q), _as_tensor(g_k)
    diff = l2_normalize(g_q) - l2_normalize(g_k)
    e = tsum(square(diff), axis=-1) * 0.25
    return 1.0 - e, e


def _raw_input(feats: np.ndarray) -> np.ndarray:
    """Unit rows scaled by sqrt(D), the row norm of a layer-norm output.

    Without this the query half of an only_lp edge embedding is sqrt(D) times
    smaller than the candidate half, which leaves the first attention block.
    """
    return feats * np.asarray(np.sqrt(feats.shape[-1]), feats.dtype)


@dataclass
class FaceT:
    """Parameter container plus the batched link-probability function for each variant."""

    config: ModelConfig
    re: EncoderParams | None = None
    lp: EncoderParams | None = None
    cls: ClassifierParams | None = None
    _params: dict[str, Tensor] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        out: dict[str, Tensor] = {}
        if self.re is not None:
            out.update(self.re.tensors("re"))
        if self.lp is not None:
            out.update(self.lp.tensors("lp"))
        if self.cls is not None:
            out.update(self.cls.tensors("cls"))
        self._params = out

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "FaceT":
        v = config.variant
        re = EncoderParams.init(rng, config, True, dtype) if v in (Variant.FULL, Variant.ONLY_RE) else None
        lp = EncoderParams.init(rng, config, False, dtype) if v in (Variant.FULL, Variant.ONLY_LP) else None
        head = ClassifierParams.init(rng, config.dim, config.hidden_width, dtype) if lp is not None else None
        return cls(config, re, lp, head)

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def decayed(self) -> set[str]:
        """Names of weight matrices subject to weight decay (not norms, biases, slope)."""
        return {k for k, t in self._params.items() if t.ndim >= 2}

    def astype(self, dtype) -> "FaceT":
        for t in self._params.values():
            t.data = t.data.astype(dtype)
        return self

    # -- scoring ------------------------------------------------------------
    def link_probs(self, feats: np.ndarray, context: np.ndarray, queries: np.ndarray,
                   candidates: np.ndarray, drop: DropoutSpec | None = None) -> Tensor:
        """Probabilities ``(B, k)`` that ``candidates[b, j]`` links to ``queries[b]``.

        ``context`` is the ``(N, hop2)`` context index table. Each distinct node
        among queries and candidates is encoded once from its own context.
        """
        v = self.config.variant
        if v is Variant.NAIVE:
            raise ConfigError("the naive variant scores from graph similarities; use predict()")
        queries = np.asarray(queries, dtype=np.int64)
        candidates = np.asarray(candidates, dtype=np.int64)
        if v is Variant.ONLY_LP:
            scaled = _raw_input(feats)
            g_q = Tensor(scaled[queries])
            g_c = Tensor(scaled[candidates])
        else:
            nodes, inverse = np.unique(np.concatenate([queries, candidates.ravel()]), return_inverse=True)
            g = relation_encode(Tensor(feats[nodes]), Tensor(feats[context[nodes]]), self.re, drop)
            g_q = take(g, inverse[: queries.size])
            g_c = take(g, inverse[queries.size:].reshape(candidates.shape))
        if v is Variant.ONLY_RE:
            b, k = candidates.shape
            p_pos, _ = distance_head(broadcast_to(reshape(g_q, (b, 1, g_q.shape[-1])), g_c.shape), g_c)
            return p_pos
        return linkage_forward(g_q, g_c, self.lp, self.cls, drop, self.config.query_in_lp)

    def encode_all(self, store: FeatureStore, graph: NeighborGraph, chunk: int = 512) -> np.ndarray:
        """Eval-mode enhanced features for every node; rescaled raw features without an encoder."""
        if self.re is None:
            return _raw_input(store.features)
        out = np.empty_like(store.features)
        ctx = graph.hop2_idx
        for s in range(0, store.n, chunk):
            idx = np.arange(s, min(s + chunk, store.n))
            out[idx] = relation_encode(store.features[idx], store.features[ctx[idx]], self.re).data
        return out

    def predict(self, store: FeatureStore, graph: NeighborGraph, queries=None, chunk: int = 256,
                enhanced: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode probabilities ``(len(queries), hop1)`` aligned with ``graph.hop1_idx``."""
        queries = np.arange(store.n) if queries is None else np.asarray(queries, dtype=np.int64)
        if queries.size and (queries.min() < 0 or queries.max() >= store.n):
            raise UsageError("query index out of range")
        cands = graph.hop1_idx[queries]
        v = self.config.variant
        if v is Variant.NAIVE:
            return np.clip(graph.hop1_sim[queries], 0.0, 1.0).astype(np.float32)
        g = self.encode_all(store, graph) if enhanced is None else enhanced
        out = np.empty(cands.shape, dtype=np.float32)
        for s in range(0, queries.size, chunk):
            sl = slice(s, s + chunk)
            q, c = queries[sl], cands[sl]
            if v is Variant.ONLY_RE:
                out[sl] = distance_head(g[q][:, None, :], g[c])[0].data
            else:
                out[sl] = linkage_forward(g[q], g[c], self.lp, self.cls, query_in_context=self.config.query_in_lp).data
        return out

    def predict_query(self, store: FeatureStore, graph: NeighborGraph, q: int) -> list[tuple[int, int, float]]:
        """``(q, k, p)`` rows for one query, each node encoded from its own context."""
        if not 0 <= q < store.n:
            raise UsageError(f"query {q} out of range [0, {store.n})")
        cands = graph.candidates_of(q)
        if self.config.variant is Variant.NAIVE:
            probs = self.predict(store, graph, [q])[0]
        else:
            probs = self.link_probs(store.features, graph.hop2_idx, np.array([q]), cands[None, :]).data[0]
        return [(int(q), int(k), float(p)) for k, p in zip(cands, probs)]

    # -- persistence ----------------------------------------------------------
    def save(self, path) -> None:
        save_checkpoint(path, {k: t.data for k, t in self._params.items()}, self.config.to_dict())

    @classmethod
    def load(cls, path) -> "FaceT":
        tensors, header = load_checkpoint(path)
        model = cls.init(ModelConfig(**header), np.random.default_rng(0))
        params = model.parameters()
        if set(tensors) != set(params):
            raise ConfigError(f"checkpoint tensors {sorted(set(tensors) ^ set(params))} do not match the model")
        for k, t in params.items():
            if tensors[k].shape != t.shape:
                raise ConfigError(f"{k}: checkpoint shape {tensors[k].shape} != model shape {t.shape}")
            t.data = tensors[k].copy()
        return model
