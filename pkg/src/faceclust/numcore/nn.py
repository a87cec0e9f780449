"""Neural building blocks composed from :mod:`faceclust.numcore.tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, ShapeError, Tensor, _make, as_tensor, matmul, reshape, swapaxes


class ConfigError(ValueError):
    """Parameter shapes disagree with the requested configuration."""


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def scaled_softmax(logits: Tensor, scale_dim: int) -> Tensor:
    """Softmax over the last axis of ``logits / sqrt(scale_dim)``."""
    if scale_dim <= 0:
        raise ValueError("scale_dim must be positive")
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite logits")
    scale = 1.0 / math.sqrt(scale_dim)
    z = x.astype(np.float64) * scale
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y64 = e / e.sum(axis=-1, keepdims=True)
    y = y64.astype(x.dtype)

    def bw(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return ((y * (g - dot) * scale).astype(x.dtype),)

    return _make(y, (logits,), bw)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ConfigError(f"gamma {self.gamma.shape} and beta {self.beta.shape} must be equal 1-d")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")

    @classmethod
    def init(cls, dim: int, epsilon: float = 1e-5, dtype=np.float32) -> "LayerNormParams":
        return cls(Tensor(np.ones(dim, dtype), requires_grad=True),
                   Tensor(np.zeros(dim, dtype), requires_grad=True), epsilon)


def layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    if x.shape[-1] != p.gamma.shape[0]:
        raise ShapeError(f"layer_norm: last dim {x.shape[-1]} != gamma length {p.gamma.shape[0]}")
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * inv
    gamma = p.gamma.data.astype(np.float64)
    out = (xhat * gamma + p.beta.data).astype(x.dtype)
    n = x.shape[-1]
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        g = g.astype(np.float64)
        gxhat = g * gamma
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / n)
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        return gx.astype(x.dtype), ggamma.astype(x.dtype), gbeta.astype(x.dtype)

    return _make(out, (x, p.gamma, p.beta), bw)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale each row (last axis) to unit Euclidean length."""
    xd = x.data.astype(np.float64)
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise NumericError("cannot normalize a zero-norm or non-finite vector")
    y = xd / norm

    def bw(g):
        g = g.astype(np.float64)
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm).astype(x.dtype),

    return _make(y.astype(x.dtype), (x,), bw)


@dataclass
class DropoutSpec:
    ratio: float
    rng: np.random.Generator | None = None
    training: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"dropout ratio must lie in [0, 1), got {self.ratio}")


def dropout(x: Tensor, spec: DropoutSpec | None) -> Tensor:
    if spec is None or not spec.training or spec.ratio == 0.0:
        return x
    keep = 1.0 - spec.ratio
    mask = (spec.rng.random(x.shape) < keep).astype(x.dtype) / np.asarray(keep, dtype=x.dtype)

    def bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), bw)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    slope = as_tensor(slope, x.dtype)
    neg = x.data < 0
    a = slope.data.reshape(())

    def bw(g):
        gx = np.where(neg, g * a, g)
        gs = np.asarray(np.sum(np.where(neg, g * x.data, 0.0), dtype=np.float64))
        return gx, gs.astype(slope.dtype).reshape(slope.shape)

    return _make(np.where(neg, x.data * a, x.data), (x, slope), bw)


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True,
             dtype=np.float32) -> "Linear":
        w = Tensor(xavier_uniform(rng, (fan_in, fan_out), fan_in, fan_out, dtype), requires_grad=True)
        b = Tensor(np.zeros(fan_out, dtype), requires_grad=True) if bias else None
        return cls(w, b)

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


@dataclass
class AttentionParams:
    """Stacked per-head projections.

    ``wq[i]``, ``wk[i]``, ``wv[i]`` are head ``i``'s input projections
    (``d_in x d_head``); ``wo`` maps the concatenated heads to ``d_out``.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int = field(init=False)

    def __post_init__(self):
        self.heads = self.wq.shape[0]
        if self.wq.ndim != 3 or self.wk.ndim != 3 or self.wv.ndim != 3:
            raise ConfigError("per-head projections must be stacked as (heads, d_in, d_head)")
        if not (self.wk.shape[0] == self.wv.shape[0] == self.heads):
            raise ConfigError("head count differs between projections")
        if self.wq.shape[2] != self.wk.shape[2]:
            raise ConfigError(f"query/key head dims differ: {self.wq.shape[2]} vs {self.wk.shape[2]}")
        if self.wo.shape[0] != self.heads * self.wv.shape[2]:
            raise ConfigError(f"output projection expects {self.wo.shape[0]} inputs, "
                              f"heads provide {self.heads * self.wv.shape[2]}")

    @property
    def d_out(self) -> int:
        return self.wo.shape[1]

    def head(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.wq.data[i], self.wk.data[i], self.wv.data[i]

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, heads: int, head_dim: int,
             d_out: int | None = None, dtype=np.float32) -> "AttentionParams":
        d_out = d_model if d_out is None else d_out

        def proj():
            w = xavier_uniform(rng, (heads, d_model, head_dim), d_model, head_dim, dtype)
            return Tensor(w, requires_grad=True)

        wq, wk, wv = proj(), proj(), proj()
        wo = Tensor(xavier_uniform(rng, (heads * head_dim, d_out), heads * head_dim, d_out, dtype),
                    requires_grad=True)
        return cls(wq, wk, wv, wo)

    def tensors(self) -> dict[str, Tensor]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}


def _split_heads(x: Tensor, w: Tensor) -> Tensor:
    # (..., n, d) -> (..., 1, n, d) @ (h, d, m) -> (..., h, n, m)
    return matmul(reshape(x, x.shape[:-2] + (1,) + x.shape[-2:]), w)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams) -> Tensor:
    """``cat(O_1..O_h) W_O`` with ``O_i = softmax(q Wq_i (k Wk_i)^T / sqrt(m)) v Wv_i``.

    Inputs are ``(..., n, d)`` with matching leading axes; output is
    ``(..., n_q, d_out)``.
    """
    if k.shape[-2] != v.shape[-2]:
        raise ConfigError(f"keys and values disagree in row count: {k.shape} vs {v.shape}")
    for name, x, w in (("query", q, params.wq), ("key", k, params.wk), ("value", v, params.wv)):
        if x.shape[-1] != w.shape[1]:
            raise ConfigError(f"{name} dim {x.shape[-1]} != projection input dim {w.shape[1]}")
    qh = _split_heads(q, params.wq)
    kh = _split_heads(k, params.wk)
    vh = _split_heads(v, params.wv)
    weights = scaled_softmax(matmul(qh, swapaxes(kh, -1, -2)), params.wq.shape[2])
    heads = matmul(weights, vh)                    # (..., h, n, m_v)
    heads = swapaxes(heads, -3, -2)                # (..., n, h, m_v)
    cat = reshape(heads, heads.shape[:-2] + (heads.shape[-2] * heads.shape[-1],))
    return matmul(cat, params.wo)
