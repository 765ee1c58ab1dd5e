"""Shared transformer building blocks (post-norm, tanh-GELU feed-forward)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tape import (
    Tensor,
    concat,
    default_dtype,
    gelu,
    layer_norm,
    matmul,
    mul,
    parameter,
    reshape,
    softmax,
    transpose,
)

NEG_ATTENTION = -1e9  # additive mask value; vanishes after the softmax max-shift


@dataclass
class AttentionParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class TransformerLayerParams:
    attn: AttentionParams
    ln_attn: LayerNormParams
    ffn: FeedForwardParams
    ln_ffn: LayerNormParams


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    """Normal(0, std) resampled into [-2*std, 2*std]."""
    a = rng.normal(0.0, std, size=shape)
    bad = np.abs(a) > 2.0 * std
    while bad.any():
        a[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(a) > 2.0 * std
    return parameter(a.astype(default_dtype()))


def init_attention(rng, d) -> AttentionParams:
    z = lambda: parameter(np.zeros(d, dtype=default_dtype()))
    return AttentionParams(
        w_q=trunc_normal(rng, (d, d)), b_q=z(),
        w_k=trunc_normal(rng, (d, d)), b_k=z(),
        w_v=trunc_normal(rng, (d, d)), b_v=z(),
        w_o=trunc_normal(rng, (d, d)), b_o=z(),
    )


def init_layer_norm(d) -> LayerNormParams:
    return LayerNormParams(
        gain=parameter(np.ones(d, dtype=default_dtype())),
        bias=parameter(np.zeros(d, dtype=default_dtype())),
    )


def init_feed_forward(rng, d, hidden=None) -> FeedForwardParams:
    hidden = hidden or 4 * d
    return FeedForwardParams(
        w1=trunc_normal(rng, (d, hidden)),
        b1=parameter(np.zeros(hidden, dtype=default_dtype())),
        w2=trunc_normal(rng, (hidden, d)),
        b2=parameter(np.zeros(d, dtype=default_dtype())),
    )


def init_transformer_layer(rng, d) -> TransformerLayerParams:
    return TransformerLayerParams(
        attn=init_attention(rng, d),
        ln_attn=init_layer_norm(d),
        ffn=init_feed_forward(rng, d),
        ln_ffn=init_layer_norm(d),
    )


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(t, d) -> (heads, t, d/heads)."""
    t, d = x.shape
    return transpose(reshape(x, (t, heads, d // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(heads, t, dh) -> (t, heads*dh)."""
    h, t, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (t, h * dh))


def causal_mask(t: int) -> np.ndarray:
    """(t, t) additive mask blocking attention to future positions."""
    m = np.zeros((t, t), dtype=default_dtype())
    m[np.triu_indices(t, k=1)] = NEG_ATTENTION
    return m


def multi_head_attention(x_q: Tensor, x_kv: Tensor, p: AttentionParams,
                         heads: int, mask: np.ndarray | None = None) -> Tensor:
    d = x_q.shape[-1]
    dh = d // heads
    q = split_heads(matmul(x_q, p.w_q) + p.b_q, heads)
    k = split_heads(matmul(x_kv, p.w_k) + p.b_k, heads)
    v = split_heads(matmul(x_kv, p.w_v) + p.b_v, heads)
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    ctx = merge_heads(matmul(softmax(scores), v))
    return matmul(ctx, p.w_o) + p.b_o


def feed_forward(x: Tensor, p: FeedForwardParams) -> Tensor:
    return matmul(gelu(matmul(x, p.w1) + p.b1), p.w2) + p.b2


def encoder_layer(x: Tensor, p: TransformerLayerParams, heads: int,
                  mask: np.ndarray | None = None) -> Tensor:
    a = multi_head_attention(x, x, p.attn, heads, mask)
    x = layer_norm(x + a, p.ln_attn.gain, p.ln_attn.bias)
    f = feed_forward(x, p.ffn)
    return layer_norm(x + f, p.ln_ffn.gain, p.ln_ffn.bias)


def named_tensors(obj, prefix=""):
    """Yield (dotted name, Tensor) for every Tensor in a nested container."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif hasattr(obj, "__dataclass_fields__"):
        for f in obj.__dataclass_fields__:
            yield from named_tensors(getattr(obj, f), f"{prefix}.{f}" if prefix else f)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}")
    elif isinstance(obj, dict):
        for key, item in obj.items():
            yield from named_tensors(item, f"{prefix}.{key}")
