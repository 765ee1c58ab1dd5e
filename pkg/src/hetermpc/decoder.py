"""Transformer decoder over the graph encoder's node representations.

Each layer: causal self-attention, cross-attention over the memory, and a
feed-forward block, every one followed by residual + layer norm. Memory rows
are all utterance token vectors in posting order (the masked response node's
placeholder rows included) followed by the interlocutor vectors; a config
flag restricts that to CLS rows only for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_ID, EOS_ID
from .encoder import NodeStates
from .layers import (
    AttentionParams,
    FeedForwardParams,
    LayerNormParams,
    TransformerLayerParams,
    causal_mask,
    feed_forward,
    init_attention,
    init_feed_forward,
    init_layer_norm,
    multi_head_attention,
    named_tensors,
    trunc_normal,
)
from .tape import Tensor, concat, default_dtype, layer_norm, matmul, narrow, parameter, take_rows


@dataclass
class DecoderConfig:
    l3: int = 6
    d: int = 64
    heads: int = 2
    max_gen_len: int = 50
    memory_cls_only: bool = False

    def __post_init__(self):
        if self.l3 < 1:
            raise ValueError(f"l3 must be >= 1, got {self.l3}")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    ln_self: LayerNormParams
    cross_attn: AttentionParams
    ln_cross: LayerNormParams
    ffn: FeedForwardParams
    ln_ffn: LayerNormParams


@dataclass
class DecoderParams:
    token_emb: Tensor
    pos_emb: Tensor
    layers: list
    w_out: Tensor
    b_out: Tensor


@dataclass
class Memory:
    """Encoder output rows the decoder cross-attends to."""

    rows: Tensor

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]


def init_decoder_params(cfg: DecoderConfig, vocab_size: int,
                        rng: np.random.Generator) -> DecoderParams:
    layers = []
    for _ in range(cfg.l3):
        layers.append(DecoderLayerParams(
            self_attn=init_attention(rng, cfg.d),
            ln_self=init_layer_norm(cfg.d),
            cross_attn=init_attention(rng, cfg.d),
            ln_cross=init_layer_norm(cfg.d),
            ffn=init_feed_forward(rng, cfg.d),
            ln_ffn=init_layer_norm(cfg.d),
        ))
    return DecoderParams(
        token_emb=trunc_normal(rng, (vocab_size, cfg.d)),
        pos_emb=trunc_normal(rng, (cfg.max_gen_len, cfg.d)),
        layers=layers,
        w_out=trunc_normal(rng, (cfg.d, vocab_size)),
        b_out=parameter(np.zeros(vocab_size, dtype=default_dtype())),
    )


def build_memory(states: NodeStates, cls_only: bool = False) -> Memory:
    """Utterance token rows in posting order, then interlocutor rows."""
    if cls_only:
        rows = [states.cls(m) for m in range(len(states.utterance_tokens))]
    else:
        rows = list(states.utterance_tokens)
    if states.interlocutors.shape[0] > 0:
        rows.append(states.interlocutors)
    return Memory(rows=concat(rows, axis=0))


def decoder_forward(prefix_ids, memory: Memory, params: DecoderParams,
                    cfg: DecoderConfig) -> Tensor:
    """Vocabulary logits at every prefix position; prefix starts with BOS."""
    ids = np.asarray(prefix_ids, dtype=np.intp)
    if ids.size == 0 or ids[0] != BOS_ID:
        raise ValueError("decoder prefix must start with BOS")
    if ids.size > cfg.max_gen_len:
        raise ValueError(f"prefix length {ids.size} exceeds max {cfg.max_gen_len}")
    t = ids.size
    x = take_rows(params.token_emb, ids) + take_rows(params.pos_emb, np.arange(t))
    mask = causal_mask(t)
    for lp in params.layers:
        a = multi_head_attention(x, x, lp.self_attn, cfg.heads, mask)
        x = layer_norm(x + a, lp.ln_self.gain, lp.ln_self.bias)
        c = multi_head_attention(x, memory.rows, lp.cross_attn, cfg.heads)
        x = layer_norm(x + c, lp.ln_cross.gain, lp.ln_cross.bias)
        f = feed_forward(x, lp.ffn)
        x = layer_norm(x + f, lp.ln_ffn.gain, lp.ln_ffn.bias)
    return matmul(x, params.w_out) + params.b_out


def response_log_prob(response_ids, memory: Memory, params: DecoderParams,
                      cfg: DecoderConfig) -> Tensor:
    """Teacher-forced sum of per-token log probabilities (a scalar Tensor)."""
    from .tape import cross_entropy, mul

    ids = list(response_ids)
    if not ids:
        raise ValueError("response is empty")
    if ids[-1] != EOS_ID:
        raise ValueError("response must end with EOS")
    prefix = [BOS_ID] + ids[:-1]
    logits = decoder_forward(prefix, memory, params, cfg)
    return mul(cross_entropy(logits, ids), -float(len(ids)))


def generate_greedy(memory: Memory, params: DecoderParams, cfg: DecoderConfig) -> list:
    """Greedy decode from BOS; stops at EOS or after max_gen_len tokens.

    Argmax ties break toward the lowest token id. Returns content token ids
    (no BOS/EOS).
    """
    prefix = [BOS_ID]
    out = []
    for _ in range(cfg.max_gen_len):
        logits = decoder_forward(prefix, memory, params, cfg)
        step = logits.data[-1]
        token = int(np.argmax(step))  # first occurrence wins: lowest id on ties
        if token == EOS_ID:
            break
        out.append(token)
        if len(prefix) == cfg.max_gen_len:
            break
        prefix.append(token)
    return out


def decoder_named_parameters(params: DecoderParams):
    yield from named_tensors(params, "decoder")
