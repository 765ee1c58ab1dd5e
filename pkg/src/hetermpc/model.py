"""End-to-end wiring: record -> graph -> encoder states -> decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    ConversationRecord,
    Vocabulary,
    encode_response_node,
    encode_response_target,
    encode_utterance,
)
from .decoder import (
    DecoderConfig,
    DecoderParams,
    Memory,
    build_memory,
    decoder_named_parameters,
    generate_greedy,
    init_decoder_params,
    response_log_prob,
)
from .encoder import (
    EncoderConfig,
    HeterParams,
    NodeStates,
    encode_graph,
    encoder_named_parameters,
    init_encoder_params,
)
from .graph import HeteroGraph, build_graph, strip_interlocutors
from .tape import Tensor, cross_entropy, mul


@dataclass
class ModelParams:
    encoder: HeterParams
    decoder: DecoderParams

    def named_parameters(self) -> dict:
        """Dotted name -> Tensor, deduplicated by identity."""
        out = {}
        seen = set()
        for name, t in list(encoder_named_parameters(self.encoder)) + list(
            decoder_named_parameters(self.decoder)
        ):
            if id(t) in seen:
                continue
            seen.add(id(t))
            out[name] = t
        return out


def init_model_params(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
                      vocab_size: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        encoder=init_encoder_params(enc_cfg, vocab_size, rng),
        decoder=init_decoder_params(dec_cfg, vocab_size, rng),
    )


@dataclass
class PreparedSample:
    graph: HeteroGraph
    sequences: list
    response_ids: list


class ResponseGenerator:
    """Bundles vocab, configs and parameters behind prepare/loss/generate."""

    def __init__(self, vocab: Vocabulary, enc_cfg: EncoderConfig,
                 dec_cfg: DecoderConfig, params: ModelParams,
                 use_interlocutor_nodes: bool = True):
        if enc_cfg.d != dec_cfg.d or enc_cfg.heads != dec_cfg.heads:
            raise ValueError("encoder and decoder must agree on d and heads")
        self.vocab = vocab
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.params = params
        self.use_interlocutor_nodes = use_interlocutor_nodes

    def prepare(self, record: ConversationRecord) -> PreparedSample:
        graph = build_graph(record)
        if not self.use_interlocutor_nodes:
            graph = strip_interlocutors(graph)
        sequences = [
            encode_utterance(u.text, self.vocab, self.enc_cfg.max_utt_len)
            for u in record.utterances
        ]
        sequences.append(encode_response_node(self.enc_cfg.max_utt_len))
        response_ids = (
            encode_response_target(record.response.text, self.vocab,
                                   self.dec_cfg.max_gen_len)
            if record.response.text is not None
            else []
        )
        return PreparedSample(graph, sequences, response_ids)

    def encode(self, sample: PreparedSample) -> NodeStates:
        return encode_graph(sample.graph, sample.sequences,
                            self.params.encoder, self.enc_cfg)

    def memory(self, sample: PreparedSample) -> Memory:
        return build_memory(self.encode(sample), cls_only=self.dec_cfg.memory_cls_only)

    def loss(self, sample: PreparedSample) -> Tensor:
        """Mean per-token cross entropy of the gold response (teacher forcing)."""
        if not sample.response_ids:
            raise ValueError("sample has no gold response to train on")
        from .corpus import BOS_ID

        memory = self.memory(sample)
        prefix = [BOS_ID] + sample.response_ids[:-1]
        from .decoder import decoder_forward

        logits = decoder_forward(prefix, memory, self.params.decoder, self.dec_cfg)
        return cross_entropy(logits, sample.response_ids)

    def log_prob(self, sample: PreparedSample) -> float:
        memory = self.memory(sample)
        return float(response_log_prob(sample.response_ids, memory,
                                       self.params.decoder, self.dec_cfg).item())

    def generate(self, sample: PreparedSample) -> list:
        memory = self.memory(sample)
        return generate_greedy(memory, self.params.decoder, self.dec_cfg)
