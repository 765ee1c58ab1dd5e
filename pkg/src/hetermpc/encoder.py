"""Graph encoder: node initialization plus iterated heterogeneous attention.

Utterance nodes are token matrices whose first row (the CLS position) serves
as the node-level vector; interlocutor nodes are single vectors drawn from a
speaking-order embedding table shared across conversations. Each of the L2
graph iterations updates all nodes synchronously (Jacobi style) from the
previous iteration's states:

  per edge (s, e, t):   k = h_s W^K_τ(s) + b,  q = h_t W^Q_τ(t) + b
                        logit per head = k_h W^ATT_e[h-block] q_h^T * mu_e/sqrt(dh)
                        message = (h_s W^V_τ(s) + b) W^MSG_e
  per target t:         softmax over incoming logits per head, weighted sum
                        of messages, then FFN_τ(t) plus residual
  utterance refresh:    [old CLS; new CLS] W_com + b_com replaces the CLS row
                        and the token matrix passes one more transformer layer
                        so the absorbed context reaches the other tokens.

Multi-head treatment of the edge projection: W^ATT_e is stored d x d and each
head uses its diagonal (dh x dh) block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import EDGE_SIGNATURES, EdgeType, HeteroGraph, NodeId, NodeKind, StructureError
from .layers import (
    FeedForwardParams,
    TransformerLayerParams,
    encoder_layer,
    feed_forward,
    init_feed_forward,
    init_transformer_layer,
    named_tensors,
    trunc_normal,
)
from .tape import (
    Tensor,
    concat,
    default_dtype,
    matmul,
    mul,
    narrow,
    parameter,
    reshape,
    softmax,
    sum_,
    take_rows,
    transpose,
)

UTR = NodeKind.UTR
ITR = NodeKind.ITR


@dataclass
class EncoderConfig:
    d: int = 64
    heads: int = 2
    l1: int = 9
    l2: int = 3
    max_interlocutors: int = 10
    max_utt_len: int = 50
    tie_node_types: bool = False
    tie_edge_types: bool = False
    per_iteration_graph_params: bool = False

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.l1 < 1:
            raise ValueError(f"l1 must be >= 1, got {self.l1}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")


@dataclass
class NodeTypeParams:
    w_k: Tensor
    b_k: Tensor
    w_q: Tensor
    b_q: Tensor
    w_v: Tensor
    b_v: Tensor
    ffn: FeedForwardParams


@dataclass
class EdgeTypeParams:
    w_att: Tensor
    w_msg: Tensor
    mu: Tensor  # learnable attention scale, initialized to 1


@dataclass
class GraphLayerParams:
    node: dict  # 'utr'/'itr' (or 'shared' when node types are tied)
    edge: dict  # edge-type value (or 'shared' when edge types are tied)
    w_com: Tensor
    b_com: Tensor
    refresh: TransformerLayerParams

    def node_params(self, kind: NodeKind) -> NodeTypeParams:
        if "shared" in self.node:
            return self.node["shared"]
        return self.node[kind.value.lower()]

    def edge_params(self, etype: EdgeType) -> EdgeTypeParams:
        if "shared" in self.edge:
            return self.edge["shared"]
        return self.edge[etype.value]


@dataclass
class HeterParams:
    """All encoder weights, including the embedding tables."""

    token_emb: Tensor
    pos_emb: Tensor
    itr_emb: Tensor
    init_layers: list
    graph_layers: list  # length 1, or l2 when per-iteration parameters are on

    def layer_for_iteration(self, i: int) -> GraphLayerParams:
        return self.graph_layers[i if len(self.graph_layers) > 1 else 0]


@dataclass
class NodeStates:
    """Per-utterance token matrices (k_m x d) plus an (I x d) interlocutor matrix."""

    utterance_tokens: list
    interlocutors: Tensor

    def cls(self, m: int) -> Tensor:
        return narrow(self.utterance_tokens[m], 0, 0, 1)

    def node_vector(self, node: NodeId) -> Tensor:
        """Node-level representation as a (1, d) tensor."""
        if node.kind is UTR:
            return self.cls(node.index)
        return narrow(self.interlocutors, 0, node.index, 1)


def _init_node_type(rng, d) -> NodeTypeParams:
    z = lambda: parameter(np.zeros(d, dtype=default_dtype()))
    return NodeTypeParams(
        w_k=trunc_normal(rng, (d, d)), b_k=z(),
        w_q=trunc_normal(rng, (d, d)), b_q=z(),
        w_v=trunc_normal(rng, (d, d)), b_v=z(),
        ffn=init_feed_forward(rng, d),
    )


def _init_edge_type(rng, d) -> EdgeTypeParams:
    return EdgeTypeParams(
        w_att=trunc_normal(rng, (d, d)),
        w_msg=trunc_normal(rng, (d, d)),
        mu=parameter(np.ones(1, dtype=default_dtype())),
    )


def _init_graph_layer(rng, cfg: EncoderConfig) -> GraphLayerParams:
    d = cfg.d
    if cfg.tie_node_types:
        node = {"shared": _init_node_type(rng, d)}
    else:
        node = {"utr": _init_node_type(rng, d), "itr": _init_node_type(rng, d)}
    if cfg.tie_edge_types:
        edge = {"shared": _init_edge_type(rng, d)}
    else:
        edge = {e.value: _init_edge_type(rng, d) for e in EdgeType}
    return GraphLayerParams(
        node=node,
        edge=edge,
        w_com=trunc_normal(rng, (2 * d, d)),
        b_com=parameter(np.zeros(d, dtype=default_dtype())),
        refresh=init_transformer_layer(rng, d),
    )


def init_encoder_params(cfg: EncoderConfig, vocab_size: int,
                        rng: np.random.Generator) -> HeterParams:
    n_graph = cfg.l2 if (cfg.per_iteration_graph_params and cfg.l2 > 0) else 1
    return HeterParams(
        token_emb=trunc_normal(rng, (vocab_size, cfg.d)),
        pos_emb=trunc_normal(rng, (cfg.max_utt_len, cfg.d)),
        itr_emb=trunc_normal(rng, (cfg.max_interlocutors, cfg.d)),
        init_layers=[init_transformer_layer(rng, cfg.d) for _ in range(cfg.l1)],
        graph_layers=[_init_graph_layer(rng, cfg) for _ in range(n_graph)],
    )


# ---------------------------------------------------------------------------
# node initialization

def init_utterance_nodes(sequences, params: HeterParams, cfg: EncoderConfig) -> list:
    """Each utterance runs through the L1 shared layers independently."""
    out = []
    for seq in sequences:
        ids = np.asarray(seq.ids, dtype=np.intp)
        if len(ids) > cfg.max_utt_len:
            raise ValueError(f"utterance length {len(ids)} exceeds max {cfg.max_utt_len}")
        x = take_rows(params.token_emb, ids) + take_rows(params.pos_emb, np.arange(len(ids)))
        for lp in params.init_layers:
            x = encoder_layer(x, lp, cfg.heads)
        out.append(x)
    return out


def init_interlocutor_nodes(graph: HeteroGraph, params: HeterParams,
                            cfg: EncoderConfig) -> Tensor:
    """Row j of the order-based table for interlocutor j; rows are shared
    across conversations."""
    count = graph.num_interlocutors
    if count > cfg.max_interlocutors:
        from .graph import CapacityError

        raise CapacityError(
            f"{count} interlocutors exceed the table capacity {cfg.max_interlocutors}"
        )
    return take_rows(params.itr_emb, np.arange(count))


# ---------------------------------------------------------------------------
# per-edge operations (also used standalone by tests)

def _check_edge(etype: EdgeType, tau_s: NodeKind, tau_t: NodeKind):
    if EDGE_SIGNATURES[etype] != (tau_s, tau_t):
        raise StructureError(
            f"edge {etype.value} cannot connect {tau_s.value} -> {tau_t.value}"
        )


def _head_block(w_att: Tensor, head: int, dh: int) -> Tensor:
    return narrow(narrow(w_att, 0, head * dh, dh), 1, head * dh, dh)


def hetero_attention_logit(h_s: Tensor, h_t: Tensor, etype: EdgeType,
                           tau_s: NodeKind, tau_t: NodeKind,
                           gp: GraphLayerParams, cfg: EncoderConfig) -> Tensor:
    """Unnormalized attention weight for one (source, edge, target) triple,
    one scalar per head; h_s and h_t are (d,) vectors."""
    _check_edge(etype, tau_s, tau_t)
    dh = cfg.d // cfg.heads
    ps, pt = gp.node_params(tau_s), gp.node_params(tau_t)
    ep = gp.edge_params(etype)
    k = matmul(reshape(h_s, (1, cfg.d)), ps.w_k) + ps.b_k
    q = matmul(reshape(h_t, (1, cfg.d)), pt.w_q) + pt.b_q
    parts = []
    for h in range(cfg.heads):
        kh = narrow(k, 1, h * dh, dh)
        qh = narrow(q, 1, h * dh, dh)
        parts.append(sum_(mul(matmul(kh, _head_block(ep.w_att, h, dh)), qh),
                          axis=1, keepdims=True))
    logits = concat(parts, axis=1)  # (1, heads)
    return reshape(mul(mul(logits, ep.mu), 1.0 / math.sqrt(dh)), (cfg.heads,))


def hetero_message(h_s: Tensor, etype: EdgeType, tau_s: NodeKind,
                   gp: GraphLayerParams, cfg: EncoderConfig) -> Tensor:
    """Value projection of the source followed by the edge-type map."""
    sig_src, _ = EDGE_SIGNATURES[etype]
    if sig_src is not tau_s:
        raise StructureError(f"edge {etype.value} cannot originate at {tau_s.value}")
    ps = gp.node_params(tau_s)
    ep = gp.edge_params(etype)
    v = matmul(reshape(h_s, (1, cfg.d)), ps.w_v) + ps.b_v
    return reshape(matmul(v, ep.w_msg), (cfg.d,))


def aggregate_node(target: NodeId, graph: HeteroGraph, states: NodeStates,
                   gp: GraphLayerParams, cfg: EncoderConfig) -> Tensor:
    """Softmax-weighted message sum (per head) into target, then FFN + residual.

    Returns the updated node-level vector h^{l+1}_t of shape (d,). Targets
    with no sources use a zero aggregate so only the FFN-residual applies.
    """
    from .graph import neighbors

    dh = cfg.d // cfg.heads
    h_t = reshape(states.node_vector(target), (cfg.d,))
    sources = neighbors(graph, target)
    if sources:
        logits = []
        messages = []
        for src, etype in sources:
            h_s = reshape(states.node_vector(src), (cfg.d,))
            logits.append(reshape(
                hetero_attention_logit(h_s, h_t, etype, src.kind, target.kind, gp, cfg),
                (1, cfg.heads)))
            messages.append(reshape(hetero_message(h_s, etype, src.kind, gp, cfg),
                                    (1, cfg.d)))
        lg = transpose(concat(logits, axis=0), (1, 0))          # (heads, n)
        weights = softmax(lg)
        msg = transpose(reshape(concat(messages, axis=0),
                                (len(sources), cfg.heads, dh)), (1, 0, 2))
        ctx = sum_(mul(reshape(weights, (cfg.heads, len(sources), 1)), msg), axis=1)
        hbar = reshape(ctx, (1, cfg.d))
    else:
        hbar = Tensor(np.zeros((1, cfg.d), dtype=h_t.dtype))
    ffn = gp.node_params(target.kind).ffn
    return reshape(feed_forward(hbar, ffn) + reshape(h_t, (1, cfg.d)), (cfg.d,))


def utterance_token_refresh(tokens: Tensor, h_old_cls: Tensor, h_new_cls: Tensor,
                            gp: GraphLayerParams, cfg: EncoderConfig,
                            kind: NodeKind = UTR) -> Tensor:
    """Concat-compress the old and new CLS vectors into the CLS row, then run
    the extra intra-utterance transformer layer over the whole token matrix."""
    if kind is not UTR:
        raise StructureError("token refresh applies to utterance nodes only")
    pair = concat([reshape(h_old_cls, (1, cfg.d)), reshape(h_new_cls, (1, cfg.d))], axis=1)
    compressed = matmul(pair, gp.w_com) + gp.b_com
    k = tokens.shape[0]
    if k > 1:
        refreshed = concat([compressed, narrow(tokens, 0, 1, k - 1)], axis=0)
    else:
        refreshed = compressed
    return encoder_layer(refreshed, gp.refresh, cfg.heads)


# ---------------------------------------------------------------------------
# full encode

def _node_matrix(states: NodeStates) -> Tensor:
    rows = [states.cls(m) for m in range(len(states.utterance_tokens))]
    if states.interlocutors.shape[0] > 0:
        rows.append(states.interlocutors)
    return concat(rows, axis=0)


def _edge_groups(graph: HeteroGraph):
    """Per edge type: (source row indices, target row indices) into the
    stacked node matrix (utterances first, then interlocutors)."""
    m = graph.num_utterances

    def row(n: NodeId) -> int:
        return n.index if n.kind is UTR else m + n.index

    groups = {}
    for src, etype, dst in graph.edges:
        groups.setdefault(etype, ([], []))
        groups[etype][0].append(row(src))
        groups[etype][1].append(row(dst))
    return {
        e: (np.asarray(s, dtype=np.intp), np.asarray(t, dtype=np.intp))
        for e, (s, t) in groups.items()
    }


def graph_iteration(graph: HeteroGraph, states: NodeStates, gp: GraphLayerParams,
                    cfg: EncoderConfig, target_order=None) -> NodeStates:
    """One synchronous update of every node from the current states."""
    m_count = graph.num_utterances
    i_count = graph.num_interlocutors
    n_nodes = m_count + i_count
    d, heads = cfg.d, cfg.heads
    dh = d // heads

    h = _node_matrix(states)  # (N, d), iteration-l node vectors
    h_utr = narrow(h, 0, 0, m_count)
    p_utr = gp.node_params(UTR)
    k_parts = [matmul(h_utr, p_utr.w_k) + p_utr.b_k]
    q_parts = [matmul(h_utr, p_utr.w_q) + p_utr.b_q]
    v_parts = [matmul(h_utr, p_utr.w_v) + p_utr.b_v]
    if i_count > 0:
        h_itr = narrow(h, 0, m_count, i_count)
        p_itr = gp.node_params(ITR)
        k_parts.append(matmul(h_itr, p_itr.w_k) + p_itr.b_k)
        q_parts.append(matmul(h_itr, p_itr.w_q) + p_itr.b_q)
        v_parts.append(matmul(h_itr, p_itr.w_v) + p_itr.b_v)
    k_all = concat(k_parts, axis=0) if len(k_parts) > 1 else k_parts[0]
    q_all = concat(q_parts, axis=0) if len(q_parts) > 1 else q_parts[0]
    v_all = concat(v_parts, axis=0) if len(v_parts) > 1 else v_parts[0]

    # per-edge-type logits and messages, batched over edges of that type
    logit_parts, msg_parts, tgt_parts = [], [], []
    for etype, (src_rows, tgt_rows) in _edge_groups(graph).items():
        ep = gp.edge_params(etype)
        k = take_rows(k_all, src_rows)
        q = take_rows(q_all, tgt_rows)
        v = take_rows(v_all, src_rows)
        heads_out = []
        for hI in range(heads):
            kh = narrow(k, 1, hI * dh, dh)
            qh = narrow(q, 1, hI * dh, dh)
            heads_out.append(sum_(mul(matmul(kh, _head_block(ep.w_att, hI, dh)), qh),
                                  axis=1, keepdims=True))
        logits = mul(mul(concat(heads_out, axis=1), ep.mu), 1.0 / math.sqrt(dh))
        logit_parts.append(logits)
        msg_parts.append(matmul(v, ep.w_msg))
        tgt_parts.append(tgt_rows)

    if logit_parts:
        all_logits = concat(logit_parts, axis=0)   # (E, heads)
        all_msgs = concat(msg_parts, axis=0)       # (E, d)
        all_tgts = np.concatenate(tgt_parts)
    else:
        all_tgts = np.zeros(0, dtype=np.intp)

    # softmax-normalize per target, per head; weighted message sum
    order = list(range(n_nodes)) if target_order is None else list(target_order)
    agg_rows: list = [None] * n_nodes
    zero_row = None
    for t in order:
        sel = np.nonzero(all_tgts == t)[0]
        if sel.size == 0:
            if zero_row is None:
                zero_row = Tensor(np.zeros((1, d), dtype=h.dtype))
            agg_rows[t] = zero_row
            continue
        lg = transpose(take_rows(all_logits, sel), (1, 0))       # (heads, n_t)
        weights = softmax(lg)
        msg = transpose(reshape(take_rows(all_msgs, sel), (sel.size, heads, dh)),
                        (1, 0, 2))                               # (heads, n_t, dh)
        ctx = sum_(mul(reshape(weights, (heads, sel.size, 1)), msg), axis=1)
        agg_rows[t] = reshape(ctx, (1, d))
    hbar = concat(agg_rows, axis=0)  # (N, d)

    # node-type FFN + residual
    next_parts = [feed_forward(narrow(hbar, 0, 0, m_count), p_utr.ffn)]
    if i_count > 0:
        next_parts.append(feed_forward(narrow(hbar, 0, m_count, i_count),
                                       gp.node_params(ITR).ffn))
    h_next = (concat(next_parts, axis=0) if len(next_parts) > 1 else next_parts[0]) + h

    # utterance refresh: concat-compress into the CLS row, extra layer
    new_tokens = []
    for m in range(m_count):
        new_tokens.append(utterance_token_refresh(
            states.utterance_tokens[m],
            reshape(narrow(h, 0, m, 1), (d,)),
            reshape(narrow(h_next, 0, m, 1), (d,)),
            gp, cfg))
    new_itr = (narrow(h_next, 0, m_count, i_count) if i_count > 0
               else states.interlocutors)
    return NodeStates(new_tokens, new_itr)


def encode_graph(graph: HeteroGraph, sequences, params: HeterParams,
                 cfg: EncoderConfig, target_order=None) -> NodeStates:
    """Initialization followed by L2 synchronous graph iterations."""
    if len(sequences) != graph.num_utterances:
        raise ValueError(
            f"{len(sequences)} sequences for {graph.num_utterances} utterance nodes"
        )
    states = NodeStates(
        utterance_tokens=init_utterance_nodes(sequences, params, cfg),
        interlocutors=init_interlocutor_nodes(graph, params, cfg),
    )
    for i in range(cfg.l2):
        states = graph_iteration(graph, states, params.layer_for_iteration(i),
                                 cfg, target_order=target_order)
    return states


def encoder_named_parameters(params: HeterParams):
    yield from named_tensors(params, "encoder")
