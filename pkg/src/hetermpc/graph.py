"""Heterogeneous conversation graphs.

A conversation becomes a graph with two node kinds (utterances and
interlocutors) connected by six directed edge types that come in inverse
pairs: an utterance replying another yields reply/replied-by, speaking
yields speak/spoken-by, and addressing yields address/addressed-by.
The response to be generated is itself an utterance node (its text is
masked downstream) with full speak/address/reply connectivity.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

MAX_INTERLOCUTORS = 10

# Marker an addressee-less utterance receives so that the graph builder
# connects it to every other interlocutor ("to all").
GENERAL_ADDRESSEE = "<all>"


class CapacityError(ValueError):
    """A conversation exceeds a hard model capacity (e.g. interlocutor count)."""


class StructureError(ValueError):
    """A record or graph violates a structural invariant."""


class NodeKind(Enum):
    UTR = "UTR"
    ITR = "ITR"


class EdgeType(Enum):
    REPLY = "reply"
    REPLIED_BY = "replied-by"
    SPEAK = "speak"
    SPOKEN_BY = "spoken-by"
    ADDRESS = "address"
    ADDRESSED_BY = "addressed-by"

    @property
    def inverse(self) -> "EdgeType":
        return _INVERSE[self]


_INVERSE = {
    EdgeType.REPLY: EdgeType.REPLIED_BY,
    EdgeType.REPLIED_BY: EdgeType.REPLY,
    EdgeType.SPEAK: EdgeType.SPOKEN_BY,
    EdgeType.SPOKEN_BY: EdgeType.SPEAK,
    EdgeType.ADDRESS: EdgeType.ADDRESSED_BY,
    EdgeType.ADDRESSED_BY: EdgeType.ADDRESS,
}

# legal (source kind, target kind) per edge type
EDGE_SIGNATURES = {
    EdgeType.REPLY: (NodeKind.UTR, NodeKind.UTR),
    EdgeType.REPLIED_BY: (NodeKind.UTR, NodeKind.UTR),
    EdgeType.SPEAK: (NodeKind.ITR, NodeKind.UTR),
    EdgeType.SPOKEN_BY: (NodeKind.UTR, NodeKind.ITR),
    EdgeType.ADDRESS: (NodeKind.UTR, NodeKind.ITR),
    EdgeType.ADDRESSED_BY: (NodeKind.ITR, NodeKind.UTR),
}

_EDGE_ORDER = {e: i for i, e in enumerate(EdgeType)}
_KIND_ORDER = {NodeKind.UTR: 0, NodeKind.ITR: 1}


@dataclass(frozen=True)
class NodeId:
    kind: NodeKind
    index: int

    def __repr__(self):
        return f"{self.kind.value}:{self.index}"


def utr(index: int) -> NodeId:
    return NodeId(NodeKind.UTR, index)


def itr(index: int) -> NodeId:
    return NodeId(NodeKind.ITR, index)


@dataclass
class Utterance:
    speaker: str
    addressee: Optional[str] = None
    reply_to: Optional[int] = None
    text: str = ""


@dataclass
class ResponseSpec:
    speaker: str
    addressee: str
    reply_to: int
    text: Optional[str] = None


@dataclass
class ConversationRecord:
    """A parsed dialogue: history utterances plus the response target."""

    utterances: list[Utterance]
    response: ResponseSpec


@dataclass
class HeteroGraph:
    """Immutable after construction; edges are (source, type, target)."""

    num_utterances: int
    num_interlocutors: int
    edges: list[tuple[NodeId, EdgeType, NodeId]]
    response_node: NodeId
    _incoming: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        by_target: dict[NodeId, list] = {}
        for src, etype, dst in self.edges:
            by_target.setdefault(dst, []).append((src, etype))
        for dst in by_target:
            by_target[dst].sort(key=lambda se: (_KIND_ORDER[se[0].kind], se[0].index,
                                                _EDGE_ORDER[se[1]]))
        self._incoming = by_target

    def nodes(self):
        for m in range(self.num_utterances):
            yield utr(m)
        for i in range(self.num_interlocutors):
            yield itr(i)

    def has_node(self, node: NodeId) -> bool:
        limit = self.num_utterances if node.kind is NodeKind.UTR else self.num_interlocutors
        return 0 <= node.index < limit


def _interlocutor_indices(record: ConversationRecord) -> dict[str, int]:
    """Index speakers by first-speaking order, then never-speaking addressees
    by first mention. The order-based embedding table is keyed by this index."""
    order: dict[str, int] = {}
    for u in record.utterances:
        if u.speaker not in order:
            order[u.speaker] = len(order)
    if record.response.speaker not in order:
        order[record.response.speaker] = len(order)
    for u in record.utterances:
        a = u.addressee
        if a is not None and a != GENERAL_ADDRESSEE and a not in order:
            order[a] = len(order)
    if record.response.addressee not in order:
        order[record.response.addressee] = len(order)
    return order


def validate_record(record: ConversationRecord) -> None:
    n = len(record.utterances)
    for pos, u in enumerate(record.utterances):
        if u.reply_to is not None and not (0 <= u.reply_to < pos):
            raise StructureError(
                f"utterance {pos} replies to {u.reply_to}, which is not an earlier utterance"
            )
    if not (0 <= record.response.reply_to < n):
        raise StructureError(
            f"response replies to {record.response.reply_to}, outside history of {n} utterances"
        )
    count = len(_interlocutor_indices(record))
    if count > MAX_INTERLOCUTORS:
        raise CapacityError(
            f"conversation has {count} interlocutors, more than the supported {MAX_INTERLOCUTORS}"
        )


def apply_general_addressee(record: ConversationRecord) -> ConversationRecord:
    """Mark addressee-less utterances as addressing all other interlocutors.

    Returns a new record; the graph builder expands the marker into address
    edges toward every interlocutor except the utterance's own speaker.
    """
    utts = [
        Utterance(u.speaker,
                  GENERAL_ADDRESSEE if u.addressee is None else u.addressee,
                  u.reply_to, u.text)
        for u in record.utterances
    ]
    return ConversationRecord(utts, record.response)


def build_graph(record: ConversationRecord) -> HeteroGraph:
    """Apply the six edge rules to a record; the response is utterance node M-1."""
    validate_record(record)
    who = _interlocutor_indices(record)
    n_hist = len(record.utterances)
    response_index = n_hist

    edges: list[tuple[NodeId, EdgeType, NodeId]] = []

    def add_pair(src: NodeId, etype: EdgeType, dst: NodeId):
        edges.append((src, etype, dst))
        edges.append((dst, etype.inverse, src))

    def connect(index: int, speaker: str, addressee: Optional[str], reply_to: Optional[int]):
        node = utr(index)
        spk = itr(who[speaker])
        add_pair(spk, EdgeType.SPEAK, node)
        if addressee == GENERAL_ADDRESSEE:
            for name, j in who.items():
                if name != speaker:
                    add_pair(node, EdgeType.ADDRESS, itr(j))
        elif addressee is not None:
            add_pair(node, EdgeType.ADDRESS, itr(who[addressee]))
        if reply_to is not None:
            add_pair(node, EdgeType.REPLY, utr(reply_to))

    for pos, u in enumerate(record.utterances):
        connect(pos, u.speaker, u.addressee, u.reply_to)
    r = record.response
    connect(response_index, r.speaker, r.addressee, r.reply_to)

    return HeteroGraph(
        num_utterances=n_hist + 1,
        num_interlocutors=len(who),
        edges=edges,
        response_node=utr(response_index),
    )


def strip_interlocutors(graph: HeteroGraph) -> HeteroGraph:
    """Ablation variant: drop interlocutor nodes, keep only reply/replied-by."""
    kept = [(s, e, t) for s, e, t in graph.edges
            if e in (EdgeType.REPLY, EdgeType.REPLIED_BY)]
    return HeteroGraph(
        num_utterances=graph.num_utterances,
        num_interlocutors=0,
        edges=kept,
        response_node=graph.response_node,
    )


def neighbors(graph: HeteroGraph, target: NodeId) -> list[tuple[NodeId, EdgeType]]:
    """All (source, edge type) pairs pointing at target, in deterministic order."""
    if not graph.has_node(target):
        raise StructureError(f"unknown node {target}")
    return list(graph._incoming.get(target, ()))


def hop_distance(graph: HeteroGraph, a: NodeId, b: NodeId):
    """Directed BFS shortest-path length from a to b; None when unreachable."""
    if not graph.has_node(a) or not graph.has_node(b):
        raise StructureError(f"unknown node in ({a}, {b})")
    if a == b:
        return 0
    outgoing: dict[NodeId, list[NodeId]] = {}
    for src, _etype, dst in graph.edges:
        outgoing.setdefault(src, []).append(dst)
    seen = {a}
    queue = deque([(a, 0)])
    while queue:
        node, dist = queue.popleft()
        for nxt in outgoing.get(node, ()):
            if nxt == b:
                return dist + 1
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, dist + 1))
    return None


def check_invariants(graph: HeteroGraph) -> None:
    """Raise StructureError on any violated graph invariant (used by tests/fuzzing)."""
    edge_set = set()
    for src, etype, dst in graph.edges:
        sig = (src.kind, dst.kind)
        if EDGE_SIGNATURES[etype] != sig:
            raise StructureError(f"illegal edge {src} -{etype.value}-> {dst}")
        if src == dst:
            raise StructureError(f"self-loop at {src}")
        if not graph.has_node(src) or not graph.has_node(dst):
            raise StructureError(f"edge endpoint outside graph: {src} -> {dst}")
        edge_set.add((src, etype, dst))
    for src, etype, dst in graph.edges:
        if (dst, etype.inverse, src) not in edge_set:
            raise StructureError(f"missing inverse of {src} -{etype.value}-> {dst}")
    spoken_by = {}
    reply_out = {}
    for src, etype, dst in graph.edges:
        if etype is EdgeType.SPOKEN_BY:
            spoken_by[src.index] = spoken_by.get(src.index, 0) + 1
        if etype is EdgeType.REPLY:
            reply_out[src.index] = reply_out.get(src.index, 0) + 1
    if graph.num_interlocutors > 0:
        for m in range(graph.num_utterances):
            if spoken_by.get(m, 0) != 1:
                raise StructureError(f"utterance {m} has {spoken_by.get(m, 0)} spoken-by edges")
    for m, c in reply_out.items():
        if c > 1:
            raise StructureError(f"utterance {m} has {c} reply edges")


def graph_to_json(graph: HeteroGraph) -> dict:
    """Machine-readable dump: {nodes: [{kind, index}], edges: [{src, type, dst}]}."""
    def node(n: NodeId):
        return {"kind": n.kind.value, "index": n.index}

    return {
        "nodes": [node(n) for n in graph.nodes()],
        "edges": [
            {"src": node(s), "type": e.value, "dst": node(t)}
            for s, e, t in graph.edges
        ],
    }
