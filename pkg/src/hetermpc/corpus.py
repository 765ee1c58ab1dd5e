"""Corpus parsing, vocabulary and token encoding.

Corpus files are JSONL, one conversation per line:

    {"utterances": [{"speaker": "a", "addressee": "b"|null,
                     "reply_to": 0|null, "text": "..."}],
     "response": {"speaker": "c", "addressee": "a", "reply_to": 1, "text": "..."}}

Tokenization is whitespace splitting over lowercased text (a deliberate,
documented swap point; subword schemes are out of scope). Utterance
encodings are framed [CLS] ... [SEP]; response targets are framed by
BOS/EOS on the decoder side.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .graph import ConversationRecord, ResponseSpec, Utterance, validate_record

PAD_ID, CLS_ID, SEP_ID, MASK_ID, BOS_ID, EOS_ID, UNK_ID = range(7)

RESERVED_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]", "[UNK]")

MAX_UTT_LEN = 50


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class TokenSequence:
    """An encoded utterance: starts with CLS, ends with SEP, length <= 50."""

    ids: list[int]

    def __len__(self):
        return len(self.ids)


class Vocabulary:
    """Bijective token<->id map with fixed reserved ids 0..6."""

    def __init__(self, token_to_id: dict[str, int]):
        for i, tok in enumerate(RESERVED_TOKENS):
            if token_to_id.get(tok) != i:
                raise CorpusError(f"reserved token {tok} must have id {i}")
        ids = sorted(token_to_id.values())
        if ids != list(range(len(ids))):
            raise CorpusError("vocabulary ids must be a contiguous bijection from 0")
        self._token_to_id = dict(token_to_id)
        self._id_to_token = {i: t for t, i in token_to_id.items()}

    def __len__(self):
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def to_dict(self) -> dict[str, int]:
        return dict(self._token_to_id)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self._token_to_id, f, ensure_ascii=False, indent=0, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))


def _parse_utterance(obj: dict, line_no: int, pos: int) -> Utterance:
    try:
        return Utterance(
            speaker=str(obj["speaker"]),
            addressee=None if obj.get("addressee") is None else str(obj["addressee"]),
            reply_to=None if obj.get("reply_to") is None else int(obj["reply_to"]),
            text=str(obj.get("text", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"line {line_no}: bad utterance {pos}: {exc}") from exc


def parse_record(obj: dict, line_no: int = 0) -> ConversationRecord:
    if "utterances" not in obj or "response" not in obj:
        raise CorpusError(f"line {line_no}: conversation needs 'utterances' and 'response'")
    utts = [_parse_utterance(u, line_no, i) for i, u in enumerate(obj["utterances"])]
    r = obj["response"]
    try:
        resp = ResponseSpec(
            speaker=str(r["speaker"]),
            addressee=str(r["addressee"]),
            reply_to=int(r["reply_to"]),
            text=None if r.get("text") is None else str(r["text"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"line {line_no}: bad response: {exc}") from exc
    record = ConversationRecord(utts, resp)
    try:
        validate_record(record)
    except ValueError as exc:
        raise type(exc)(f"line {line_no}: {exc}") from exc
    return record


def load_corpus(path) -> list[ConversationRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed JSON: {exc}") from exc
            records.append(parse_record(obj, line_no))
    return records


def record_to_dict(record: ConversationRecord) -> dict:
    return {
        "utterances": [
            {"speaker": u.speaker, "addressee": u.addressee,
             "reply_to": u.reply_to, "text": u.text}
            for u in record.utterances
        ],
        "response": {
            "speaker": record.response.speaker,
            "addressee": record.response.addressee,
            "reply_to": record.response.reply_to,
            "text": record.response.text,
        },
    }


def save_corpus(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(record_to_dict(r), ensure_ascii=False) + "\n")


def build_vocab(records, min_count: int = 1) -> Vocabulary:
    """Frequency-filtered vocabulary; ids ordered by (count desc, token asc)."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    if not records:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for rec in records:
        for u in rec.utterances:
            counts.update(tokenize(u.text))
        if rec.response.text:
            counts.update(tokenize(rec.response.text))
    token_to_id = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    for tok in kept:
        token_to_id[tok] = len(token_to_id)
    return Vocabulary(token_to_id)


def encode_utterance(text: str, vocab: Vocabulary, max_len: int = MAX_UTT_LEN) -> TokenSequence:
    """[CLS] + token ids + [SEP], truncated so the total length <= max_len."""
    ids = [vocab.id_of(t) for t in tokenize(text)][: max_len - 2]
    return TokenSequence([CLS_ID] + ids + [SEP_ID])


def encode_response_node(max_len: int = MAX_UTT_LEN) -> TokenSequence:
    """Placeholder content of the masked response node."""
    return TokenSequence([CLS_ID, MASK_ID, SEP_ID])


def encode_response_target(text: str, vocab: Vocabulary, max_len: int = 50) -> list[int]:
    """Decoder target ids: content tokens plus EOS, at most max_len ids total."""
    ids = [vocab.id_of(t) for t in tokenize(text)][: max_len - 1]
    return ids + [EOS_ID]


def decode_tokens(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.token_of(i) for i in ids)
