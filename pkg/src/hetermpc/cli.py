"""Command-line entry points: train, generate, evaluate, inspect-graph.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
HETERMPC_THREADS caps the worker threads used for generation (default 1;
parameters are read-only during decoding, and outputs are written in corpus
order regardless of the thread count).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_run_config
from .corpus import (
    CorpusError,
    Vocabulary,
    build_vocab,
    decode_tokens,
    load_corpus,
    tokenize,
)
from .graph import apply_general_addressee, build_graph, graph_to_json
from .metrics import evaluate
from .model import ResponseGenerator, init_model_params
from .trainer import train


class UsageError(ValueError):
    pass


def _worker_threads() -> int:
    raw = os.environ.get("HETERMPC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HETERMPC_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _require(path, what):
    if path is None:
        raise UsageError(f"no {what} given (set it in the config or pass the flag)")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load_records(cfg):
    records = load_corpus(_require(cfg.corpus, "corpus"))
    if cfg.general_addressee:
        records = [apply_general_addressee(r) for r in records]
    return records


def _build_model(cfg, vocab):
    params = init_model_params(cfg.encoder_config(), cfg.decoder_config(),
                               len(vocab), cfg.seed)
    return ResponseGenerator(vocab, cfg.encoder_config(), cfg.decoder_config(),
                             params, use_interlocutor_nodes=cfg.use_interlocutor_nodes)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    records = _load_records(cfg)
    valid = None
    if cfg.valid_corpus:
        valid = load_corpus(_require(cfg.valid_corpus, "validation corpus"))
        if cfg.general_addressee:
            valid = [apply_general_addressee(r) for r in valid]

    out_dir = cfg.out or "."
    os.makedirs(out_dir, exist_ok=True)
    vocab_path = cfg.vocab or os.path.join(out_dir, "vocab.json")
    if os.path.exists(vocab_path):
        vocab = Vocabulary.load(vocab_path)
    else:
        vocab = build_vocab(records, cfg.min_count)
        vocab.save(vocab_path)

    model = _build_model(cfg, vocab)
    ckpt_path = cfg.checkpoint or os.path.join(out_dir, "model.ckpt")
    log_path = os.path.join(out_dir, "metrics.jsonl")
    result = train(model, records, cfg.train_config(), valid_records=valid,
                   checkpoint_path=ckpt_path, log_path=log_path)
    print(f"trained {result.total_steps} steps; "
          f"best valid loss {result.best_valid_loss:.4f} at step {result.best_step}")
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics log: {log_path}")
    return 0


def cmd_generate(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    ckpt_path = _require(cfg.checkpoint, "checkpoint")
    vocab_path = cfg.vocab or os.path.join(os.path.dirname(os.path.abspath(ckpt_path)),
                                           "vocab.json")
    vocab = Vocabulary.load(_require(vocab_path, "vocabulary"))
    records = _load_records(cfg)
    model = _build_model(cfg, vocab)
    load_checkpoint(ckpt_path, model.params.named_parameters())

    samples = [model.prepare(r) for r in records]
    threads = _worker_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(model.generate, samples))
    else:
        outputs = [model.generate(s) for s in samples]

    out_path = cfg.out or "generated.txt"
    with open(out_path, "w", encoding="utf-8") as f:
        for ids in outputs:
            f.write(decode_tokens(ids, vocab) + "\n")
    print(f"wrote {len(outputs)} responses to {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    for path in (args.candidates, args.references):
        if not os.path.exists(path):
            raise UsageError(f"file not found: {path}")
    with open(args.candidates, encoding="utf-8") as f:
        cands = [tokenize(line) for line in f.read().splitlines()]
    with open(args.references, encoding="utf-8") as f:
        refs = [tokenize(line) for line in f.read().splitlines()]
    report = evaluate(cands, refs)
    print(json.dumps(report.to_dict()))
    print(f"{'metric':<10}{'score':>8}")
    for name in ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL"):
        print(f"{name:<10}{100 * getattr(report, name):>8.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
    return 0


def cmd_inspect_graph(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    records = load_corpus(_require(cfg.corpus, "corpus"))
    if args.general_addressee:
        records = [apply_general_addressee(r) for r in records]
    if not 0 <= args.index < len(records):
        raise UsageError(f"index {args.index} out of range for {len(records)} conversations")
    graph = build_graph(records[args.index])
    dump = graph_to_json(graph)
    print(json.dumps(dump, indent=2))
    counts = {}
    for edge in dump["edges"]:
        counts[edge["type"]] = counts.get(edge["type"], 0) + 1
    print(f"utterance nodes: {graph.num_utterances} "
          f"(response node: {graph.response_node.index})")
    print(f"interlocutor nodes: {graph.num_interlocutors}")
    print("edges: " + ", ".join(f"{t}={c}" for t, c in sorted(counts.items()))
          + f" (total {len(dump['edges'])})")
    return 0


def _overrides(args) -> dict:
    keys = ("seed", "corpus", "checkpoint", "out", "vocab")
    return {k: getattr(args, k, None) for k in keys}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetermpc",
        description="Heterogeneous conversation-graph response generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat TOML config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--corpus", help="JSONL corpus path")
        p.add_argument("--checkpoint", help="checkpoint path")
        p.add_argument("--vocab", help="vocabulary JSON path")
        p.add_argument("--out", help="output path")

    p_train = sub.add_parser("train", help="train a model, keep the best checkpoint")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="greedy-decode one response per conversation")
    common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="score candidates against references")
    p_eval.add_argument("candidates", help="one response per line")
    p_eval.add_argument("references", help="one reference per line")
    p_eval.add_argument("--out", help="also write the JSON report here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_ins = sub.add_parser("inspect-graph", help="dump one conversation's graph")
    common(p_ins)
    p_ins.add_argument("--index", type=int, default=0, help="conversation index")
    p_ins.add_argument("--general-addressee", action="store_true",
                       help="apply the to-all fallback before building")
    p_ins.set_defaults(func=cmd_inspect_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
