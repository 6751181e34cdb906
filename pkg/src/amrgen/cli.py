"""Command-line entry point: preprocess, train, generate, evaluate,
analyze, contrastive.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
Every run writes a manifest (config, seed, input content hashes) next to its
outputs so results can be reproduced.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections import Counter

from . import __version__
from .amr import PenmanParseError, compute_stats, validate
from .encoders import KINDS, EncoderConfig
from .evaluation import (
    DEPENDENCY_BUCKETS,
    REENTRANCY_BUCKETS,
    ContrastivePair,
    bucket_report,
    contrastive_eval,
    corpus_bleu,
    format_bucket_table,
    sentence_metric,
)
from .seq2seq import (
    Checkpoint,
    NumericError,
    TrainExample,
    TrainSettings,
    generate,
    train,
    write_log,
)
from .transforms import (
    AnonymizationPolicy,
    anonymize,
    anonymize_sentence,
    prepare_example,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


def _hash_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command, config, seed, inputs):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {os.path.basename(p): _hash_file(p) for p in inputs if os.path.isfile(p)},
        "version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


# --------------------------------------------------------------------------
# Preprocessing


def _collect_penman_files(path):
    if os.path.isfile(path):
        return [path]
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, name)
            for name in os.listdir(path)
            if name.endswith((".amr", ".txt", ".penman"))
        )
        if not files:
            raise DataError(f"no PENMAN files found in {path!r}")
        return files
    raise DataError(f"no such file or directory: {path!r}")


def preprocess_corpus(input_path, anonymize_flag=False, threshold=5, log=lambda m: None):
    """Parse, transform and serialize a PENMAN corpus into JSONL records.

    Returns (records, skipped count, stats list).
    """
    from .amr import iter_blocks, parse_block, serialize_penman

    files = _collect_penman_files(input_path)
    examples = []
    skipped = 0
    counter = 0
    for path in files:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
        for block in iter_blocks(text):
            counter += 1
            try:
                example = parse_block(block, default_id=f"example-{counter}")
            except PenmanParseError as err:
                log(f"skipping malformed block {counter}: {err}")
                skipped += 1
                continue
            problems = validate(example.graph)
            if problems:
                log(f"skipping invalid graph {example.id}: {problems[0].detail}")
                skipped += 1
                continue
            examples.append(example)
    if not examples:
        raise DataError(f"no parseable examples in {input_path!r}")

    policy = None
    if anonymize_flag:
        frequencies = Counter()
        for example in examples:
            frequencies.update(label for _, label in example.graph.nodes)
        policy = AnonymizationPolicy(frequencies=dict(frequencies), threshold=threshold)

    records = []
    stats_list = []
    for example in examples:
        graph = example.graph
        anon_map = ()
        if policy is not None:
            graph, anon_map = anonymize(graph, policy)
        repr_ = prepare_example(graph)
        stats = compute_stats(graph)
        stats_list.append(stats)
        records.append(
            {
                "id": example.id,
                "penman": serialize_penman(graph),
                "tokens": list(repr_.sequence.tokens),
                "levi": {
                    "nodes": [list(n) for n in repr_.levi.nodes],
                    "edges": [list(e) for e in repr_.levi.edges],
                },
                "tree": {
                    "nodes": [list(n) for n in repr_.tree.nodes],
                    "edges": [list(e) for e in repr_.tree.edges],
                },
                "sentence": list(example.sentence),
                "anon_map": [list(m) for m in anon_map],
                "stats": stats.to_dict(),
            }
        )
    return records, skipped, stats_list


def load_examples(jsonl_path):
    """Rebuild TrainExamples from a preprocessed JSONL file."""
    from .amr import parse_penman

    examples = []
    with open(jsonl_path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{jsonl_path}:{line_no}: invalid JSON ({err})") from None
            graph = parse_penman(record["penman"])
            anon_map = tuple(tuple(m) for m in record.get("anon_map", []))
            sentence = tuple(record.get("sentence", []))
            target = tuple(anonymize_sentence(sentence, anon_map))
            examples.append(
                TrainExample(
                    id=record["id"],
                    repr=prepare_example(graph),
                    target=target,
                    reference=sentence,
                    anon_map=anon_map,
                )
            )
    if not examples:
        raise DataError(f"no examples in {jsonl_path!r}")
    return examples


def _histogram(values, edges):
    counts = []
    for lo, hi in edges:
        counts.append({"bucket": str(lo) if lo == hi else f"{lo}-{hi}",
                       "count": sum(1 for v in values if lo <= v <= hi)})
    return counts


def cmd_preprocess(args):
    records, skipped, stats_list = preprocess_corpus(
        args.input, anonymize_flag=args.anonymize, threshold=args.rare_threshold,
        log=lambda m: print(m, file=sys.stderr),
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")

    token_counts = Counter()
    word_counts = Counter()
    for record in records:
        token_counts.update(record["tokens"])
        word_counts.update(record["sentence"])
    base, _ = os.path.splitext(args.out)
    for suffix, counts in (("src", token_counts), ("tgt", word_counts)):
        with open(f"{base}.vocab.{suffix}", "w", encoding="utf-8") as handle:
            for token, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                handle.write(f"{token}\t{count}\n")
    summary = {
        "examples": len(records),
        "skipped": skipped,
        "reentrancy_histogram": _histogram(
            [s.reentrancy_count for s in stats_list], REENTRANCY_BUCKETS
        ),
        "dependency_histogram": _histogram(
            [s.max_dependency_length for s in stats_list], DEPENDENCY_BUCKETS
        ),
    }
    with open(f"{base}.stats.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {len(records)} examples ({skipped} skipped) to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Model commands


_REPR_OF_KIND = {
    "Seq": "sequence",
    "SeqTreeLSTM": "tree",
    "TreeLSTMSeq": "tree",
    "TreeLSTM": "tree",
}


def _encoder_config(args) -> EncoderConfig:
    repr_ = args.repr or _REPR_OF_KIND.get(args.model, "graph")
    try:
        return EncoderConfig(
            kind=args.model,
            input_repr=repr_,
            embedding_dim=args.embedding_dim,
            hidden_dim=args.hidden_dim,
            gcn_layers=args.gcn_layers,
            dropout=args.dropout,
            edge_dropout=args.edge_dropout,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None


def cmd_train(args):
    config = _encoder_config(args)
    examples = load_examples(args.data)
    dev = load_examples(args.dev) if args.dev else examples
    settings = TrainSettings(
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
    )
    os.makedirs(args.out, exist_ok=True)
    checkpoint, log = train(
        examples,
        dev,
        config,
        seed=args.seed,
        settings=settings,
        log_sink=lambda m: print(m, file=sys.stderr),
    )
    checkpoint.save(os.path.join(args.out, "checkpoint.bin"))
    write_log(os.path.join(args.out, "train_log.jsonl"), log)
    _write_manifest(
        args.out,
        "train",
        {"encoder": config.to_dict(), "settings": settings.__dict__},
        args.seed,
        [args.data] + ([args.dev] if args.dev else []),
    )
    best = checkpoint.meta["dev_bleu"]
    print(f"best dev BLEU {best:.2f} at epoch {checkpoint.meta['epoch']}")
    return EXIT_OK


def cmd_generate(args):
    checkpoint = Checkpoint.load(args.ckpt)
    model = checkpoint.build_model()
    examples = load_examples(args.data)
    lines = []
    for ex in examples:
        tokens, truncated = generate(model, ex, beam=args.beam)
        if truncated:
            print(f"warning: {ex.id}: output truncated at length limit", file=sys.stderr)
        lines.append(" ".join(tokens))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _read_hypotheses(path):
    with open(path, encoding="utf-8") as handle:
        return [line.strip().lower().split() for line in handle.read().splitlines()]


def cmd_evaluate(args):
    if not args.hyp and not args.ckpt:
        raise ConfigError("evaluate needs --hyp or --ckpt")
    examples = load_examples(args.data)
    references = [list(ex.reference) for ex in examples]
    if args.hyp:
        hypotheses = _read_hypotheses(args.hyp)
    else:
        checkpoint = Checkpoint.load(args.ckpt)
        model = checkpoint.build_model()
        hypotheses = [generate(model, ex, beam=args.beam)[0] for ex in examples]
    if len(hypotheses) != len(references):
        raise DataError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    report = {
        "corpus_bleu": round(corpus_bleu(hypotheses, references), 4),
        "sentence_metric_mean": round(
            sum(sentence_metric(h, r) for h, r in zip(hypotheses, references))
            / len(references),
            4,
        ),
        "examples": len(references),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args):
    examples = load_examples(args.data)
    references = [list(ex.reference) for ex in examples]
    stats = []
    for ex in examples:
        s = compute_stats(ex.repr.graph)
        stats.append(s.to_dict())
    scores = {}
    for spec in args.outputs:
        name, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--outputs entries must be NAME=PATH, got {spec!r}")
        hyps = _read_hypotheses(path)
        if len(hyps) != len(references):
            raise DataError(f"{path}: {len(hyps)} hypotheses vs {len(references)} references")
        scores[name] = [sentence_metric(h, r) for h, r in zip(hyps, references)]
    edges = None
    if args.buckets:
        try:
            edges = tuple(
                (int(part.split("-")[0]), int(part.split("-")[-1]))
                for part in args.buckets.split(",")
            )
        except ValueError:
            raise ConfigError(f"bad bucket spec {args.buckets!r}") from None
    rows = bucket_report(scores, stats, bucketing=args.bucket_by, edges=edges)
    print(format_bucket_table(rows, args.bucket_by, baseline=list(scores)[0]))
    return EXIT_OK


def load_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            pairs.append(
                ContrastivePair(
                    id=record["id"],
                    reference=tuple(record["reference"]),
                    contrastive=tuple(record["contrastive"]),
                    category=record["category"],
                )
            )
    return pairs


def cmd_contrastive(args):
    checkpoint = Checkpoint.load(args.ckpt)
    model = checkpoint.build_model()
    examples = {ex.id: ex for ex in load_examples(args.data)}
    pairs = load_pairs(args.pairs)
    results, skipped = contrastive_eval(
        lambda ex, tokens: model.score_sentence(ex, tokens),
        pairs,
        examples.get,
    )
    report = {
        category: {"count": r.count, "accuracy": round(r.accuracy, 2)}
        for category, r in results.items()
    }
    report["skipped"] = skipped
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing


def _apply_config_file(parser, argv):
    """JSON config file supplies defaults; explicit flags win.

    Defaults apply to the invoked subcommand, so the file can carry options
    like epochs or hidden_dim.
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, encoding="utf-8") as handle:
            defaults = json.load(handle)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config file {known.config!r}: {err}") from None
    targets = [parser]
    subcommand = argv[0] if argv and not argv[0].startswith("-") else None
    if subcommand is not None and parser._subparsers is not None:
        for action in parser._subparsers._group_actions:
            if isinstance(action.choices, dict) and subcommand in action.choices:
                targets.append(action.choices[subcommand])
    valid = {action.dest for target in targets for action in target._actions}
    unknown = set(defaults) - valid
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for target in targets:
        dests = {action.dest for action in target._actions}
        target.set_defaults(**{k: v for k, v in defaults.items() if k in dests})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amrgen",
        description="AMR-to-text structural encoding: preprocessing, training, "
        "generation and analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--model", choices=KINDS, default="Seq")
        p.add_argument("--repr", choices=("sequence", "tree", "graph"), default=None)
        p.add_argument("--embedding-dim", type=int, default=64)
        p.add_argument("--hidden-dim", type=int, default=64)
        p.add_argument("--gcn-layers", type=int, default=2)
        p.add_argument("--dropout", type=float, default=0.3)
        p.add_argument("--edge-dropout", type=float, default=0.1)

    p = sub.add_parser("preprocess", help="PENMAN corpus -> JSONL + vocab + stats")
    p.add_argument("--input", required=True, help="PENMAN file or directory")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--anonymize", action="store_true")
    p.add_argument("--rare-threshold", type=int, default=5)
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on preprocessed data")
    p.add_argument("--data", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=5)
    add_model_flags(p)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode sentences from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU / sentence metric of outputs")
    p.add_argument("--data", required=True)
    p.add_argument("--hyp", help="hypothesis file, one sentence per line")
    p.add_argument("--ckpt", help="decode with this checkpoint instead of --hyp")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="bucketed deltas across system outputs")
    p.add_argument("--data", required=True)
    p.add_argument("--outputs", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--bucket-by", choices=("reentrancies", "max_dep_len"),
                   default="reentrancies")
    p.add_argument("--buckets", help="comma-separated lo-hi ranges, e.g. 0-0,1-5,6-20")
    p.add_argument("--config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("contrastive", help="contrastive-pair accuracy of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", required=True, help="JSONL contrastive pairs")
    p.add_argument("--config")
    p.set_defaults(func=cmd_contrastive)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PenmanParseError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def console_main():  # console_scripts entry point
    sys.exit(main())
