"""Command-line entry point.

Subcommands: ``train``, ``evaluate``, ``explain``, ``spans``, and
``experiment`` (the reduced-data grid harness). Any failure exits
nonzero with a one-line JSON error object on stderr so callers can
script against it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
from pathlib import Path

from .corpus import (
    DataFormat,
    DatasetSplit,
    Label,
    NLIExample,
    attach_rationales,
    load_nli_dataset,
    subsample,
)
from .errors import SpanlogicError
from .evaluation import (
    MetricsReport,
    bootstrap_test,
    evaluate_sentences,
    evaluate_spans,
    explain_split,
    write_predictions,
)
from .model import SpanModel, ToyEncoder, load_checkpoint, save_checkpoint
from .segmenter import Segmenter, SidecarChunker, load_np_sidecar
from .synthetic import generate_corpus
from .training import (
    PRESETS,
    TrainConfig,
    format_config,
    load_config,
    parse_config_text,
    train,
)

_FORMATS = {
    "snli": DataFormat.SNLI_JSONL,
    "mnli": DataFormat.MNLI_JSONL,
    "sick": DataFormat.SICK_TSV,
    "hans": DataFormat.HANS_TSV,
    "canonical": DataFormat.CANONICAL_JSONL,
}


def _cache_dir() -> Path:
    return Path(
        os.environ.get("SPANLOGIC_CACHE", Path.home() / ".cache" / "spanlogic")
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanlogic",
        description="Span-level NLI: train, evaluate, and explain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, *, data: bool = False) -> None:
        if data:
            p.add_argument("--data", required=True, help="dataset file")
            p.add_argument(
                "--format",
                choices=sorted(_FORMATS),
                default="canonical",
                help="dataset file format",
            )
            p.add_argument("--name", help="split name (defaults to file stem)")
        p.add_argument("--np-sidecar", help="JSONL of precomputed noun-phrase ranges")
        p.add_argument("--out", help="output directory or file")

    p_train = sub.add_parser("train", help="fit a model and write a checkpoint")
    add_common(p_train, data=True)
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument("--preset", choices=sorted(PRESETS), help="named config")
    p_train.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config field (repeatable)",
    )
    p_train.add_argument("--seed", type=int, help="override config seed")
    p_train.add_argument("--rationales", help="rationale file (canonical or e-SNLI csv)")
    p_train.add_argument("--dev-data", help="validation dataset file")
    p_train.add_argument("--dev-format", choices=sorted(_FORMATS))
    p_train.add_argument(
        "--encoder",
        default="toy",
        help="'toy' or 'transformer:<model-name>'",
    )
    p_train.add_argument("--encoder-dim", type=int, default=64)
    p_train.add_argument("--encoder-buckets", type=int, default=4096)
    p_train.add_argument("--encoder-embed", type=int, default=32)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a split")
    add_common(p_eval, data=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--rationales", help="adds span-level metrics")

    p_explain = sub.add_parser("explain", help="emit explanation reports")
    add_common(p_explain)
    p_explain.add_argument("--data", help="dataset file")
    p_explain.add_argument(
        "--format", choices=sorted(_FORMATS), default="canonical"
    )
    p_explain.add_argument("--name")
    p_explain.add_argument("--checkpoint", required=True)
    p_explain.add_argument("--premise", help="one-off pair instead of --data")
    p_explain.add_argument("--hypothesis")
    p_explain.add_argument("--limit", type=int, help="stop after N examples")

    p_spans = sub.add_parser("spans", help="show how a hypothesis segments")
    p_spans.add_argument("--text", required=True)
    p_spans.add_argument("--max-run-length", type=int, default=3)
    p_spans.add_argument("--np-sidecar")
    p_spans.add_argument("--id", dest="example_id", help="id for sidecar lookup")
    p_spans.add_argument("--json", action="store_true", help="machine-readable dump")

    p_exp = sub.add_parser(
        "experiment", help="reduced-data grid on the synthetic corpus"
    )
    p_exp.add_argument("--sizes", default="100,1000", help="comma-separated sizes")
    p_exp.add_argument("--seeds", type=int, default=5, help="runs per size")
    p_exp.add_argument("--pool", type=int, default=3000, help="training pool size")
    p_exp.add_argument("--heldout", type=int, default=600, help="test size")
    p_exp.add_argument("--config", help="key = value config file")
    p_exp.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )
    p_exp.add_argument("--out", help="output directory")

    return parser


def _load_split(args, path_attr="data", fmt_attr="format", name_attr="name"):
    fmt = _FORMATS[getattr(args, fmt_attr)]
    return load_nli_dataset(
        getattr(args, path_attr), fmt, name=getattr(args, name_attr, None)
    )


def _chunker_from(args):
    sidecar = getattr(args, "np_sidecar", None)
    if sidecar:
        return SidecarChunker(load_np_sidecar(sidecar))
    return None


def _resolve_config(args) -> TrainConfig:
    config = PRESETS[args.preset] if getattr(args, "preset", None) else TrainConfig()
    if getattr(args, "config", None):
        config = load_config(args.config, base=config)
    overrides = "\n".join(getattr(args, "overrides", []))
    if overrides:
        config = parse_config_text(overrides, base=config)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _build_encoder(args):
    if args.encoder == "toy":
        return ToyEncoder(
            dimension=args.encoder_dim,
            buckets=args.encoder_buckets,
            embed_dim=args.encoder_embed,
        )
    if args.encoder.startswith("transformer:"):
        from .model import TransformerSpanEncoder

        return TransformerSpanEncoder(args.encoder.split(":", 1)[1])
    raise SpanlogicError(
        f"unknown encoder {args.encoder!r}; use 'toy' or 'transformer:<name>'"
    )


def _out_dir(args, default_leaf: str) -> Path:
    out = Path(args.out) if args.out else _cache_dir() / default_leaf
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train(args) -> int:
    split = _load_split(args)
    if args.rationales:
        split = attach_rationales(split, args.rationales)
    dev = None
    if args.dev_data:
        dev_fmt = args.dev_format or args.format
        dev = load_nli_dataset(args.dev_data, _FORMATS[dev_fmt])
    config = _resolve_config(args)
    import torch

    torch.manual_seed(config.seed)
    encoder = _build_encoder(args)
    out = _out_dir(args, "train")
    result = train(
        split,
        config,
        encoder,
        dev_split=dev,
        chunker=_chunker_from(args),
        log_path=out / "train_log.jsonl",
    )
    save_checkpoint(result.model, out / "model.pt")
    (out / "config.txt").write_text(format_config(config), encoding="utf-8")
    summary = {
        "checkpoint": str(out / "model.pt"),
        "fingerprint": result.model.fingerprint(),
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "best_epoch": result.best_epoch,
        "best_dev_accuracy": result.best_dev_accuracy,
    }
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint, chunker=_chunker_from(args))
    split = _load_split(args)
    report = evaluate_sentences(model, split, model.segmenter)
    merged = {
        "split": split.name,
        "fingerprint": model.fingerprint(),
        "sentence": report.to_dict(),
    }
    span_part = None
    if args.rationales:
        with_rat = attach_rationales(split, args.rationales)
        span_report, _ = evaluate_spans(model, with_rat, model.segmenter)
        merged["spans"] = span_report.to_dict()
        span_part = span_report
    display = MetricsReport(
        sentence_accuracy=report.accuracy,
        span_accuracy=span_part.span_accuracy if span_part else None,
        f_per_class=span_part.f_per_class if span_part else None,
        f_macro=span_part.f_macro if span_part else None,
        counts={"examples": len(report.predictions)},
    )
    print(display.render())
    if args.out:
        out = _out_dir(args, "evaluate")
        (out / "metrics.json").write_text(
            json.dumps(merged, indent=2), encoding="utf-8"
        )
    return 0


def _cmd_explain(args) -> int:
    model = load_checkpoint(args.checkpoint, chunker=_chunker_from(args))
    if args.premise is not None or args.hypothesis is not None:
        if not (args.premise and args.hypothesis):
            raise SpanlogicError("--premise and --hypothesis go together")
        # gold is a placeholder here; explanation never reads it
        examples = [
            NLIExample("pair-0", args.premise, args.hypothesis, Label.NEUTRAL)
        ]
        split = DatasetSplit("adhoc", tuple(examples))
    elif args.data:
        split = _load_split(args)
    else:
        raise SpanlogicError("explain needs --data or --premise/--hypothesis")
    reports = explain_split(model, split, model.segmenter)
    if args.limit:
        from itertools import islice

        reports = islice(reports, args.limit)
    if args.out:
        n = write_predictions(reports, args.out)
        print(json.dumps({"written": n, "path": str(args.out)}))
    else:
        for report in reports:
            print(report.render())
            print()
    return 0


def _cmd_spans(args) -> int:
    chunker = None
    if args.np_sidecar:
        chunker = SidecarChunker(load_np_sidecar(args.np_sidecar))
    segmenter = Segmenter(max_run_length=args.max_run_length, chunker=chunker)
    spanset = segmenter.segment(args.text, getattr(args, "example_id", None))
    if args.json:
        print(json.dumps(spanset.to_debug_dict(), indent=2))
    else:
        for span in spanset.all_spans():
            print(f"[{span.kind.value:9}] {spanset.span_text(span)!r}")
    return 0


def _cmd_experiment(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes:
        raise SpanlogicError("no sizes given")
    base = TrainConfig(
        learning_rate=0.02,
        epochs=10,
        warmup_epochs=1,
        warmdown_epochs=9,
        early_stopping=True,
        patience=3,
        batch_size=32,
    )
    if args.config:
        base = load_config(args.config, base=base)
    overrides = "\n".join(args.overrides)
    if overrides:
        base = parse_config_text(overrides, base=base)

    pool = generate_corpus(args.pool, seed=777, name="pool").split
    dev = generate_corpus(300, seed=8888, name="dev").split
    heldout = generate_corpus(args.heldout, seed=9999, name="heldout").split
    golds = [ex.gold for ex in heldout]

    import torch

    rows = []
    for size in sizes:
        for seed in range(args.seeds):
            sample = subsample(pool, size, seed=seed)
            config = dataclasses.replace(base, seed=seed)
            torch.manual_seed(seed)
            encoder = ToyEncoder()
            result = train(sample, config, encoder, dev_split=dev)
            model = result.model
            preds = []
            for ex in heldout:
                spanset = model.segmenter.segment(ex.hypothesis, ex.id)
                a_n, a_c = model.score(ex, spanset)
                from .logic import aggregate_prediction

                preds.append(aggregate_prediction(a_n, a_c))
            majority = max(
                set(ex.gold for ex in sample),
                key=lambda lab: sum(ex.gold == lab for ex in sample),
            )
            baseline = [majority] * len(heldout)
            accuracy = sum(p == g for p, g in zip(preds, golds)) / len(golds)
            boot = bootstrap_test(preds, baseline, golds, seed=seed)
            rows.append(
                {
                    "size": size,
                    "seed": seed,
                    "sentence_accuracy": accuracy,
                    "baseline_accuracy": boot.accuracy_b,
                    "p_vs_baseline": boot.p_value,
                    "epochs_run": len(result.history),
                }
            )
    summary = []
    for size in sizes:
        accs = [r["sentence_accuracy"] for r in rows if r["size"] == size]
        summary.append(
            {
                "size": size,
                "mean_accuracy": statistics.fmean(accs),
                "stdev": statistics.stdev(accs) if len(accs) > 1 else 0.0,
                "runs": len(accs),
            }
        )
    payload = {"rows": rows, "summary": summary}
    out = _out_dir(args, "experiment")
    (out / "grid.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(json.dumps(payload, indent=2))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "spans": _cmd_spans,
    "experiment": _cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SpanlogicError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": "FileNotFoundError", "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
