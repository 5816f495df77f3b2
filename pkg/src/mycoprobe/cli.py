"""Command-line entry point.

Subcommands: ingest, train, eval, sweep-alpha, ablate, zeroshot, report.
Exit codes: 0 success, 1 usage error, 2 data or validation error; errors
are written to stderr as single-line JSON diagnostics. Every command is
reproducible given --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .augment import MixupConfig
from .dataio import (
    EmbeddingTable,
    build_label_space,
    build_taxonomy,
    read_embedding_csv,
    read_embedding_table,
    read_metadata,
    read_metadata_csv,
    read_metadata_extras,
    write_embedding_table,
    write_metadata,
)
from .errors import MycoprobeError, SchemaViolation
from .experiments import (
    REFERENCE_TOP5,
    default_alpha_grid,
    run_ablation,
    sweep_alpha,
    write_ablation_csv,
    write_alpha_sweep_csv,
)
from .metrics import PredictionSet, emit_submission, per_class_topk, topk_accuracy, write_class_freq_csv
from .model import load_checkpoint, save_checkpoint
from .optim import (
    TrainConfig,
    make_bundle,
    predict,
    train,
    write_trainlog_csv,
    write_trainlog_jsonl,
)
from .zeroshot import (
    FixtureTransport,
    HttpTransport,
    ProtocolConfig,
    RetryPolicy,
    group_test_observations,
    most_frequent_species,
    run_zeroshot,
    species_frequencies,
    write_ledger_csv,
    write_zeroshot_submission,
)

PRESETS: dict[str, dict] = {
    "baseline": {},
    "weighted": {"weighted_sampling": True},
    "mixup": {"mixup": {"enabled": True, "alpha": 1.45}},
    "mixup+weighted": {"mixup": {"enabled": True, "alpha": 1.45}, "weighted_sampling": True},
    "fusion": {"use_text": True},
    "gradnorm": {
        "objectives": ["category", "poisonous", "genus", "species"],
        "weighted_sampling": True,
    },
    "competition-mixup": {"mixup": {"enabled": True, "alpha": 2.0}, "max_epochs": 10},
    "post-comp": {"mixup": {"enabled": True, "alpha": 1.45}, "max_epochs": 50},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, not argparse's default 2
        raise UsageError(message)


def _emit_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    line = getattr(exc, "line", None)
    if line is not None:
        payload["line"] = line
    print(json.dumps(payload), file=sys.stderr)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_train_config(args) -> TrainConfig:
    """Precedence: explicit flag > config file > preset > defaults."""
    values = dataclasses.asdict(TrainConfig())
    preset = getattr(args, "preset", None)
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values = _deep_merge(values, PRESETS[preset])
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(values)
        if unknown:
            raise SchemaViolation(f"unknown config keys {sorted(unknown)}")
        values = _deep_merge(values, file_values)
    flag_map = {
        "alpha": ("mixup", "alpha"),
        "batch_size": ("batch_size",),
        "epochs": ("max_epochs",),
        "patience": ("early_stop_patience",),
        "lr": ("lr",),
    }
    for flag, path in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        target = values
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = value
    if args.seed is not None:
        values["seed"] = args.seed
    mixup = MixupConfig(**values.pop("mixup"))
    values["objectives"] = tuple(values["objectives"])
    return TrainConfig(mixup=mixup, **values)


# ---------------------------------------------------------------------------
# Data loading shared by train/eval/sweep/ablate
# ---------------------------------------------------------------------------

def _partition(table: EmbeddingTable, records):
    by_id = {rec.observation_id: rec for rec in records}
    splits: dict[str, tuple[list[int], list]] = {"train": ([], []), "val": ([], []), "test": ([], [])}
    for i, rid in enumerate(table.row_ids):
        rec = by_id.get(rid)
        if rec is None:
            raise SchemaViolation(f"no metadata record for row {rid!r}")
        idx, recs = splits[rec.split]
        idx.append(i)
        recs.append(rec)
    out = {}
    for split, (idx, recs) in splits.items():
        rows = table.rows[np.array(idx, dtype=np.int64)] if idx else np.zeros((0, table.dim), dtype=np.float32)
        out[split] = (
            EmbeddingTable(dim=table.dim, rows=rows, row_ids=[table.row_ids[i] for i in idx]),
            recs,
        )
    return out


def _load_bundle(args):
    images = read_embedding_table(args.images)
    records = read_metadata(args.metadata)
    labels = build_label_space(records)
    parts = _partition(images, records)
    (train_images, train_records) = parts["train"]
    (val_images, val_records) = parts["val"]
    train_text = val_text = None
    if getattr(args, "text", None):
        text = read_embedding_table(args.text)
        text_parts = _partition(text, records)
        train_text = text_parts["train"][0]
        val_text = text_parts["val"][0]
    return make_bundle(labels, train_images, train_records, val_images, val_records, train_text, val_text)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _out_dir(args)
    table = read_embedding_csv(args.images_csv)
    emb_path = out / "images.emb1"
    write_embedding_table(table, emb_path)
    reread = read_embedding_table(emb_path)
    assert np.array_equal(reread.rows, table.rows)
    records = read_metadata_csv(args.metadata_csv)
    meta_path = out / "metadata.jsonl"
    write_metadata(records, meta_path)
    read_metadata(meta_path)
    _say(args, f"wrote {emb_path} ({len(table)} rows, dim {table.dim}) and {meta_path} ({len(records)} records)")
    return 0


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    bundle = _load_bundle(args)
    result = train(bundle, config)
    out = _out_dir(args)
    meta = {
        "classes": bundle.labels.classes,
        "image_dim": bundle.train_images.dim,
        "text_dim": bundle.train_text.dim if bundle.train_text is not None else None,
        "config": dataclasses.asdict(config),
        "best_epoch": result.best_epoch,
        "best_val_top5": result.best_val_top5,
        "aux_spaces": result.aux_spaces,
    }
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, result.head, meta)
    write_trainlog_csv(result.log, out / "trainlog.csv")
    write_trainlog_jsonl(result.log, out / "trainlog.jsonl")
    _say(
        args,
        f"trained {result.kind} head: best val top-5 {result.best_val_top5:.4f} "
        f"at epoch {result.best_epoch} ({len(result.log)} epochs); checkpoint {ckpt}",
    )
    return 0


def cmd_eval(args) -> int:
    head, meta = load_checkpoint(args.checkpoint)
    images = read_embedding_table(args.images)
    records = read_metadata(args.metadata)
    labels = build_label_space(records)
    if labels.classes != meta["classes"]:
        raise SchemaViolation("checkpoint class ordering does not match the metadata")
    parts = _partition(images, records)
    table, split_records = parts[args.split]
    if len(table) == 0:
        raise SchemaViolation(f"no rows in split {args.split!r}")
    text_rows = None
    if getattr(args, "text", None):
        text_parts = _partition(read_embedding_table(args.text), records)
        text_rows = text_parts[args.split][0].rows
    scores = predict(head, table.rows, text_rows)
    out = _out_dir(args)
    has_labels = all(rec.category_id is not None for rec in split_records)
    k = min(args.k, labels.num_classes)
    if has_labels:
        preds = PredictionSet(scores=scores, row_ids=table.row_ids, true_labels=labels.indices_for(split_records))
        acc = topk_accuracy(preds, k)
        write_class_freq_csv(per_class_topk(preds, k, labels), out / "class_freq.csv")
        _say(args, f"top-{k} accuracy on {args.split}: {acc:.4f}")
    else:
        preds = PredictionSet(scores=scores, row_ids=table.row_ids)
        _say(args, f"split {args.split!r} has no labels; wrote submission only")
    emit_submission(preds, labels, min(args.top_n, labels.num_classes), out / "submission.csv")
    return 0


def _parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        start, stop, step = (float(p) for p in spec.split(":"))
        grid = default_alpha_grid(start, stop, step)
    else:
        grid = [float(p) for p in spec.split(",") if p.strip()]
    if not grid:
        raise UsageError(f"empty alpha grid {spec!r}")
    return grid


def cmd_sweep(args) -> int:
    base = resolve_train_config(args)
    bundle = _load_bundle(args)
    alphas = _parse_grid(args.grid) if args.grid else default_alpha_grid()
    rows = sweep_alpha(alphas, base, bundle, k=args.k)
    out = _out_dir(args)
    write_alpha_sweep_csv(rows, out / "alpha_sweep.csv")
    best = max(rows, key=lambda r: r[2])
    _say(args, f"swept {len(rows)} alphas; best top-5 {best[2]:.4f} at alpha {best[0]}")
    return 0


def cmd_ablate(args) -> int:
    bundle = _load_bundle(args)
    alpha = args.alpha if args.alpha is not None else 1.2
    names = args.runs.split(",") if args.runs else ["baseline", "weighted", f"mixup-a{alpha:.2f}", f"mixup-a{alpha:.2f}+weighted", "gradnorm+weighted"]
    grid = []
    for name in names:
        config = dataclasses.asdict(TrainConfig())
        if name == "baseline":
            overrides: dict = {}
        elif name == "weighted":
            overrides = {"weighted_sampling": True}
        elif name.startswith("mixup-a") and name.endswith("+weighted"):
            overrides = {"mixup": {"enabled": True, "alpha": float(name[7:-9])}, "weighted_sampling": True}
        elif name.startswith("mixup-a"):
            overrides = {"mixup": {"enabled": True, "alpha": float(name[7:])}}
        elif name == "gradnorm+weighted":
            overrides = PRESETS["gradnorm"]
        elif name == "text":
            overrides = {"use_text": True}
        else:
            raise UsageError(f"unknown ablation run {name!r}")
        config = _deep_merge(config, overrides)
        if args.seed is not None:
            config["seed"] = args.seed
        mixup = MixupConfig(**config.pop("mixup"))
        config["objectives"] = tuple(config["objectives"])
        grid.append((name, TrainConfig(mixup=mixup, **config)))
    results = run_ablation(grid, bundle, k=args.k)
    out = _out_dir(args)
    write_ablation_csv(results, grid, out / "ablation.csv")
    for res in results:
        _say(args, f"{res.name}: val top-5 {res.val_top5:.4f}")
    return 0


def cmd_zeroshot(args) -> int:
    records = read_metadata(args.metadata)
    extras = read_metadata_extras(args.metadata)
    labels = build_label_space(records)
    tree = build_taxonomy(records, labels)
    observations = group_test_observations(records, extras)
    if not observations:
        raise SchemaViolation("metadata has no test-split records")
    if args.transport.startswith("mock:"):
        from .zeroshot import DEFAULT_RATES

        client = FixtureTransport(
            args.transport[5:],
            model=args.model or "fixture",
            rates=DEFAULT_RATES if args.model else None,
        )
    elif args.transport.startswith("http:"):
        client = HttpTransport(model=args.transport[5:], temperature=args.temperature)
    else:
        raise UsageError(f"transport must be mock:<fixture> or http:<model>, got {args.transport!r}")
    counts = species_frequencies(tree, labels)
    results, ledger = run_zeroshot(
        observations,
        tree,
        client,
        policy=RetryPolicy(max_retries=args.max_retries),
        config=ProtocolConfig(top_n=args.top_n, runs=args.runs),
        species_counts=counts,
        max_in_flight=args.concurrency,
    )
    out = _out_dir(args)
    fill = most_frequent_species(tree, counts, len(tree.all_species))
    write_zeroshot_submission(results, out / "zeroshot_submission.csv", n=args.top_n, fill=fill)
    write_ledger_csv(ledger, out / "ledger.csv")
    fallbacks = sum(1 for r in results if r.fallback)
    _say(
        args,
        f"classified {len(results)} observations ({fallbacks} fallbacks); "
        f"{ledger.total_requests()} requests, ${ledger.total_cost():.2f}",
    )
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    lines = ["# Run report", ""]
    trainlog = out / "trainlog.csv"
    if trainlog.exists():
        import csv as _csv

        with open(trainlog, newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        if rows:
            best = max(rows, key=lambda r: float(r["val_top5"]))
            lines += [
                "## Training",
                f"- epochs: {len(rows)}",
                f"- best val top-5: {float(best['val_top5']):.4f} at epoch {best['epoch']}",
                "",
            ]
    ablation = out / "ablation.csv"
    if ablation.exists():
        import csv as _csv

        with open(ablation, newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        lines += ["## Ablation (local vs published reference)", "", "| run | local val top-5 | ref public | ref private |", "|---|---|---|---|"]
        for row in rows:
            lines.append(
                f"| {row['run']} | {float(row['val_top5']):.4f} | {row['ref_public'] or 'n/a'} | {row['ref_private'] or 'n/a'} |"
            )
        lines.append("")
    sweep = out / "alpha_sweep.csv"
    if sweep.exists():
        import csv as _csv

        with open(sweep, newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        if rows:
            best = max(rows, key=lambda r: float(r["val_top5"]))
            lines += ["## Alpha sweep", f"- best alpha: {best['alpha']} (top-5 {float(best['val_top5']):.4f})", ""]
    ledger = out / "ledger.csv"
    if ledger.exists():
        lines += ["## Zero-shot usage", f"- see {ledger.name}", ""]
    lines += [
        "## Published reference scores (top-5 %, public/private)",
        "",
        "| configuration | public | private |",
        "|---|---|---|",
    ]
    for name, (public, private) in REFERENCE_TOP5.items():
        lines.append(f"| {name} | {public} | {private} |")
    report = out / "report.md"
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _say(args, f"wrote {report}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="mycoprobe", description=__doc__)
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--seed", type=int, default=None, help="global random seed (default 0)")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert CSV embeddings + metadata to EMB1 + line-JSON")
    p.add_argument("--images-csv", required=True)
    p.add_argument("--metadata-csv", required=True)
    p.set_defaults(func=cmd_ingest)

    def add_data_flags(p):
        p.add_argument("--images", required=True, help="EMB1 image embedding table")
        p.add_argument("--metadata", required=True, help="line-JSON metadata")
        p.add_argument("--text", help="EMB1 text embedding table (fusion)")

    def add_train_flags(p):
        p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
        p.add_argument("--alpha", type=float, help="mixup Beta concentration")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--epochs", type=int, help="maximum epochs")
        p.add_argument("--patience", type=int, help="early stopping patience")
        p.add_argument("--lr", type=float, help="Adam learning rate")

    p = sub.add_parser("train", help="train a head and write checkpoint + log")
    add_data_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint; write per-class and submission CSVs")
    p.add_argument("--checkpoint", required=True)
    add_data_flags(p)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--top-n", type=int, default=10, dest="top_n", help="ranks in the submission file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-alpha", help="train once per mixup alpha; write alpha_sweep.csv")
    add_data_flags(p)
    add_train_flags(p)
    p.add_argument("--grid", help='"start:stop:step" or comma list (default 0.1:2.0:0.05 plus 1.20, 1.45)')
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train the standard configuration grid; write ablation.csv")
    add_data_flags(p)
    p.add_argument("--alpha", type=float, help="mixup alpha for the mixup rows (default 1.2)")
    p.add_argument("--runs", help="comma-separated run names (default standard grid)")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("zeroshot", help="three-round hierarchical protocol over test records")
    p.add_argument("--metadata", required=True, help="line-JSON metadata with train + test splits")
    p.add_argument("--transport", required=True, help="mock:<fixture.jsonl> or http:<model-id>")
    p.add_argument("--model", help="model name for ledger/rates when mocking")
    p.add_argument("--top-n", type=int, default=10, dest="top_n")
    p.add_argument("--runs", type=int, default=1, help="protocol repetitions (rank-sum aggregated)")
    p.add_argument("--max-retries", type=int, default=2, dest="max_retries")
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--temperature", type=float, default=0.2)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("report", help="summarize the CSV reports in --out-dir as markdown")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit_error(exc)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        _emit_error(exc)
        return 1
    except (MycoprobeError, OSError, json.JSONDecodeError) as exc:
        _emit_error(exc)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
