"""Command-line driver for the training / reranking / evaluation pipeline.

One declarative INI config describes a training run; flags override
config values. Exit codes: 0 success, 2 config errors, 3 input parse
errors, 4 numeric failures (non-finite loss).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from reranklab import ir_eval, synth, train as train_mod
from reranklab.checkpoint import CheckpointError, load_checkpoint
from reranklab.model import CrossEncoderConfig, Vocab, init_params
from reranklab.train import (
    NonFiniteLossError,
    TrainConfig,
    efficiency_gain,
    run_training,
    triplets_to_pairs,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_NUMERIC = 4

OUT_ROOT_ENV = "RERANKLAB_OUT_ROOT"
MANIFEST_VERSION = 1


class ConfigError(ValueError):
    """Bad config file, bad flag combination, or missing input file."""


# ---------------------------------------------------------------------------
# helpers


def _resolve_out(path_str: str) -> Path:
    """Resolve an output path, rooting relative paths at $RERANKLAB_OUT_ROOT."""
    path = Path(path_str)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return path


def write_manifest(out_dir: Path, command: str, seed: int, config_snapshot: dict, artifacts: list[str]) -> Path:
    manifest = {
        "format_version": MANIFEST_VERSION,
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "config": config_snapshot,
        "artifacts": sorted(artifacts),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _align_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config file handling


def _read_ini(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config {path} is not valid INI: {exc}") from exc
    return parser


def _train_config_from_ini(parser: configparser.ConfigParser, optimizer: str, seed: int) -> TrainConfig:
    base = parser["train"] if parser.has_section("train") else {}
    override = parser[optimizer] if parser.has_section(optimizer) else {}

    def get(key: str, default):
        raw = override.get(key, base.get(key, None))
        if raw is None:
            return default
        if isinstance(default, bool):
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        return type(default)(raw)

    try:
        return TrainConfig(
            batch_size=get("batch_size", 64),
            epochs=get("epochs", 3),
            seed=seed,
            optimizer=optimizer,
            base_lr=get("base_lr", 2e-4),
            schedule=get("schedule", "constant"),
            warmup_ratio=get("warmup_ratio", 0.1),
            shuffle=get("shuffle", True),
            weight_decay=get("weight_decay", 0.01),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [train]/[{optimizer}] settings: {exc}") from exc


def _model_config_from_ini(parser: configparser.ConfigParser, vocab_size: int, seed: int) -> CrossEncoderConfig:
    section = parser["model"] if parser.has_section("model") else {}
    try:
        return CrossEncoderConfig(
            vocab_size=vocab_size,
            d_model=int(section.get("d_model", 64)),
            n_layers=int(section.get("n_layers", 1)),
            n_heads=int(section.get("n_heads", 2)),
            d_ff=int(section.get("d_ff", 128)),
            max_len=int(section.get("max_len", 16)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [model] settings: {exc}") from exc


def _select_optimizers(parser: configparser.ConfigParser, flag_value: str | None) -> list[str]:
    if flag_value:
        return [flag_value]
    present = [name for name in ("lion", "adamw") if parser.has_section(name)]
    if present:
        return present
    section = parser["train"] if parser.has_section("train") else {}
    return [section.get("optimizer", "lion")]


def _config_snapshot(parser: configparser.ConfigParser) -> dict:
    return {section: dict(parser[section]) for section in parser.sections()}


# ---------------------------------------------------------------------------
# commands


def _run_one_training(parser, optimizer, seed, name, triplets_path, out_dir):
    triplets = train_mod.load_triplets(triplets_path)
    pairs = triplets_to_pairs(triplets)
    if not pairs:
        raise ConfigError(f"no usable training pairs in {triplets_path}")
    texts = [t.query for t in triplets] + [t.positive for t in triplets] + [t.negative for t in triplets]
    vocab = Vocab.build(texts)
    model = init_params(_model_config_from_ini(parser, vocab.size, seed))
    config = _train_config_from_ini(parser, optimizer, seed)
    result = run_training(model, vocab, pairs, config, run_name=name)

    artifacts = []
    for ckpt_name, text in result.checkpoints:
        rel = f"{ckpt_name}.ckpt"
        (out_dir / rel).write_text(text, encoding="utf-8")
        artifacts.append(rel)
    loss_rel = f"loss-{optimizer}.tsv"
    train_mod.write_loss_log(out_dir / loss_rel, result.loss_log)
    artifacts.append(loss_rel)
    stats_rel = f"stats-{optimizer}.txt"
    (out_dir / stats_rel).write_text(
        "\n".join(train_mod.resource_stats_lines(result.stats, optimizer)) + "\n",
        encoding="utf-8",
    )
    artifacts.append(stats_rel)
    return result, artifacts


def cmd_train(args) -> int:
    parser = _read_ini(_require_file(args.config, "config"))
    run_section = parser["run"] if parser.has_section("run") else {}
    seed = args.seed if args.seed is not None else int(run_section.get("seed", 12))
    name = args.name or run_section.get("name", Path(args.config).stem)
    out_value = args.out or run_section.get("out_dir")
    if not out_value:
        raise ConfigError("no output directory: set [run] out_dir or pass --out")
    out_dir = _resolve_out(out_value)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not parser.has_section("data") or not parser["data"].get("triplets"):
        raise ConfigError("config needs [data] triplets = <path>")
    triplets_path = _require_file(parser["data"]["triplets"], "triplets")
    if args.epochs is not None:
        if not parser.has_section("train"):
            parser.add_section("train")
        parser["train"]["epochs"] = str(args.epochs)

    artifacts: list[str] = []
    for optimizer in _select_optimizers(parser, args.optimizer):
        result, produced = _run_one_training(parser, optimizer, seed, name, triplets_path, out_dir)
        artifacts.extend(produced)
        final_epoch = result.loss_log[-1].epoch
        final = [r.loss for r in result.loss_log if r.epoch == final_epoch]
        print(
            f"{optimizer}: {result.stats.n_steps} steps, "
            f"final-epoch mean loss {sum(final) / len(final):.6f}, "
            f"state bytes {result.stats.optimizer_state_bytes}"
        )
    write_manifest(out_dir, "train", seed, _config_snapshot(parser), artifacts)
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_rerank(args) -> int:
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    bundle = load_checkpoint(ckpt_path)
    queries = ir_eval.read_corpus_tsv(_require_file(args.queries, "queries"))
    passages = ir_eval.read_corpus_tsv(_require_file(args.passages, "passages"))
    candidates = ir_eval.read_run(_require_file(args.candidates, "candidates run"))
    tag = args.tag or ckpt_path.stem
    reranked = ir_eval.rerank(bundle.model, bundle.vocab, queries, passages, candidates, tag=tag)
    out_path = _resolve_out(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(ir_eval.format_run(reranked), encoding="utf-8")
    print(f"wrote {len(reranked)} reranked lines to {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = ir_eval.read_run(_require_file(args.run, "run"))
    qrels = ir_eval.read_qrels(_require_file(args.qrels, "qrels"))
    report = ir_eval.evaluate(
        run, qrels, k=args.k, binarize_at=args.binarize_at, exponential_gain=args.exponential_gain
    )
    table = ir_eval.report_table(report)
    print(table, end="")
    if args.out:
        out_dir = _resolve_out(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.tsv").write_text(
            "\n".join(ir_eval.report_tsv_lines(report)) + "\n", encoding="utf-8"
        )
        (out_dir / "metrics.txt").write_text(table, encoding="utf-8")
        write_manifest(
            out_dir,
            "eval",
            0,
            {"run": str(args.run), "qrels": str(args.qrels), "k": args.k, "binarize_at": args.binarize_at},
            ["metrics.tsv", "metrics.txt"],
        )
        print(f"reports in {out_dir}")
    return EXIT_OK


def _bench_import(path: Path) -> str:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ir_eval.ParseError(f"{path}: expected label<TAB>adamw_mean<TAB>lion_mean on line {lineno}")
            try:
                adamw_mean, lion_mean = float(parts[1]), float(parts[2])
            except ValueError:
                raise ir_eval.ParseError(f"{path}: non-numeric means on line {lineno}") from None
            rows.append([parts[0], f"{adamw_mean:.2f}", f"{lion_mean:.2f}",
                         f"{efficiency_gain(adamw_mean, lion_mean):.2f}%"])
    return _align_table(["label", "adamw_mean", "lion_mean", "efficiency_gain"], rows)


def cmd_bench_optim(args) -> int:
    if args.import_file:
        table = _bench_import(_require_file(args.import_file, "import"))
        print(table, end="")
        if args.out:
            out_dir = _resolve_out(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "bench.txt").write_text(table, encoding="utf-8")
        return EXIT_OK

    if not args.config:
        raise ConfigError("bench-optim needs --config or --import")
    parser = _read_ini(_require_file(args.config, "config"))
    run_section = parser["run"] if parser.has_section("run") else {}
    seed = args.seed if args.seed is not None else int(run_section.get("seed", 12))
    name = args.name or run_section.get("name", Path(args.config).stem)
    out_value = args.out or run_section.get("out_dir")
    if not out_value:
        raise ConfigError("no output directory: set [run] out_dir or pass --out")
    out_dir = _resolve_out(out_value)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not parser.has_section("data") or not parser["data"].get("triplets"):
        raise ConfigError("config needs [data] triplets = <path>")
    triplets_path = _require_file(parser["data"]["triplets"], "triplets")

    stats = {}
    artifacts: list[str] = []
    for optimizer in ("adamw", "lion"):
        result, produced = _run_one_training(parser, optimizer, seed, name, triplets_path, out_dir)
        stats[optimizer] = result.stats
        artifacts.extend(produced)

    rows = [
        [
            opt,
            str(stats[opt].optimizer_state_bytes),
            f"{stats[opt].mean_step_ms:.3f}",
            f"{stats[opt].peak_step_ms:.3f}",
            f"{stats[opt].std_step_ms:.3f}",
            str(stats[opt].n_steps),
        ]
        for opt in ("adamw", "lion")
    ]
    table = _align_table(
        ["optimizer", "state_bytes", "mean_ms", "peak_ms", "std_ms", "data_points"], rows
    )
    table += (
        f"efficiency gain (state bytes): "
        f"{efficiency_gain(stats['adamw'].optimizer_state_bytes, stats['lion'].optimizer_state_bytes):.2f}%\n"
    )
    table += (
        f"efficiency gain (mean step time): "
        f"{efficiency_gain(stats['adamw'].mean_step_ms, stats['lion'].mean_step_ms):.2f}%\n"
    )
    print(table, end="")
    (out_dir / "bench.txt").write_text(table, encoding="utf-8")
    artifacts.append("bench.txt")
    write_manifest(out_dir, "bench-optim", seed, _config_snapshot(parser), artifacts)
    return EXIT_OK


def cmd_synthetic_data(args) -> int:
    try:
        config = synth.SynthConfig(
            seed=args.seed,
            vocab_size=args.vocab_size,
            n_triplets=args.triplets,
            n_eval_queries=args.eval_queries,
            n_candidates=args.candidates,
            n_relevant=args.relevant,
            query_len=args.query_len,
            marker_repeats=args.marker_repeats,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = synth.generate(config)
    out_dir = _resolve_out(args.out)
    files = synth.write_synth_files(data, out_dir)
    snapshot = {k: v for k, v in vars(config).items()}
    write_manifest(out_dir, "synthetic-data", args.seed, {"synth": snapshot}, list(files.values()))
    print(f"synthetic corpus in {out_dir}: {', '.join(sorted(files.values()))}")
    return EXIT_OK


def cmd_report(args) -> int:
    for path_str in args.files:
        path = _require_file(path_str, "report")
        text = path.read_text(encoding="utf-8")
        print(f"== {path}")
        if "\t" in text:
            rows = [line.split("\t") for line in text.splitlines() if line]
            width = max(len(r[0]) for r in rows)
            qwidth = max(len(r[1]) for r in rows if len(r) > 1)
            for r in rows:
                if len(r) == 3:
                    print(f"{r[0]:<{width}}  {r[1]:<{qwidth}}  {r[2]}")
                else:
                    print("  ".join(r))
        else:
            print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reranklab",
        description="Train toy cross-encoders with Lion/AdamW, rerank TREC runs, evaluate IR metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training from an INI config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides [run] out_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--optimizer", choices=("lion", "adamw"))
    p.add_argument("--name", help="checkpoint name prefix (default: [run] name)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rerank", help="rescore a candidate run with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tag", help="run tag (default: checkpoint file stem)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument(
        "--binarize-at",
        type=int,
        default=1,
        help="minimum grade counted relevant for binary metrics (TREC DL passage convention: 2)",
    )
    p.add_argument("--exponential-gain", action="store_true", help="use 2^rel - 1 NDCG gains")
    p.add_argument("--out", help="directory for metrics.tsv / metrics.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-optim", help="compare Lion vs AdamW resource usage")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.add_argument("--import", dest="import_file", help="TSV of label, adamw_mean, lion_mean")
    p.set_defaults(func=cmd_bench_optim)

    p = sub.add_parser("synthetic-data", help="generate a seeded separable corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--vocab-size", type=int, default=100)
    p.add_argument("--triplets", type=int, default=1000)
    p.add_argument("--eval-queries", type=int, default=20)
    p.add_argument("--candidates", type=int, default=50)
    p.add_argument("--relevant", type=int, default=5)
    p.add_argument("--query-len", type=int, default=3)
    p.add_argument("--marker-repeats", type=int, default=3)
    p.set_defaults(func=cmd_synthetic_data)

    p = sub.add_parser("report", help="pretty-print saved stats/metric files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (train_mod.ParseError, ir_eval.ParseError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
