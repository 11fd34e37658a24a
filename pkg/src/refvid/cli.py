"""Command-line entry point: datagen, train, eval, selfcheck."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .clients import FixtureCompletionClient, HttpCompletionClient
from .config import RunConfig, echo_config, load_run_config
from .errors import ConfigError, DataError, InputError, ParseError, RefvidError
from .rle import encode_mask
from .tokenizer import Tokenizer


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are validation errors: exit 1, not argparse's 2.
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def make_run_dir(base, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(base) / f"{command}-{stamp}"
    suffix = 0
    while run_dir.exists():
        suffix += 1
        run_dir = Path(base) / f"{command}-{stamp}-{suffix}"
    run_dir.mkdir(parents=True)
    return run_dir


def _common_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
    return overrides


def _load_config(args, extra: dict | None = None) -> RunConfig:
    overrides = _common_overrides(args)
    overrides.update(extra or {})
    return load_run_config(args.config, overrides)


def _dataset_from_config(cfg: RunConfig):
    from .datagen import generate_synthetic_corpus, load_frames_archive, load_jsonl

    if cfg.data.synthetic > 0:
        return generate_synthetic_corpus(cfg.data.synthetic, cfg.train.seed)
    if not cfg.data.corpus or not cfg.data.frames:
        raise ConfigError("need data.corpus and data.frames (or data.synthetic > 0)")
    records = load_jsonl(cfg.data.corpus)
    frames = load_frames_archive(cfg.data.frames)
    pairs = []
    for record in records:
        vid = record["video_id"]
        if vid not in frames:
            raise DataError(f"no frames stored for video {vid}")
        pairs.append((record, frames[vid]))
    return pairs


def cmd_datagen(args) -> int:
    from .datagen import (
        emit_jsonl,
        generate_synthetic_corpus,
        load_templates,
        run_pipeline,
        save_frames_archive,
        validate_record,
    )
    from .datagen.pipeline import PipelineLedger
    from .datagen.sources import load_box_csv_source, load_mask_dir_source

    cfg = _load_config(args, {
        "data.synthetic": args.synthetic,
        "data.mask_index": args.mask_index,
        "data.box_csv": args.box_csv,
        "data.frames_root": args.frames_root,
        "data.frame_interval": args.frame_interval,
        "data.fixture": args.fixture,
        "data.templates": args.templates,
        "data.palette": args.palette,
        "data.filter_single_object": args.filter_single_object,
    })
    run_dir = make_run_dir(args.out, "datagen")
    echo_config(cfg, run_dir)

    if cfg.data.synthetic > 0:
        pairs = generate_synthetic_corpus(cfg.data.synthetic, cfg.train.seed)
        records = [r for r, _ in pairs]
        bad = [r["video_id"] for r in records if validate_record(r)]
        if bad:
            raise DataError(f"synthetic records failed validation: {bad}")
        save_frames_archive(pairs, run_dir / "frames.npz")
        ledger = PipelineLedger()
        for record in records:
            ledger.add("synthetic", qa_pairs=len(record["conversation"]) // 2,
                       descriptions=len(record["descriptions"]))
    else:
        sources = []
        if cfg.data.mask_index:
            sources.extend(load_mask_dir_source(cfg.data.mask_index))
        if cfg.data.box_csv:
            if not cfg.data.frames_root:
                raise ConfigError("box_csv sources need data.frames_root")
            sources.extend(load_box_csv_source(cfg.data.box_csv, cfg.data.frames_root,
                                               frame_interval=cfg.data.frame_interval))
        if not sources:
            raise ConfigError("no data source: set data.synthetic, data.mask_index or data.box_csv")
        if cfg.data.fixture:
            client = FixtureCompletionClient(path=cfg.data.fixture)
        elif cfg.clients.annotation_endpoint:
            client = HttpCompletionClient(cfg.clients.annotation_endpoint,
                                          cfg.clients.annotation_key_env,
                                          max_concurrent=cfg.clients.max_concurrent)
        else:
            raise ConfigError("no annotation client: set data.fixture or clients.annotation_endpoint")
        palette = None
        if cfg.data.palette:
            raw = json.loads(Path(cfg.data.palette).read_text(encoding="utf-8"))
            palette = [(name, tuple(rgb)) for name, rgb in raw]
        templates = load_templates(cfg.data.templates)
        records, ledger = run_pipeline(sources, client, templates=templates, palette=palette,
                                       filter_single_object=cfg.data.filter_single_object)

    corpus_path = run_dir / "corpus.jsonl"
    emit_jsonl(records, corpus_path)
    (run_dir / "ledger.json").write_text(json.dumps(ledger.as_dict(), indent=2) + "\n",
                                         encoding="utf-8")
    print(ledger.format_table())
    if not records and cfg.data.filter_single_object:
        print("warning: 0 records emitted", file=sys.stderr)
    print(f"wrote {len(records)} records to {corpus_path}")
    return 0


def cmd_train(args) -> int:
    from .training import build_model, save_checkpoint, train, write_loss_curve

    cfg = _load_config(args, {
        "data.synthetic": args.synthetic,
        "data.corpus": args.data,
        "data.frames": args.frames,
        "train.steps": args.steps,
        "train.lr": args.lr,
        "train.text_loss_weight": args.text_loss_weight,
        "train.ablate_stc": True if args.ablate_stc else None,
        "train.train_lm": False if args.freeze_lm else None,
    })
    run_dir = make_run_dir(args.out, "train")
    echo_config(cfg, run_dir)
    dataset = _dataset_from_config(cfg)
    texts = [t["text"] for record, _ in dataset for t in record["conversation"]]
    tokenizer = Tokenizer.from_texts(texts)
    model = build_model(cfg.aggregator, cfg.model, tokenizer, cfg.train)
    result = train(dataset, model, cfg.train)
    save_checkpoint(run_dir / "checkpoint.pt", model, cfg.train)
    write_loss_curve(result.curve, run_dir / "loss_curve.csv")
    initial, final = result.initial_smoothed(), result.final_smoothed()
    print(f"steps: {len(result.curve)}  smoothed loss: {initial:.4f} -> {final:.4f}")
    print(f"checkpoint: {run_dir / 'checkpoint.pt'}")
    return 0


def _predictions_from_model(model, record, frames) -> list[dict]:
    predictions = []
    user_turns = [i for i, t in enumerate(record["conversation"]) if t["role"] == "user"]
    for turn_index in user_turns:
        text, grounded = model.generate(record, frames, prompt_turn_index=turn_index)
        predictions.append({
            "text": text,
            "objects": [
                {"phrase": g.phrase, "rle_masks": [encode_mask(m) for m in g.track.masks]}
                for g in grounded
            ],
        })
    return predictions


def cmd_eval(args) -> int:
    from .datagen import load_frames_archive, load_jsonl
    from .metrics import evaluate_pairs, pairs_from_record
    from .training import load_checkpoint

    cfg = _load_config(args, {
        "data.corpus": args.data,
        "data.frames": args.frames,
        "metrics.clair_fixture": args.clair_fixture,
        "metrics.clair": True if args.clair_fixture else None,
    })
    if not cfg.data.corpus:
        raise ConfigError("eval needs data.corpus (the evaluation JSONL)")
    run_dir = make_run_dir(args.out, "eval")
    echo_config(cfg, run_dir)
    records = load_jsonl(cfg.data.corpus)

    model = None
    frames_store = None
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        model.eval()
        if not cfg.data.frames:
            raise ConfigError("evaluating a checkpoint needs data.frames")
        frames_store = load_frames_archive(cfg.data.frames)

    pairs = []
    for record in records:
        predictions = record.get("predictions")
        if predictions is None:
            if model is None:
                raise ConfigError(
                    f"record {record['video_id']} has no predictions and no checkpoint was given"
                )
            predictions = _predictions_from_model(model, record,
                                                  frames_store[record["video_id"]])
        pairs.extend(pairs_from_record(record, predictions))

    clair_client = None
    if cfg.metrics.clair:
        if cfg.metrics.clair_fixture:
            clair_client = FixtureCompletionClient(path=cfg.metrics.clair_fixture)
        elif cfg.metrics.judge_endpoint:
            clair_client = HttpCompletionClient(cfg.metrics.judge_endpoint,
                                                cfg.metrics.judge_key_env)
        else:
            raise ConfigError("metrics.clair needs a fixture or judge endpoint")
    report = evaluate_pairs(pairs, iou_threshold=cfg.metrics.iou_threshold,
                            clair_client=clair_client)
    (run_dir / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (run_dir / "report.txt").write_text(report.format_table() + "\n", encoding="utf-8")
    print(report.format_table())
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name}: {result.detail}")
        failed += not result.passed
    if failed:
        print(f"{failed} check(s) failed", file=sys.stderr)
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="refvid",
                     description="Grounded video dialogue toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--out", default="runs", help="base output directory")

    p = sub.add_parser("datagen", help="build a grounded-dialogue corpus")
    common(p)
    p.add_argument("--synthetic", type=int, help="generate N synthetic videos")
    p.add_argument("--mask-index", help="mask-track source index.json")
    p.add_argument("--box-csv", help="box-track CSV")
    p.add_argument("--frames-root", help="frame images for box sources")
    p.add_argument("--frame-interval", type=int, help="box-source frame sampling interval")
    p.add_argument("--fixture", help="annotation fixture replies (JSON)")
    p.add_argument("--templates", help="prompt template directory")
    p.add_argument("--palette", help="palette JSON file")
    p.add_argument("--filter-single-object", action=argparse.BooleanOptionalAction,
                   default=None)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train the toy model")
    common(p)
    p.add_argument("--synthetic", type=int, help="train on N generated videos")
    p.add_argument("--data", help="training corpus JSONL")
    p.add_argument("--frames", help="frames .npz archive")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--text-loss-weight", type=float)
    p.add_argument("--ablate-stc", action="store_true")
    p.add_argument("--freeze-lm", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against references")
    common(p)
    p.add_argument("--data", help="evaluation JSONL")
    p.add_argument("--frames", help="frames .npz (needed with --checkpoint)")
    p.add_argument("--checkpoint", help="model checkpoint for generating predictions")
    p.add_argument("--clair-fixture", help="judge fixture replies (JSON)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfcheck", help="run built-in consistency checks")
    common(p)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, DataError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RefvidError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
