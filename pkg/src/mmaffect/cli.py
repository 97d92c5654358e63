"""Command-line entry point: gen-synthetic | train | eval | predict.

Exit codes: 0 success, 2 usage error (bad flags/subcommand), 1 runtime
error. All randomness flows from --seed, so identical invocations write
identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import Task
from .dataio import SyntheticSpec, gen_synthetic, load_split, segment_video
from .heads import predict
from .model import forward
from .trainer import (
    TaskMismatch,
    TrainConfig,
    build_model,
    evaluate,
    load_checkpoint,
    model_config_from,
    restore_into,
    train,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", required=True, choices=[t.value for t in Task])
    p.add_argument("--data", required=True, help="dataset root directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmaffect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a synthetic dataset tree")
    g.add_argument("--task", required=True, choices=[t.value for t in Task])
    g.add_argument("--videos", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames-min", type=int, default=540)
    g.add_argument("--frames-max", type=int, default=660)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one task model")
    _add_common(t)
    t.add_argument("--config", help="flat key=value training config file")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--features", help="comma-separated registry subset")
    t.add_argument("--checkpoint", help="resume from this checkpoint")
    t.add_argument("--checkpoint-dir", help="override the config checkpoint dir")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--split", default="val", choices=["train", "val"])
    e.add_argument("--features", help="comma-separated registry subset")

    p = sub.add_parser("predict", help="write per-frame prediction CSVs")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="comma-separated registry subset")
    return parser


def _load_config(args, require_file: bool = False) -> TrainConfig:
    overrides = {"task": Task(args.task)}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "features", None):
        overrides["features"] = tuple(v.strip() for v in args.features.split(","))
    if getattr(args, "checkpoint_dir", None):
        overrides["checkpoint_dir"] = args.checkpoint_dir
    if args.config:
        cfg = TrainConfig.from_file(args.config, **overrides)
    elif require_file:
        raise TaskMismatch("this command requires --config")
    else:
        cfg = TrainConfig(**overrides)
    if cfg.task is not Task(args.task):
        raise TaskMismatch(f"--task {args.task} but config says {cfg.task.value}")
    return cfg


def _restore(cfg: TrainConfig, data_root: str, split: str, checkpoint: str):
    if not (Path(data_root) / cfg.task.value).is_dir():
        raise TaskMismatch(f"no {cfg.task.value!r} data under {data_root}")
    registry, records = load_split(data_root, cfg.task, split, feature_subset=cfg.features)
    mconfig = model_config_from(cfg, registry)
    params = build_model(mconfig, cfg.seed)
    ckpt = load_checkpoint(checkpoint)
    if ckpt.config_hash != cfg.config_hash():
        raise TaskMismatch("checkpoint was trained under a different configuration")
    restore_into(params, ckpt)
    return mconfig, params, records


def _cmd_gen(args) -> int:
    spec = SyntheticSpec(
        task=Task(args.task),
        n_videos=args.videos,
        seed=args.seed,
        t_range=(args.frames_min, args.frames_max),
    )
    splits = gen_synthetic(args.out, spec)
    for split, ids in sorted(splits.items()):
        print(f"{split}: {len(ids)} videos")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    result = train(cfg, args.data, resume_from=args.checkpoint)
    for line in result.log_lines:
        print(line)
    if result.final_report is not None:
        print(result.final_report.to_text())
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args, require_file=True)
    mconfig, params, records = _restore(cfg, args.data, args.split, args.checkpoint)
    report = evaluate(params, mconfig, records, cfg.segment_length)
    print(report.to_text())
    print(report.to_json())
    return 0


def _cmd_predict(args) -> int:
    cfg = _load_config(args, require_file=True)
    mconfig, params, records = _restore(cfg, args.data, args.split, args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    task = cfg.task
    for record in sorted(records, key=lambda r: r.video_id):
        segments = segment_video(list(record.features), record.labels, record.video_id, cfg.segment_length)
        raws = [forward(params, mconfig, list(s.features), training=False).data for s in segments]
        if task is Task.ERI:
            total = sum(s.n_frames for s in segments)
            pooled = sum((s.n_frames / total) * r.reshape(-1) for s, r in zip(segments, raws))
            values = np.tile(predict(pooled, task), (record.n_frames, 1))
        else:
            values = predict(np.concatenate(raws), task)
            if values.ndim == 1:
                values = values[:, None]
        lines = [
            f"{i}," + ",".join(f"{v:.6f}" if task is not Task.EXPR else str(int(v)) for v in row)
            for i, row in enumerate(values)
        ]
        (out_dir / f"{record.video_id}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} prediction files to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-synthetic": _cmd_gen,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "predict": _cmd_predict,
    }
    try:
        return handlers[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as e:  # surface runtime failures as exit 1, not tracebacks
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
