"""Adam training loop, evaluation orchestration, checkpointing.

One model per task. Every source of randomness is a named stream keyed
on (seed, purpose, epoch, ...), so a (seed, config, dataset) triple
fully determines every reported number, and resuming from a checkpoint
replays the exact trajectory of an uninterrupted run.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import ShapeMismatch, Tensor, backward, make_rng, zero_grads
from .core import EXPR_CLASSES, INVALID, Task
from .dataio import SEGMENT_LENGTH, VideoRecord, load_split, make_batches, segment_video
from .encoder import Variant
from .heads import AUWeights, compute_au_weights, predict
from .metrics import (
    EvalReport,
    au_f1_scores,
    mean_ccc,
    pcc_per_dim,
    per_class_f1,
)
from .model import ModelConfig, ModelParams, build_model, forward, task_loss


class ConfigError(ValueError):
    """Bad or unknown key in a training config file."""


class CorruptCheckpoint(ValueError):
    """Checkpoint file is unreadable or truncated."""


class ConfigHashMismatch(ValueError):
    """Checkpoint was written under a different configuration."""


class TaskMismatch(ValueError):
    """Dataset, checkpoint, and requested task disagree."""


@dataclass
class TrainConfig:
    """Everything that determines a training run."""

    task: Task
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 128
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    dropout: Optional[float] = None
    variant: Optional[Variant] = None
    head_hidden: int = 256
    segment_length: int = SEGMENT_LENGTH
    grad_clip: float = 0.0  # 0 disables clipping
    eval_every: int = 1
    features: Optional[tuple[str, ...]] = None
    checkpoint_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.epochs < 0 or self.batch_size < 1 or self.segment_length < 1:
            raise ConfigError("epochs must be >= 0, batch_size and segment_length >= 1")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")

    # -- flat key=value config files -------------------------------------

    _OPTIONAL_STR = ("checkpoint_dir",)

    def to_file(self, path) -> None:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Task) or isinstance(v, Variant):
                v = v.value
            elif isinstance(v, tuple):
                v = ",".join(v)
            elif v is None:
                v = ""
            lines.append(f"{f.name}={v}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        raw: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            raw[key] = value.strip()
        if "task" not in raw and "task" not in overrides:
            raise ConfigError(f"{path}: missing required key 'task'")
        kwargs: dict = {}
        for key, value in raw.items():
            kwargs[key] = cls._parse_value(key, value)
        kwargs.update(overrides)
        return cls(**kwargs)

    @staticmethod
    def _parse_value(key: str, value: str):
        if key == "task":
            return Task(value)
        if key == "variant":
            return Variant(value) if value else None
        if key == "features":
            return tuple(v.strip() for v in value.split(",") if v.strip()) or None
        if key == "dropout":
            return float(value) if value else None
        if key == "checkpoint_dir":
            return value or None
        if key in ("lr", "beta1", "beta2", "eps", "grad_clip"):
            return float(value)
        return int(value)

    def config_hash(self) -> str:
        """Hash of every field that affects the training trajectory.

        checkpoint_dir, eval_every, and epochs are excluded so a resumed
        run can extend or relocate a checkpointed one.
        """
        skip = {"checkpoint_dir", "eval_every", "epochs"}
        payload = {}
        for f in fields(self):
            if f.name in skip:
                continue
            v = getattr(self, f.name)
            if isinstance(v, (Task, Variant)):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            payload[f.name] = v
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# optimizer


def adam_step(
    named_params: Sequence[tuple[str, Tensor]],
    grads: dict[str, np.ndarray],
    moments: dict[str, tuple[np.ndarray, np.ndarray]],
    step: int,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place. `step` counts from 1."""
    bc1 = 1.0 - cfg.beta1**step
    bc2 = 1.0 - cfg.beta2**step
    for name, tensor in named_params:
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tensor.data.shape:
            raise ShapeMismatch(f"{name}: grad shape {g.shape} vs param {tensor.data.shape}")
        m, v = moments[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        tensor.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def init_moments(named_params: Sequence[tuple[str, Tensor]]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {name: (np.zeros_like(t.data), np.zeros_like(t.data)) for name, t in named_params}


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


# ---------------------------------------------------------------------------
# batching glue


def _batch_arrays(batch, n_streams: int) -> list[np.ndarray]:
    return [np.stack([seg.features[i] for seg in batch]) for i in range(n_streams)]


def _batch_labels(batch, task: Task):
    if task is Task.VA:
        labels = np.concatenate([seg.labels.va for seg in batch])
        mask = np.concatenate([seg.valid_mask for seg in batch])
        return labels, mask
    if task is Task.EXPR:
        return np.concatenate([seg.labels.expr for seg in batch]), None
    if task is Task.AU:
        return np.concatenate([seg.labels.au for seg in batch]), None
    return np.stack([seg.labels.eri for seg in batch]), None


# ---------------------------------------------------------------------------
# evaluation


def _video_outputs(
    params: ModelParams, mconfig: ModelConfig, record: VideoRecord, segment_length: int
) -> np.ndarray:
    """Stitched raw head outputs for one video, original frame order.

    Frame tasks give (T, out_dim); the per-video task gives the
    length-weighted mean over segments, shape (out_dim,).
    """
    segments = segment_video(list(record.features), record.labels, record.video_id, segment_length)
    pieces = []
    for seg in segments:
        raw = forward(params, mconfig, list(seg.features), training=False).data
        pieces.append((seg, raw))
    if mconfig.task is Task.ERI:
        total = sum(seg.n_frames for seg, _ in pieces)
        return sum((seg.n_frames / total) * raw.reshape(-1) for seg, raw in pieces)
    return np.concatenate([raw for _, raw in pieces])


def evaluate(
    params: ModelParams,
    mconfig: ModelConfig,
    records: Sequence[VideoRecord],
    segment_length: int = SEGMENT_LENGTH,
) -> EvalReport:
    """Task metric over a whole split, videos in id order."""
    records = sorted(records, key=lambda r: r.video_id)
    if not records:
        raise ValueError("nothing to evaluate")
    task = mconfig.task
    if task is Task.ERI:
        raw = np.stack([_video_outputs(params, mconfig, r, segment_length) for r in records])
        preds = predict(raw, task)
        truth = np.stack([r.labels.eri for r in records])
        dims = pcc_per_dim(truth, preds)
        names = ("adoration", "amusement", "anxiety", "disgust", "empathic_pain", "fear", "surprise")
        return EvalReport(
            task=task,
            per_dimension={f"pcc_{n}": float(r) for n, r in zip(names, dims)},
            aggregate=float(np.mean(dims)),
            n_valid=len(records),
        )
    raw = np.concatenate([_video_outputs(params, mconfig, r, segment_length) for r in records])
    if task is Task.VA:
        truth = np.concatenate([r.labels.va for r in records])
        mask = np.concatenate([r.labels.frame_mask() for r in records])
        preds = predict(raw, task)
        ccc_v, ccc_a, mean = mean_ccc(preds, truth, mask)
        return EvalReport(
            task=task,
            per_dimension={"ccc_valence": ccc_v, "ccc_arousal": ccc_a},
            aggregate=mean,
            n_valid=int(mask.sum()),
        )
    if task is Task.EXPR:
        truth = np.concatenate([r.labels.expr for r in records])
        preds = predict(raw, task)
        valid = truth != INVALID
        scores = per_class_f1(truth[valid], preds[valid], EXPR_CLASSES)
        return EvalReport(
            task=task,
            per_dimension={f"f1_class{c}": float(s) for c, s in enumerate(scores)},
            aggregate=float(np.mean(scores)),
            n_valid=int(valid.sum()),
        )
    truth = np.concatenate([r.labels.au for r in records])
    probs = predict(raw, task)
    scores = au_f1_scores(truth, probs)
    return EvalReport(
        task=task,
        per_dimension={f"f1_au{i}": float(s) for i, s in enumerate(scores)},
        aggregate=float(np.mean(scores)),
        n_valid=int((truth != INVALID).any(axis=1).sum()),
    )


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"MMCK1"


@dataclass
class Checkpoint:
    """Full training state: parameters, optimizer moments, position."""

    config_hash: str
    epoch: int  # epochs fully completed
    step: int   # optimizer updates taken
    tensors: dict[str, np.ndarray]
    moments: dict[str, tuple[np.ndarray, np.ndarray]]


def save_checkpoint(
    path,
    cfg: TrainConfig,
    params: ModelParams,
    moments: dict[str, tuple[np.ndarray, np.ndarray]],
    epoch: int,
    step: int,
) -> None:
    named = params.named()
    manifest = [[name, list(t.data.shape)] for name, t in named]
    header = json.dumps(
        {
            "config_hash": cfg.config_hash(),
            "epoch": epoch,
            "step": step,
            "tensors": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, t in named:
            fh.write(t.data.astype("<f8").tobytes(order="C"))
        for name, _ in named:
            m, v = moments[name]
            fh.write(m.astype("<f8").tobytes(order="C"))
            fh.write(v.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    off = len(CKPT_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
        off += hlen
        manifest = header["tensors"]
    except (struct.error, json.JSONDecodeError, KeyError, UnicodeDecodeError) as e:
        raise CorruptCheckpoint(f"{path}: unreadable header ({e})") from None
    tensors: dict[str, np.ndarray] = {}
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def take(shape) -> np.ndarray:
        nonlocal off
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if len(raw) - off < nbytes:
            raise CorruptCheckpoint(f"{path}: truncated payload")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += nbytes
        return arr

    for name, shape in manifest:
        tensors[name] = take(shape)
    for name, shape in manifest:
        moments[name] = (take(shape), take(shape))
    return Checkpoint(
        config_hash=header["config_hash"],
        epoch=int(header["epoch"]),
        step=int(header["step"]),
        tensors=tensors,
        moments=moments,
    )


def restore_into(params: ModelParams, ckpt: Checkpoint) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    named = dict(params.named())
    if set(named) != set(ckpt.tensors):
        raise CorruptCheckpoint("checkpoint tensors do not match the model")
    for name, tensor in named.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.data.shape:
            raise CorruptCheckpoint(f"{name}: stored shape {stored.shape} vs model {tensor.data.shape}")
        tensor.data = stored.copy()
    return {name: (m.copy(), v.copy()) for name, (m, v) in ckpt.moments.items()}


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: ModelParams
    model_config: ModelConfig
    epoch_losses: list[float]
    reports: list[tuple[int, EvalReport]]
    log_lines: list[str] = field(default_factory=list)

    @property
    def final_report(self) -> Optional[EvalReport]:
        return self.reports[-1][1] if self.reports else None


def model_config_from(cfg: TrainConfig, registry) -> ModelConfig:
    return ModelConfig(
        task=cfg.task,
        features=tuple(registry),
        d_model=cfg.d_model,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        dropout=cfg.dropout,
        variant=cfg.variant,
        head_hidden=cfg.head_hidden,
    )


def _train_segments(records: Sequence[VideoRecord], segment_length: int):
    segments = []
    for r in records:
        segments.extend(segment_video(list(r.features), r.labels, r.video_id, segment_length))
    return segments


def au_weights_from_records(records: Sequence[VideoRecord]) -> AUWeights:
    return compute_au_weights(np.concatenate([r.labels.au for r in records]))


def _format_report(epoch: int, loss: float, report: Optional[EvalReport]) -> str:
    parts = [f"epoch={epoch}", f"loss={loss:.17g}"]
    if report is not None:
        for k, v in report.per_dimension.items():
            parts.append(f"{k}={v:.17g}")
        parts.append(f"aggregate={report.aggregate:.17g}")
    return " ".join(parts)


def train(cfg: TrainConfig, data_root, resume_from=None) -> TrainResult:
    """Run the full loop; per-epoch losses and validation reports logged.

    With a fixed (seed, config, dataset), the loss sequence and every
    report are bit-identical across runs; resuming from a checkpoint at
    epoch k continues exactly where the uninterrupted run would be.
    """
    if not (Path(data_root) / cfg.task.value).is_dir():
        raise TaskMismatch(f"no {cfg.task.value!r} data under {data_root}")
    registry, train_records = load_split(data_root, cfg.task, "train", feature_subset=cfg.features)
    _, val_records = load_split(data_root, cfg.task, "val", registry=registry)
    if not train_records:
        raise TaskMismatch(f"no training videos for task {cfg.task.value} under {data_root}")
    mconfig = model_config_from(cfg, registry)
    params = build_model(mconfig, cfg.seed)
    named = params.named()
    moments = init_moments(named)
    start_epoch = 0
    step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config_hash != cfg.config_hash():
            raise ConfigHashMismatch("checkpoint configuration differs from the current one")
        moments = restore_into(params, ckpt)
        start_epoch = ckpt.epoch
        step = ckpt.step

    au_weights = au_weights_from_records(train_records) if cfg.task is Task.AU else None
    train_segs = _train_segments(train_records, cfg.segment_length)

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    log_lines: list[str] = []
    epoch_losses: list[float] = []
    reports: list[tuple[int, EvalReport]] = []

    for epoch in range(start_epoch, cfg.epochs):
        shuffle_rng = make_rng(cfg.seed, "shuffle", epoch)
        batch_losses = []
        for bi, batch in enumerate(make_batches(train_segs, cfg.batch_size, shuffle_rng)):
            feats = _batch_arrays(batch, mconfig.n_streams)
            labels, mask = _batch_labels(batch, cfg.task)
            drop_rng = make_rng(cfg.seed, "dropout", epoch, bi)
            raw = forward(params, mconfig, feats, training=True, rng=drop_rng)
            loss = task_loss(mconfig, raw, labels, mask, au_weights)
            zero_grads([t for _, t in named])
            backward(loss)
            grads = {name: t.grad for name, t in named if t.grad is not None}
            if cfg.grad_clip > 0:
                _clip_grads(grads, cfg.grad_clip)
            step += 1
            adam_step(named, grads, moments, step, cfg)
            batch_losses.append(float(loss.data))
        epoch_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        epoch_losses.append(epoch_loss)

        report = None
        if val_records and (epoch + 1) % cfg.eval_every == 0:
            report = evaluate(params, mconfig, val_records, cfg.segment_length)
            reports.append((epoch, report))
        log_lines.append(_format_report(epoch, epoch_loss, report))

        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / "latest.ckpt", cfg, params, moments, epoch + 1, step)

    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (ckpt_dir / "metrics.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        (ckpt_dir / "metrics.json").write_text(
            json.dumps(
                {
                    "epoch_losses": epoch_losses,
                    "reports": [{"epoch": e, "report": json.loads(r.to_json())} for e, r in reports],
                },
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
    return TrainResult(params, mconfig, epoch_losses, reports, log_lines)
