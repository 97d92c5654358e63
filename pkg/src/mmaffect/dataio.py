"""On-disk formats, segmentation, batching, and synthetic data.

Feature files (.fseq) are little-endian binary: a 5-byte magic, a
length-prefixed JSON header, then T*D float32 values row-major. Label
files are plain text, one frame per line (one line total for per-video
labels). Dataset trees look like

    <root>/<task>/<split>/<video_id>/<feature>.fseq
    <root>/<task>/<split>/<video_id>.labels

The synthetic generator stands in for the restricted competition data:
features are smooth mixtures of latent per-frame affect states and the
labels are deterministic functions of those latents, so a working
pipeline can provably recover them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .autodiff import make_rng
from .core import (
    AU_COUNT,
    ERI_DIMS,
    EXPR_CLASSES,
    FeatureDescriptor,
    FeatureRegistry,
    FeatureSequence,
    Modality,
    Segment,
    Task,
    TaskLabels,
    align_lengths,
    validate_sequence,
)

FSEQ_MAGIC = b"FSEQ1"
SEGMENT_LENGTH = 256


class BadMagic(ValueError):
    """File does not start with the feature-sequence magic bytes."""


class HeaderMismatch(ValueError):
    """Header metadata contradicts the registry or itself."""


class TruncatedPayload(ValueError):
    """Fewer payload bytes than the header promises."""


class EmptyVideo(ValueError):
    """A video with no frames cannot be segmented."""


# ---------------------------------------------------------------------------
# feature files


def write_fseq(seq: FeatureSequence, path) -> None:
    """Serialize a validated feature sequence; float32 little-endian payload."""
    validate_sequence(seq)
    t, d = seq.values.shape
    header = json.dumps(
        {
            "video_id": seq.video_id,
            "feature_name": seq.descriptor.name,
            "modality": seq.descriptor.modality.value,
            "T": t,
            "D": d,
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = seq.values.astype("<f4").tobytes(order="C")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FSEQ_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_fseq(path, registry: Optional[FeatureRegistry] = None) -> FeatureSequence:
    """Read a feature sequence, checking dims against `registry` if given."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(FSEQ_MAGIC)] != FSEQ_MAGIC:
        raise BadMagic(f"{path}: not a feature-sequence file")
    off = len(FSEQ_MAGIC)
    if len(raw) < off + 4:
        raise TruncatedPayload(f"{path}: missing header length")
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + hlen:
        raise TruncatedPayload(f"{path}: truncated header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
        video_id = header["video_id"]
        name = header["feature_name"]
        modality = Modality(header["modality"])
        t, d = int(header["T"]), int(header["D"])
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise HeaderMismatch(f"{path}: bad header ({e})") from None
    off += hlen
    expected = 4 * t * d
    if len(raw) - off < expected:
        raise TruncatedPayload(f"{path}: payload has {len(raw) - off} bytes, header promises {expected}")
    if registry is not None:
        if name not in registry:
            raise HeaderMismatch(f"{path}: feature {name!r} not in registry")
        want = registry.get(name)
        if want.dim != d:
            raise HeaderMismatch(f"{path}: header D={d}, registry says {want.dim}")
        if want.modality is not modality:
            raise HeaderMismatch(f"{path}: header modality {modality.value}, registry says {want.modality.value}")
    values = np.frombuffer(raw, dtype="<f4", count=t * d, offset=off).reshape(t, d)
    desc = FeatureDescriptor(name, modality, d)
    return FeatureSequence(desc, video_id, values.astype(np.float64))


# ---------------------------------------------------------------------------
# label files


def write_labels(labels: TaskLabels, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if labels.task is Task.VA:
        lines = [f"{v:.6f},{a:.6f}" for v, a in labels.va]
    elif labels.task is Task.EXPR:
        lines = [str(int(c)) for c in labels.expr]
    elif labels.task is Task.AU:
        lines = [",".join(str(int(v)) for v in row) for row in labels.au]
    else:
        lines = [" ".join(f"{v:.6f}" for v in labels.eri)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_labels(path, task: Task) -> TaskLabels:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if task is Task.VA:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
        return TaskLabels(Task.VA, va=np.array(rows))
    if task is Task.EXPR:
        return TaskLabels(Task.EXPR, expr=np.array([int(ln) for ln in lines]))
    if task is Task.AU:
        rows = [[int(v) for v in ln.split(",")] for ln in lines]
        return TaskLabels(Task.AU, au=np.array(rows))
    if len(lines) != 1:
        raise ValueError(f"{path}: per-video labels must be a single line, got {len(lines)}")
    return TaskLabels(Task.ERI, eri=np.array([float(v) for v in lines[0].split()]))


# ---------------------------------------------------------------------------
# segmentation and batching


def segment_video(
    features: Sequence[np.ndarray],
    labels: TaskLabels,
    video_id: str,
    segment_length: int = SEGMENT_LENGTH,
) -> list[Segment]:
    """Tile [0, T) with consecutive windows of at most `segment_length`.

    The final partial window is kept at its natural length; labels and
    masks are sliced identically. Inputs must already be aligned.
    """
    if segment_length < 1:
        raise ValueError(f"segment_length must be >= 1, got {segment_length}")
    if not features:
        raise EmptyVideo(f"{video_id}: no feature streams")
    t = features[0].shape[0]
    if t < 1:
        raise EmptyVideo(f"{video_id}: zero frames")
    if any(f.shape[0] != t for f in features):
        raise ValueError(f"{video_id}: features not aligned; run align_lengths first")
    n_frames = labels.n_frames
    if n_frames is not None and n_frames != t:
        raise ValueError(f"{video_id}: {t} feature frames vs {n_frames} label frames")
    segments = []
    for start in range(0, t, segment_length):
        stop = min(start + segment_length, t)
        segments.append(
            Segment(
                video_id=video_id,
                start_frame=start,
                features=tuple(f[start:stop] for f in features),
                labels=labels.slice(start, stop),
            )
        )
    return segments


def make_batches(
    segments: Sequence[Segment],
    batch_size: int = 128,
    rng: Optional[np.random.Generator] = None,
) -> Iterator[list[Segment]]:
    """Shuffled batches of equal-length segments (no padding within a batch).

    Segments are shuffled by the seeded rng, then bucketed by length as
    they stream past; each bucket flushes at `batch_size`, remainders
    flush at the end in ascending length order. Deterministic per seed.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = list(segments)
    if rng is not None:
        rng.shuffle(order)
    buckets: dict[int, list[Segment]] = {}
    for seg in order:
        bucket = buckets.setdefault(seg.n_frames, [])
        bucket.append(seg)
        if len(bucket) == batch_size:
            yield bucket
            buckets[seg.n_frames] = []
    for length in sorted(buckets):
        if buckets[length]:
            yield buckets[length]


# ---------------------------------------------------------------------------
# dataset trees


def assign_split(video_id: str) -> str:
    """Deterministic 80/20 train/val assignment from the video id."""
    digest = make_rng("split", video_id).integers(0, 5)
    return "val" if digest == 0 else "train"


def task_dir(root, task: Task, split: str) -> Path:
    return Path(root) / task.value / split


@dataclass(frozen=True)
class VideoRecord:
    """One loaded video: aligned feature matrices in registry order."""

    video_id: str
    features: tuple[np.ndarray, ...]
    labels: TaskLabels

    @property
    def n_frames(self) -> int:
        return self.features[0].shape[0]


def discover_registry(root, task: Task, split: str) -> FeatureRegistry:
    """Rebuild the registry from one video's files; lexicographic order."""
    base = task_dir(root, task, split)
    video_dirs = sorted(p for p in base.iterdir() if p.is_dir())
    if not video_dirs:
        raise FileNotFoundError(f"no videos under {base}")
    registry = FeatureRegistry()
    for f in sorted(video_dirs[0].glob("*.fseq")):
        registry.register(read_fseq(f).descriptor)
    if len(registry) == 0:
        raise FileNotFoundError(f"no .fseq files under {video_dirs[0]}")
    return registry


def load_split(
    root,
    task: Task,
    split: str,
    registry: Optional[FeatureRegistry] = None,
    feature_subset: Optional[Sequence[str]] = None,
) -> tuple[FeatureRegistry, list[VideoRecord]]:
    """Load every video of a split, aligned and validated, sorted by id."""
    if registry is None:
        registry = discover_registry(root, task, split)
    if feature_subset is not None:
        registry = registry.subset(feature_subset)
    base = task_dir(root, task, split)
    records = []
    for vdir in sorted(p for p in base.iterdir() if p.is_dir()):
        video_id = vdir.name
        seqs = []
        for desc in registry:
            fpath = vdir / f"{desc.name}.fseq"
            if not fpath.exists():
                raise FileNotFoundError(f"{video_id}: missing feature file {fpath}")
            seq = read_fseq(fpath, registry)
            validate_sequence(seq)
            seqs.append(seq)
        seqs = align_lengths(seqs)
        labels = read_labels(base / f"{video_id}.labels", task)
        t = seqs[0].n_frames
        n_frames = labels.n_frames
        if n_frames is not None and n_frames != t:
            if n_frames < t:
                raise ValueError(f"{video_id}: fewer label frames ({n_frames}) than feature frames ({t})")
            labels = labels.slice(0, t)
        records.append(VideoRecord(video_id, tuple(s.values for s in seqs), labels))
    return registry, records


# ---------------------------------------------------------------------------
# synthetic data generator


def synthetic_registry() -> FeatureRegistry:
    """Two smooth synthetic streams, one per modality."""
    return FeatureRegistry(
        [
            FeatureDescriptor("synth_audio", Modality.AUDIO, 24),
            FeatureDescriptor("synth_visual", Modality.VISUAL, 16),
        ]
    )


def _smooth_series(rng: np.random.Generator, t: int, n: int, cycles=(0.5, 3.0)) -> np.ndarray:
    """(t, n) sums of a few random low-frequency sinusoids, std ~= 1."""
    time = np.arange(t) / max(t, 1)
    out = np.zeros((t, n))
    n_components = 4
    for j in range(n):
        freqs = rng.uniform(cycles[0], cycles[1], size=n_components)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_components)
        amps = rng.uniform(0.5, 1.0, size=n_components)
        wave = np.zeros(t)
        for f, p, a in zip(freqs, phases, amps):
            wave += a * np.sin(2.0 * np.pi * f * time + p)
        out[:, j] = wave / np.sqrt((amps**2).sum() / 2.0)
    return out


def _latents_and_labels(
    task: Task, t: int, rng: np.random.Generator, thresholds: Optional[tuple[np.ndarray, np.ndarray]]
):
    """Per-frame latent state plus the deterministic labels it induces."""
    if task is Task.VA:
        z = 0.9 * np.tanh(_smooth_series(rng, t, 2))
        return z, TaskLabels(Task.VA, va=z)
    if task is Task.EXPR:
        theta = 2.0 * np.pi * (2.0 * np.arange(t) / t) + 0.8 * _smooth_series(rng, t, 1)[:, 0]
        radius = 0.55 + 0.35 * (0.5 + 0.5 * np.tanh(_smooth_series(rng, t, 1)[:, 0]))
        z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        classes = np.floor((theta % (2.0 * np.pi)) / (np.pi / 4.0)).astype(np.int64)
        classes = np.clip(classes, 0, EXPR_CLASSES - 1)
        # a few unannotated frames so masking actually gets exercised
        classes[rng.random(t) < 0.03] = -1
        return z, TaskLabels(Task.EXPR, expr=classes)
    if task is Task.AU:
        z = np.tanh(_smooth_series(rng, t, 3))
        directions, taus = thresholds
        scores = z @ directions.T
        au = (scores > taus).astype(np.int64)
        drop = rng.random(au.shape) < 0.02
        au[drop] = -1
        return z, TaskLabels(Task.AU, au=au)
    # ERI: a per-video intensity vector plus zero-mean temporal wiggle, so
    # pooling over the video recovers the label exactly.
    e = rng.uniform(0.15, 0.85, size=ERI_DIMS)
    wiggle = 0.1 * _smooth_series(rng, t, ERI_DIMS)
    wiggle -= wiggle.mean(axis=0, keepdims=True)
    z = e + wiggle
    return z, TaskLabels(Task.ERI, eri=e)


def _au_thresholds(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed per-dataset AU decision planes with spread occurrence rates."""
    rng = make_rng(seed, "au-planes")
    directions = rng.normal(size=(AU_COUNT, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    pilot = np.tanh(_smooth_series(make_rng(seed, "au-pilot"), 4096, 3))
    scores = pilot @ directions.T
    target_rates = np.linspace(0.25, 0.7, AU_COUNT)
    taus = np.array([np.quantile(scores[:, i], 1.0 - r) for i, r in enumerate(target_rates)])
    return directions, taus


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a generated dataset."""

    task: Task
    n_videos: int
    seed: int
    t_range: tuple[int, int] = (540, 660)
    registry: Optional[FeatureRegistry] = None


def gen_synthetic(root, spec: SyntheticSpec) -> dict[str, list[str]]:
    """Write a synthetic dataset tree; returns video ids per split.

    All randomness is keyed on (seed, stream), so identical specs write
    byte-identical trees. Every video's features share one mixing matrix
    per feature, which is what makes the labels linearly recoverable
    from the features.
    """
    registry = spec.registry if spec.registry is not None else synthetic_registry()
    latent_dim = {Task.VA: 2, Task.EXPR: 2, Task.AU: 3, Task.ERI: ERI_DIMS}[spec.task]
    mix_rng = make_rng(spec.seed, "mixing")
    mixers = {
        d.name: mix_rng.normal(size=(d.dim, latent_dim)) / np.sqrt(latent_dim) for d in registry
    }
    nuisance_mixers = {d.name: mix_rng.normal(size=(d.dim, 4)) / 2.0 for d in registry}
    offsets = {d.name: mix_rng.normal(size=d.dim) * 0.3 for d in registry}
    thresholds = _au_thresholds(spec.seed) if spec.task is Task.AU else None

    splits: dict[str, list[str]] = {"train": [], "val": []}
    for i in range(spec.n_videos):
        video_id = f"v{i:03d}"
        vid_rng = make_rng(spec.seed, "video", spec.task.value, video_id)
        t = int(vid_rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        z, labels = _latents_and_labels(spec.task, t, vid_rng, thresholds)
        nuisance = _smooth_series(vid_rng, t, 4)
        split = assign_split(video_id)
        splits[split].append(video_id)
        base = task_dir(root, spec.task, split)
        for desc in registry:
            values = z @ mixers[desc.name].T + 0.15 * (nuisance @ nuisance_mixers[desc.name].T)
            values = values + offsets[desc.name]
            seq = FeatureSequence(desc, video_id, values, frame_rate_hint=30.0)
            write_fseq(seq, base / video_id / f"{desc.name}.fseq")
        write_labels(labels, base / f"{video_id}.labels")

    # Hash splits can starve a side on tiny datasets; rebalance
    # deterministically so both splits always exist.
    for needy, donor in (("val", "train"), ("train", "val")):
        if not splits[needy] and len(splits[donor]) > 1:
            mover = sorted(splits[donor])[0]
            splits[donor].remove(mover)
            splits[needy].append(mover)
            src = task_dir(root, spec.task, donor)
            dst = task_dir(root, spec.task, needy)
            dst.mkdir(parents=True, exist_ok=True)
            (src / mover).rename(dst / mover)
            (src / f"{mover}.labels").rename(dst / f"{mover}.labels")
    return {k: sorted(v) for k, v in splits.items()}
