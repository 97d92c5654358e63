"""Domain types, the feature registry, and sequence validation/alignment.

Feature streams arrive as per-frame matrices produced by external
extractors. Everything downstream (embedding, encoding, losses, metrics)
assumes the invariants enforced here: known dimensions, finite values,
and per-video alignment of all streams.

All types in this module are immutable after construction; the backing
numpy arrays are marked read-only, so instances can be shared freely
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np


class Modality(Enum):
    AUDIO = "audio"
    VISUAL = "visual"


class Task(Enum):
    VA = "va"      # per-frame valence/arousal regression
    EXPR = "expr"  # per-frame 8-way expression classification
    AU = "au"      # per-frame 12-way multi-label action-unit detection
    ERI = "eri"    # per-video 7-way reaction-intensity regression


EXPR_CLASSES = 8
AU_COUNT = 12
ERI_DIMS = 7
INVALID = -1  # marker for unannotated frames in expr/au label streams


class DuplicateName(ValueError):
    """A feature name was registered twice."""


class DimMismatch(ValueError):
    """Row width does not match the declared feature dimension."""


class NonFinite(ValueError):
    """A feature matrix contains NaN or infinity."""


class EmptySequence(ValueError):
    """A feature sequence has no frames."""


class MixedVideos(ValueError):
    """Sequences from different videos cannot be aligned together."""


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureDescriptor:
    """One named feature stream: identifier, modality, and width."""

    name: str
    modality: Modality
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DimMismatch(f"feature {self.name!r}: dim must be >= 1, got {self.dim}")


class FeatureRegistry:
    """Ordered collection of feature descriptors.

    Iteration order is insertion order and is what fixes the feature
    concatenation order throughout the pipeline, so it must be the same
    at train and inference time.
    """

    def __init__(self, descriptors: Sequence[FeatureDescriptor] = ()) -> None:
        self._by_name: dict[str, FeatureDescriptor] = {}
        for d in descriptors:
            self.register(d)

    def register(self, descriptor: FeatureDescriptor) -> None:
        if descriptor.name in self._by_name:
            raise DuplicateName(f"feature {descriptor.name!r} already registered")
        self._by_name[descriptor.name] = descriptor

    def __len__(self) -> int:
        return len(self._by_name)

    def __iter__(self) -> Iterator[FeatureDescriptor]:
        return iter(self._by_name.values())

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> FeatureDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"feature {name!r} not registered") from None

    @property
    def names(self) -> list[str]:
        return list(self._by_name)

    @property
    def dims(self) -> list[int]:
        return [d.dim for d in self]

    def subset(self, names: Sequence[str]) -> "FeatureRegistry":
        """Registry restricted to `names`, keeping this registry's order."""
        wanted = set(names)
        missing = wanted - set(self._by_name)
        if missing:
            raise KeyError(f"unknown features: {sorted(missing)}")
        return FeatureRegistry([d for d in self if d.name in wanted])


def default_feature_registry() -> FeatureRegistry:
    """The standard audio/visual extractor set with its published widths."""
    return FeatureRegistry(
        [
            FeatureDescriptor("IS09", Modality.AUDIO, 384),
            FeatureDescriptor("CNN14", Modality.AUDIO, 2048),
            FeatureDescriptor("VGGish", Modality.AUDIO, 128),
            FeatureDescriptor("eGeMAPS", Modality.AUDIO, 88),
            FeatureDescriptor("DeepSpectrum", Modality.AUDIO, 1024),
            FeatureDescriptor("EAC", Modality.VISUAL, 2048),
            FeatureDescriptor("FAU", Modality.VISUAL, 17),
            FeatureDescriptor("ResNet18", Modality.VISUAL, 512),
            FeatureDescriptor("POSTER", Modality.VISUAL, 768),
            FeatureDescriptor("POSTER2", Modality.VISUAL, 768),
        ]
    )


@dataclass(frozen=True)
class FeatureSequence:
    """One feature stream for one video: T frames x descriptor.dim floats."""

    descriptor: FeatureDescriptor
    video_id: str
    values: np.ndarray
    frame_rate_hint: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def validate_sequence(seq: FeatureSequence) -> None:
    """Raise unless `seq` satisfies every FeatureSequence invariant."""
    v = seq.values
    if v.ndim != 2 or v.shape[0] < 1:
        raise EmptySequence(f"{seq.video_id}/{seq.descriptor.name}: need a non-empty TxD matrix, got shape {v.shape}")
    if v.shape[1] != seq.descriptor.dim:
        raise DimMismatch(
            f"{seq.video_id}/{seq.descriptor.name}: rows have {v.shape[1]} entries, descriptor says {seq.descriptor.dim}"
        )
    if not np.all(np.isfinite(v)):
        raise NonFinite(f"{seq.video_id}/{seq.descriptor.name}: non-finite entries present")
    if seq.frame_rate_hint is not None and not seq.frame_rate_hint > 0:
        raise ValueError(f"frame_rate_hint must be positive, got {seq.frame_rate_hint}")


def align_lengths(seqs: Sequence[FeatureSequence]) -> list[FeatureSequence]:
    """Truncate all sequences of one video to their common minimum length.

    Extractors may run at slightly different strides; truncating from the
    end never fabricates frames. Idempotent, order preserving.
    """
    if not seqs:
        return []
    video_ids = {s.video_id for s in seqs}
    if len(video_ids) > 1:
        raise MixedVideos(f"cannot align sequences from different videos: {sorted(video_ids)}")
    t_min = min(s.n_frames for s in seqs)
    out = []
    for s in seqs:
        if s.n_frames == t_min:
            out.append(s)
        else:
            out.append(
                FeatureSequence(s.descriptor, s.video_id, s.values[:t_min], s.frame_rate_hint)
            )
    return out


@dataclass(frozen=True)
class TaskLabels:
    """Tagged union over the four task label layouts.

    Exactly the field matching `task` is set. Frame tasks use -1 to mark
    unannotated frames (expr: per frame, au: per entry); those entries are
    excluded from losses and metrics.
    """

    task: Task
    va: Optional[np.ndarray] = None    # (T, 2) floats in [-1, 1]
    expr: Optional[np.ndarray] = None  # (T,) ints in {-1, 0..7}
    au: Optional[np.ndarray] = None    # (T, 12) ints in {-1, 0, 1}
    eri: Optional[np.ndarray] = None   # (7,) floats in [0, 1]

    def __post_init__(self) -> None:
        present = {
            Task.VA: self.va,
            Task.EXPR: self.expr,
            Task.AU: self.au,
            Task.ERI: self.eri,
        }
        for task, value in present.items():
            if (value is not None) != (task == self.task):
                raise ValueError(f"labels for {self.task.value}: field {task.value} {'missing' if task == self.task else 'unexpectedly set'}")
        if self.va is not None:
            va = np.asarray(self.va, dtype=np.float64)
            if va.ndim != 2 or va.shape[1] != 2:
                raise ValueError(f"va labels must be (T, 2), got {va.shape}")
            if np.any((va < -1.0) | (va > 1.0)):
                raise ValueError("va labels must lie in [-1, 1]")
            object.__setattr__(self, "va", _frozen(va))
        if self.expr is not None:
            expr = np.asarray(self.expr, dtype=np.int64)
            if expr.ndim != 1:
                raise ValueError(f"expr labels must be (T,), got {expr.shape}")
            if np.any((expr < -1) | (expr >= EXPR_CLASSES)):
                raise ValueError(f"expr labels must lie in {{-1, 0..{EXPR_CLASSES - 1}}}")
            object.__setattr__(self, "expr", _frozen(expr))
        if self.au is not None:
            au = np.asarray(self.au, dtype=np.int64)
            if au.ndim != 2 or au.shape[1] != AU_COUNT:
                raise ValueError(f"au labels must be (T, {AU_COUNT}), got {au.shape}")
            if np.any((au < -1) | (au > 1)):
                raise ValueError("au labels must lie in {-1, 0, 1}")
            object.__setattr__(self, "au", _frozen(au))
        if self.eri is not None:
            eri = np.asarray(self.eri, dtype=np.float64)
            if eri.shape != (ERI_DIMS,):
                raise ValueError(f"eri labels must be ({ERI_DIMS},), got {eri.shape}")
            if np.any((eri < 0.0) | (eri > 1.0)):
                raise ValueError("eri labels must lie in [0, 1]")
            object.__setattr__(self, "eri", _frozen(eri))

    @property
    def n_frames(self) -> Optional[int]:
        """Frame count for frame-level tasks; None for per-video labels."""
        if self.va is not None:
            return self.va.shape[0]
        if self.expr is not None:
            return self.expr.shape[0]
        if self.au is not None:
            return self.au.shape[0]
        return None

    def frame_mask(self) -> Optional[np.ndarray]:
        """Boolean per-frame validity; None for per-video labels."""
        if self.va is not None:
            return np.ones(self.va.shape[0], dtype=bool)
        if self.expr is not None:
            return self.expr != INVALID
        if self.au is not None:
            return np.any(self.au != INVALID, axis=1)
        return None

    def slice(self, start: int, stop: int) -> "TaskLabels":
        """Labels for the frame window [start, stop); ERI labels pass through."""
        if self.task is Task.ERI:
            return self
        if self.task is Task.VA:
            return TaskLabels(Task.VA, va=self.va[start:stop])
        if self.task is Task.EXPR:
            return TaskLabels(Task.EXPR, expr=self.expr[start:stop])
        return TaskLabels(Task.AU, au=self.au[start:stop])


@dataclass(frozen=True)
class Segment:
    """A contiguous window of aligned multi-feature frames with labels.

    Feature matrices follow registry order; all share the window length.
    """

    video_id: str
    start_frame: int
    features: tuple[np.ndarray, ...]
    labels: TaskLabels
    valid_mask: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.start_frame < 0:
            raise ValueError(f"start_frame must be >= 0, got {self.start_frame}")
        if not self.features:
            raise ValueError("segment needs at least one feature matrix")
        lengths = {f.shape[0] for f in self.features}
        if len(lengths) != 1:
            raise ValueError(f"feature matrices disagree on length: {sorted(lengths)}")
        (t,) = lengths
        if t < 1:
            raise EmptySequence("segment has no frames")
        object.__setattr__(self, "features", tuple(_frozen(f) for f in self.features))
        mask = self.valid_mask
        if mask is None:
            fm = self.labels.frame_mask()
            mask = fm if fm is not None else np.ones(t, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (t,):
            raise ValueError(f"valid_mask must be ({t},), got {mask.shape}")
        object.__setattr__(self, "valid_mask", _frozen(mask))

    @property
    def n_frames(self) -> int:
        return self.features[0].shape[0]
