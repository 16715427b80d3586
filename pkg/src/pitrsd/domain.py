"""Domain types for annotated surgical videos.

Time is kept in integer seconds (1 Hz frames). A frame at ``t_s`` covers the
interval ``[t_s, t_s + 1)``, so once it has been observed the elapsed time is
``t_s + 1`` and the ground-truth remaining duration is ``T - (t_s + 1)``.
Minutes only show up at reporting boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Step:
    step_id: int
    name: str
    is_core: bool = True
    is_repeatable: bool = False


@dataclass(frozen=True)
class StepCatalog:
    steps: tuple[Step, ...]
    canonical_order: tuple[int, ...]

    def __post_init__(self):
        ids = [s.step_id for s in self.steps]
        if ids != list(range(len(ids))):
            raise ValueError(f"step ids must be contiguous from 0, got {ids}")
        if sorted(self.canonical_order) != ids:
            raise ValueError("canonical_order must be a permutation of the step ids")

    @classmethod
    def from_steps(cls, steps: Iterable[Step], canonical_order: Optional[Sequence[int]] = None):
        steps = tuple(steps)
        if canonical_order is None:
            canonical_order = tuple(s.step_id for s in steps)
        return cls(steps, tuple(int(i) for i in canonical_order))

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    def __contains__(self, step_id) -> bool:
        return 0 <= int(step_id) < len(self.steps)

    def core_ids(self) -> list[int]:
        return [s.step_id for s in self.steps if s.is_core]

    def repeatable_ids(self) -> list[int]:
        return [s.step_id for s in self.steps if s.is_repeatable]

    def position(self, step_id: int) -> int:
        return self.canonical_order.index(step_id)


@dataclass(frozen=True)
class FrameRecord:
    t_s: int
    step_id: int
    instrument_ids: Optional[frozenset] = None
    feature: Optional[np.ndarray] = None


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AnnotatedVideo:
    """One surgery, stored column-wise.

    ``frames`` gives the per-frame view; the columns (``t_s``, ``step_ids``,
    ``instruments``, ``features``) are what predictors actually consume.
    Construction does not enforce invariants -- see :func:`validate_video`.
    """

    video_id: str
    duration_s: int
    t_s: np.ndarray
    step_ids: np.ndarray
    instruments: Optional[tuple[frozenset, ...]] = None
    features: Optional[np.ndarray] = None
    tags: frozenset = field(default_factory=frozenset)
    # per-frame feature lengths, only set when frames disagree (-1 = missing)
    ragged_feature_dims: Optional[tuple[int, ...]] = field(default=None, repr=False)

    def __post_init__(self):
        t_s = np.asarray(self.t_s, dtype=np.int64)
        steps = np.asarray(self.step_ids, dtype=np.int64)
        if t_s.shape != steps.shape or t_s.ndim != 1:
            raise ValueError("t_s and step_ids must be 1-d and of equal length")
        object.__setattr__(self, "t_s", _readonly(t_s))
        object.__setattr__(self, "step_ids", _readonly(steps))
        if self.instruments is not None:
            inst = tuple(frozenset(int(i) for i in s) for s in self.instruments)
            if len(inst) != len(steps):
                raise ValueError("instrument column length differs from frame count")
            object.__setattr__(self, "instruments", inst)
        if self.features is not None:
            feats = np.array(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != len(steps):
                raise ValueError("features must be an (n_frames, D) array")
            object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "tags", frozenset(self.tags))

    @classmethod
    def from_frames(cls, video_id: str, frames: Sequence[FrameRecord], duration_s: Optional[int] = None,
                    tags: Iterable[str] = ()) -> "AnnotatedVideo":
        frames = list(frames)
        inst = None
        if any(f.instrument_ids is not None for f in frames):
            inst = tuple(f.instrument_ids or frozenset() for f in frames)
        feats, ragged = None, None
        if any(f.feature is not None for f in frames):
            dims = tuple(-1 if f.feature is None else len(f.feature) for f in frames)
            if len(set(dims)) == 1:
                feats = np.stack([np.asarray(f.feature, dtype=np.float64) for f in frames])
            else:
                ragged = dims
        return cls(video_id, len(frames) if duration_s is None else duration_s,
                   [f.t_s for f in frames], [f.step_id for f in frames], inst, feats, frozenset(tags),
                   ragged_feature_dims=ragged)

    def __len__(self) -> int:
        return len(self.step_ids)

    @property
    def n_frames(self) -> int:
        return len(self.step_ids)

    @property
    def feature_dim(self) -> Optional[int]:
        return None if self.features is None else self.features.shape[1]

    @property
    def has_instruments(self) -> bool:
        return self.instruments is not None

    @property
    def frames(self) -> Sequence[FrameRecord]:
        return _FrameView(self)

    def frame(self, i: int) -> FrameRecord:
        return FrameRecord(
            int(self.t_s[i]),
            int(self.step_ids[i]),
            None if self.instruments is None else self.instruments[i],
            None if self.features is None else self.features[i],
        )

    def gt_rsd_s(self) -> np.ndarray:
        """Ground-truth remaining seconds after each frame has been observed."""
        return self.duration_s - (self.t_s + 1)

    def with_features(self, features: np.ndarray) -> "AnnotatedVideo":
        return AnnotatedVideo(self.video_id, self.duration_s, self.t_s, self.step_ids, self.instruments,
                              features, self.tags)

    def without_features(self) -> "AnnotatedVideo":
        return AnnotatedVideo(self.video_id, self.duration_s, self.t_s, self.step_ids, self.instruments, None,
                              self.tags)


class _FrameView(Sequence):
    def __init__(self, video: AnnotatedVideo):
        self._v = video

    def __len__(self):
        return self._v.n_frames

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._v.frame(j) for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self._v.frame(i)

    def __iter__(self) -> Iterator[FrameRecord]:
        for i in range(len(self)):
            yield self._v.frame(i)


@dataclass(frozen=True)
class Dataset:
    catalog: StepCatalog
    videos: tuple[AnnotatedVideo, ...]

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ValueError("video ids must be unique within a dataset")

    def __len__(self) -> int:
        return len(self.videos)

    def __iter__(self) -> Iterator[AnnotatedVideo]:
        return iter(self.videos)

    def __getitem__(self, i):
        return self.videos[i]

    @property
    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]

    @property
    def has_features(self) -> bool:
        return bool(self.videos) and all(v.features is not None for v in self.videos)

    @property
    def has_instruments(self) -> bool:
        return bool(self.videos) and all(v.has_instruments for v in self.videos)

    def num_instruments(self) -> int:
        top = -1
        for v in self.videos:
            for s in v.instruments or ():
                if s:
                    top = max(top, max(s))
        return top + 1


@dataclass(frozen=True)
class ElapsedState:
    """What is known once ``t_el_s`` frames have been observed."""

    t_el_s: int
    elapsed_steps: tuple[int, ...]
    current_step_elapsed_s: int
    elapsed_instruments: Optional[tuple[frozenset, ...]] = None

    def __post_init__(self):
        if self.t_el_s != len(self.elapsed_steps):
            raise ValueError("t_el_s must equal the number of elapsed step labels")
        if not 0 <= self.current_step_elapsed_s <= self.t_el_s:
            raise ValueError("current_step_elapsed_s out of range")

    @classmethod
    def from_labels(cls, steps: Sequence[int], instruments: Optional[Sequence[frozenset]] = None):
        steps = tuple(int(s) for s in steps)
        run = 0
        if steps:
            last = steps[-1]
            for s in reversed(steps):
                if s != last:
                    break
                run += 1
        inst = None if instruments is None else tuple(frozenset(i) for i in instruments)
        return cls(len(steps), steps, run, inst)

    @classmethod
    def from_video(cls, video: AnnotatedVideo, n_observed: int) -> "ElapsedState":
        inst = None if video.instruments is None else video.instruments[:n_observed]
        return cls.from_labels(video.step_ids[:n_observed].tolist(), inst)

    @property
    def current_step(self) -> Optional[int]:
        return self.elapsed_steps[-1] if self.elapsed_steps else None


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_train + self.n_val + self.n_test


PIT88_SPLIT = SplitSpec(70, 8, 10)


@dataclass(frozen=True)
class ValidationReport:
    video_id: str
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.violations)


def validate_video(v: AnnotatedVideo, catalog: StepCatalog) -> ValidationReport:
    problems = []
    t = np.asarray(v.t_s)
    if len(t) and (t[0] != 0 or np.any(np.diff(t) != 1)):
        problems.append("non-consecutive timestamps")
    if len(t) and np.any(t < 0):
        problems.append("negative timestamp")
    if v.duration_s != v.n_frames:
        problems.append(f"duration_s {v.duration_s} != frame count {v.n_frames}")
    unknown = sorted({int(s) for s in v.step_ids if not 0 <= s < catalog.num_steps})
    if unknown:
        problems.append(f"unknown step {unknown}")
    if v.ragged_feature_dims is not None:
        problems.append("feature-dimension mismatch")
    return ValidationReport(v.video_id, tuple(problems))


def split_dataset(d: Dataset, s: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint partition into (train, val, test); dataset order is kept within each part."""
    if s.total != len(d):
        raise ValueError(f"split counts {s.n_train}/{s.n_val}/{s.n_test} sum to {s.total}, "
                         f"dataset has {len(d)} videos")
    perm = np.random.default_rng(s.seed).permutation(len(d))
    cuts = np.cumsum([s.n_train, s.n_val])
    parts = np.split(perm, cuts)
    return tuple(Dataset(d.catalog, [d.videos[i] for i in sorted(p)]) for p in parts)


def compute_progress(t_el_s: float, T_s: float) -> float:
    if T_s <= 0:
        raise ValueError("total duration must be positive")
    if t_el_s < 0 or t_el_s > T_s:
        raise ValueError(f"elapsed {t_el_s} outside [0, {T_s}]")
    return t_el_s / T_s


def ground_truth_rsd(T_s: int, t_el_s: int) -> int:
    return T_s - t_el_s


def merge_out_of_patient(v: AnnotatedVideo, oop_step_id: int) -> AnnotatedVideo:
    """Relabel de-identified frames as the preceding step (leading ones take the next real step)."""
    steps = v.step_ids.copy()
    mask = steps == oop_step_id
    if not mask.any() or mask.all():
        return v
    idx = np.where(~mask, np.arange(len(steps)), -1)
    np.maximum.accumulate(idx, out=idx)
    first_real = int(np.argmax(~mask))
    idx[idx < 0] = first_real
    return AnnotatedVideo(v.video_id, v.duration_s, v.t_s, steps[idx], v.instruments, v.features, v.tags)
