from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..domain import AnnotatedVideo


def normalize_rsd(rsd_minutes, factor: float = 10.0):
    if factor <= 0:
        raise ValueError("normalisation factor must be positive")
    return np.asarray(rsd_minutes, dtype=float) / factor if np.ndim(rsd_minutes) else rsd_minutes / factor


def denormalize_rsd(rsd_norm, factor: float = 10.0):
    """Back to minutes, clamped at zero.

    ``y * factor`` can land one ulp away from a value whose quotient is ``y``;
    the neighbours are checked so that normalising the result gives ``y`` back.
    """
    if factor <= 0:
        raise ValueError("normalisation factor must be positive")
    y = np.asarray(rsd_norm, dtype=float)
    x = y * factor
    for direction in (np.inf, -np.inf):
        alt = np.nextafter(x, direction)
        x = np.where((x / factor != y) & (alt / factor == y), alt, x)
    x = np.maximum(0.0, x)
    return x if np.ndim(rsd_norm) else float(x)


@dataclass(frozen=True, eq=False)
class SequenceTargets:
    steps: np.ndarray  # (n,) int
    rsd_norm: np.ndarray  # (n,) ground-truth RSD in minutes / factor
    progress: np.ndarray  # (n,) elapsed / total
    instruments: Optional[np.ndarray] = None  # (n, M) multi-hot

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True, eq=False)
class SequenceInputs:
    features: np.ndarray  # (n, D)
    elapsed_min: np.ndarray  # (n,) elapsed minutes after each frame
    t_s: np.ndarray

    def __len__(self) -> int:
        return len(self.t_s)


def frame_indices(video: AnnotatedVideo, stride: int = 1) -> np.ndarray:
    """Frames the model runs on: multiples of ``stride`` plus the first frame."""
    if stride <= 1 or video.n_frames == 0:
        return np.arange(video.n_frames)
    keep = video.t_s % stride == 0
    keep[0] = True
    return np.flatnonzero(keep)


def video_inputs(video: AnnotatedVideo, stride: int = 1) -> SequenceInputs:
    if video.features is None:
        raise ValueError(f"video {video.video_id} has no feature vectors")
    idx = frame_indices(video, stride)
    t = video.t_s[idx]
    return SequenceInputs(video.features[idx], (t + 1) / 60.0, t)


def video_targets(video: AnnotatedVideo, factor: float, stride: int = 1,
                  num_instruments: int = 0) -> SequenceTargets:
    idx = frame_indices(video, stride)
    t = video.t_s[idx]
    rsd_min = (video.duration_s - (t + 1)) / 60.0
    inst = None
    if num_instruments:
        if video.instruments is None:
            raise ValueError(f"video {video.video_id} has no instrument labels")
        inst = np.zeros((len(idx), num_instruments))
        for row, i in enumerate(idx):
            for k in video.instruments[i]:
                if k < num_instruments:
                    inst[row, k] = 1.0
    return SequenceTargets(video.step_ids[idx].copy(), rsd_min / factor, (t + 1) / video.duration_s, inst)
