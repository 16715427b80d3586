"""Causal inference with a trained temporal model, streaming or over a whole video.

With ``frame_stride`` > 1 the network only runs on every stride-th second. In
between, the last step is held and the RSD counts down with wall-clock time.
Both entry points share :class:`_Stepper`, so their trajectories agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from ..domain import AnnotatedVideo, FrameRecord
from ..evaluation import PredictionTrack
from ..predictors import FramePrediction, Predictor, Session
from .model import TemporalModel, assemble_context_input, forward_frame, forward_sequence, initial_state
from .targets import denormalize_rsd, frame_indices, video_inputs


@dataclass(frozen=True, eq=False)
class StreamOutput:
    t_s: int
    step_id: int
    step_probs: np.ndarray
    rsd_minutes: float
    model_ran: bool = True


def _hold(prev: StreamOutput, t_s: int) -> StreamOutput:
    rsd = max(0.0, prev.rsd_minutes - (t_s - prev.t_s) / 60.0)
    return StreamOutput(t_s, prev.step_id, prev.step_probs, rsd, False)


class _Stepper:
    """Per-video streaming state: recurrent state plus the last model output."""

    def __init__(self, m: TemporalModel):
        self.m = m
        self.state = initial_state(m.cfg)
        self.anchor: Optional[StreamOutput] = None
        self.last_t: Optional[int] = None

    def push(self, t_s: int, feature) -> StreamOutput:
        if self.last_t is not None and t_s <= self.last_t:
            raise ValueError(f"frame t_s={t_s} arrived after t_s={self.last_t}")
        self.last_t = t_s
        cfg = self.m.cfg
        if self.anchor is not None and t_s % cfg.frame_stride != 0:
            return _hold(self.anchor, t_s)
        if feature is None:
            raise ValueError(f"frame t_s={t_s} has no feature vector")
        elapsed = (t_s + 1) / 60.0
        x = assemble_context_input(np.asarray(feature, dtype=float), self.state, cfg, elapsed)
        probs, rsd_norm, self.state = forward_frame(self.m, self.state, x, elapsed)
        self.anchor = StreamOutput(t_s, int(np.argmax(probs)), probs, denormalize_rsd(rsd_norm, cfg.rsd_norm_factor))
        return self.anchor


def predict_stream(m: TemporalModel, frames: Iterable) -> Iterator[StreamOutput]:
    """Yield one output per frame before reading the next.

    ``frames`` yields :class:`FrameRecord` objects or ``(t_s, feature)`` pairs.
    """
    stepper = _Stepper(m)
    for f in frames:
        t_s, feature = (f.t_s, f.feature) if isinstance(f, FrameRecord) else f
        yield stepper.push(int(t_s), feature)


def predict_sequence(m: TemporalModel, video: AnnotatedVideo) -> list[StreamOutput]:
    """Whole-video run through :func:`forward_sequence`; matches :func:`predict_stream` bit for bit."""
    cfg = m.cfg
    idx = frame_indices(video, cfg.frame_stride)
    inp = video_inputs(video, cfg.frame_stride)
    out = forward_sequence(m, inp.features, inp.elapsed_min)
    result: list[StreamOutput] = []
    run = set(idx.tolist())
    j = 0
    for i, t in enumerate(video.t_s.tolist()):
        if i in run:
            p = out.probs[j]
            result.append(StreamOutput(t, int(np.argmax(p)), p, denormalize_rsd(out.rsd_norm[j], cfg.rsd_norm_factor)))
            j += 1
        else:
            anchor = next(r for r in reversed(result) if r.model_ran)
            result.append(_hold(anchor, t))
    return result


class TemporalPredictor(Predictor):
    requires_features = True
    predicts_steps = True

    def __init__(self, model: TemporalModel, name: Optional[str] = None):
        self.model = model
        self.name = name or f"temporal_{model.cfg.mode}"

    def check_video(self, v: AnnotatedVideo) -> None:
        super().check_video(v)
        if v.feature_dim != self.model.cfg.feature_dim:
            raise ValueError(f"video {v.video_id} has feature dim {v.feature_dim}, model expects "
                             f"{self.model.cfg.feature_dim}")

    def session(self) -> Session:
        return _TemporalSession(self.model)

    def predict_video(self, v: AnnotatedVideo) -> PredictionTrack:
        self.check_video(v)
        outs = predict_sequence(self.model, v)
        return PredictionTrack(v.video_id, np.array([o.rsd_minutes for o in outs]), v.gt_rsd_s() / 60.0,
                               np.array([o.step_id for o in outs], dtype=np.int64), v.step_ids, v.t_s)


class _TemporalSession(Session):
    def __init__(self, m: TemporalModel):
        self.stepper = _Stepper(m)

    def update(self, frame: FrameRecord) -> FramePrediction:
        o = self.stepper.push(frame.t_s, frame.feature)
        return FramePrediction(frame.t_s, o.rsd_minutes * 60.0, o.step_id)
