"""Causal per-frame predictors behind one interface.

A predictor opens a fresh session per video; the session consumes frames in
time order and returns one :class:`FramePrediction` per frame before the next
frame is seen.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .domain import AnnotatedVideo, Dataset, FrameRecord, StepCatalog
from .evaluation import PredictionTrack
from .stats import (HistoryIndex, ReferenceStats, SequenceMatcher, build_history_index,
                    fit_reference_stats)


@dataclass(frozen=True)
class FramePrediction:
    t_s: int
    rsd_s: float
    step_id: Optional[int] = None

    @property
    def rsd_minutes(self) -> float:
        return self.rsd_s / 60.0


class Session(ABC):
    @abstractmethod
    def update(self, frame: FrameRecord) -> FramePrediction: ...


class Predictor(ABC):
    name: str = "predictor"
    requires_instruments = False
    requires_features = False
    predicts_steps = False

    @abstractmethod
    def session(self) -> Session: ...

    def check_video(self, v: AnnotatedVideo) -> None:
        if self.requires_instruments and v.instruments is None:
            raise ValueError(f"{self.name} needs instrument labels; video {v.video_id} has none")
        if self.requires_features and v.features is None:
            raise ValueError(f"{self.name} needs feature vectors; video {v.video_id} has none")

    def stream(self, frames: Iterable[FrameRecord]) -> Iterator[FramePrediction]:
        sess = self.session()
        last = None
        for f in frames:
            if last is not None and f.t_s <= last:
                raise ValueError(f"frame t_s={f.t_s} arrived after t_s={last}")
            last = f.t_s
            yield sess.update(f)

    def predict_video(self, v: AnnotatedVideo) -> PredictionTrack:
        self.check_video(v)
        preds = list(self.stream(v.frames))
        steps = None
        if self.predicts_steps:
            steps = np.array([p.step_id for p in preds], dtype=np.int64)
        return PredictionTrack(
            v.video_id,
            np.array([p.rsd_s for p in preds]) / 60.0,
            v.gt_rsd_s() / 60.0,
            steps,
            v.step_ids,
            v.t_s,
        )

    def predict_dataset(self, d: Dataset) -> list[PredictionTrack]:
        return [self.predict_video(v) for v in d]


class NaivePredictor(Predictor):
    name = "naive"

    def __init__(self, stats: ReferenceStats):
        self.stats = stats

    @classmethod
    def fit(cls, train: Dataset) -> "NaivePredictor":
        return cls(fit_reference_stats(train))

    def session(self) -> Session:
        return _NaiveSession(self.stats.mean_full_duration_s)


class _NaiveSession(Session):
    def __init__(self, t_ref: float):
        self.t_ref = t_ref

    def update(self, frame):
        return FramePrediction(frame.t_s, max(0.0, self.t_ref - (frame.t_s + 1)))


class StepInferredPredictor(Predictor):
    name = "step_inferred"

    def __init__(self, stats: ReferenceStats, catalog: StepCatalog):
        self.stats, self.catalog = stats, catalog
        refs = stats.step_reference_durations_s
        order = catalog.canonical_order
        # reference time of everything after each step in canonical order
        self._after = {s: sum(refs.get(i, 0.0) for i in order[pos + 1:]) for pos, s in enumerate(order)}

    @classmethod
    def fit(cls, train: Dataset) -> "StepInferredPredictor":
        return cls(fit_reference_stats(train), train.catalog)

    def session(self) -> Session:
        return _StepInferredSession(self)


class _StepInferredSession(Session):
    def __init__(self, p: StepInferredPredictor):
        self.p = p
        self.current: Optional[int] = None
        self.run = 0

    def update(self, frame):
        if frame.step_id == self.current:
            self.run += 1
        else:
            self.current, self.run = frame.step_id, 1
        stats = self.p.stats
        ref = stats.step_reference_durations_s.get(frame.step_id, stats.global_mean_step_duration_s)
        after = self.p._after.get(frame.step_id, 0.0)
        return FramePrediction(frame.t_s, max(0.0, ref - self.run) + after)


class SequenceMatchPredictor(Predictor):
    def __init__(self, index: HistoryIndex, k: int = 3, use_instruments: bool = False):
        if use_instruments and not index.has_instruments:
            raise ValueError("instrument matching needs an index built from instrument-labelled videos")
        self.index, self.k, self.use_instruments = index, k, use_instruments
        self.requires_instruments = use_instruments
        self.name = "seqmatch_si" if use_instruments else "seqmatch_s"

    @classmethod
    def fit(cls, train: Dataset, k: int = 3, use_instruments: bool = False) -> "SequenceMatchPredictor":
        return cls(build_history_index(train), k, use_instruments)

    def session(self) -> Session:
        return _SequenceSession(SequenceMatcher(self.index, self.k, self.use_instruments))


class _SequenceSession(Session):
    def __init__(self, matcher: SequenceMatcher):
        self.m = matcher

    def update(self, frame):
        return FramePrediction(frame.t_s, self.m.update(frame.step_id, frame.instrument_ids))


STAT_METHODS = ("naive", "step_inferred", "seqmatch_s", "seqmatch_si")


def fit_stat_predictor(method: str, train: Dataset, k: int = 3) -> Predictor:
    if method == "naive":
        return NaivePredictor.fit(train)
    if method == "step_inferred":
        return StepInferredPredictor.fit(train)
    if method in ("seqmatch_s", "seqmatch"):
        return SequenceMatchPredictor.fit(train, k)
    if method == "seqmatch_si":
        if not train.has_instruments:
            raise ValueError("seqmatch_si needs instrument-labelled training videos")
        return SequenceMatchPredictor.fit(train, k, use_instruments=True)
    raise ValueError(f"unknown statistical method {method!r}; choose from {STAT_METHODS}")
