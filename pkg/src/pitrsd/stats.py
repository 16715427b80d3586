"""Statistical RSD estimators: naive mean duration, step-inferred, and
k-nearest-neighbour sequence matching over run-length-compressed workflows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

from .domain import AnnotatedVideo, Dataset, ElapsedState, StepCatalog

Run = tuple[Hashable, int]


@dataclass(frozen=True)
class ReferenceStats:
    mean_full_duration_s: float
    step_reference_durations_s: Mapping[int, float]
    global_mean_step_duration_s: float


def fit_reference_stats(train: Dataset) -> ReferenceStats:
    """T_ref is the mean full duration; each step's reference is the mean
    per-video total time in that step, over the videos that contain it."""
    if len(train) == 0:
        raise ValueError("cannot fit reference statistics on an empty training set")
    totals: dict[int, list[int]] = {}
    for v in train:
        ids, counts = np.unique(v.step_ids, return_counts=True)
        for s, c in zip(ids.tolist(), counts.tolist()):
            totals.setdefault(s, []).append(c)
    refs = {s: float(np.mean(c)) for s, c in sorted(totals.items())}
    t_ref = float(np.mean([v.duration_s for v in train]))
    fallback = float(np.mean(list(refs.values()))) if refs else 0.0
    return ReferenceStats(t_ref, refs, fallback)


def naive_rsd(state: ElapsedState, stats: ReferenceStats) -> float:
    return max(0.0, stats.mean_full_duration_s - state.t_el_s)


def step_inferred_rsd(state: ElapsedState, stats: ReferenceStats, catalog: StepCatalog) -> float:
    s = state.current_step
    if s is None:
        return float(sum(stats.step_reference_durations_s.values()))
    refs = stats.step_reference_durations_s
    current = refs.get(s, stats.global_mean_step_duration_s)
    rest = catalog.canonical_order[catalog.position(s) + 1:]
    return max(0.0, current - state.current_step_elapsed_s) + sum(refs.get(i, 0.0) for i in rest)


# -- sequence compression and edit distance ----------------------------------

def rle_compress(labels: Sequence[Hashable]) -> list[Run]:
    runs: list[list] = []
    for x in labels:
        if runs and runs[-1][0] == x:
            runs[-1][1] += 1
        else:
            runs.append([x, 1])
    return [(x, n) for x, n in runs]


def rle_decompress(runs: Sequence[Run]) -> list:
    out: list = []
    for x, n in runs:
        out.extend([x] * n)
    return out


def rle_labels(labels: Sequence[Hashable]) -> list:
    return [x for x, _ in rle_compress(labels)]


def levenshtein(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Unit-cost edit distance, one DP row of length min(|a|, |b|) + 1."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _dp_next_row(prev: list[int], x: Hashable, b: Sequence[Hashable]) -> list[int]:
    cur = [prev[0] + 1] + [0] * len(b)
    for j, y in enumerate(b, 1):
        cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
    return cur


# -- history index -------------------------------------------------------------

@dataclass(frozen=True)
class HistoryEntry:
    video_id: str
    full_duration_s: float
    compressed_steps: tuple[Run, ...]
    compressed_instruments: Optional[tuple[Run, ...]] = None

    def prefix_runs(self, n_seconds: int, instruments: bool = False) -> int:
        """Number of runs touched by the first ``n_seconds`` seconds."""
        runs = self.compressed_instruments if instruments else self.compressed_steps
        starts = np.cumsum([0] + [n for _, n in runs[:-1]]) if runs else np.zeros(0)
        return int(np.searchsorted(starts, n_seconds, side="left"))

    def prefix_labels(self, n_seconds: int, instruments: bool = False) -> list:
        runs = self.compressed_instruments if instruments else self.compressed_steps
        return [x for x, _ in runs[:self.prefix_runs(n_seconds, instruments)]]


@dataclass(frozen=True)
class HistoryIndex:
    entries: tuple[HistoryEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def has_instruments(self) -> bool:
        return bool(self.entries) and all(e.compressed_instruments is not None for e in self.entries)


def build_history_index(train: Dataset) -> HistoryIndex:
    entries = []
    for v in train:
        inst = None if v.instruments is None else tuple(rle_compress(v.instruments))
        entries.append(HistoryEntry(v.video_id, float(v.duration_s),
                                    tuple(rle_compress(v.step_ids.tolist())), inst))
    return HistoryIndex(tuple(entries))


def sequence_similarity(elapsed: ElapsedState, entry: HistoryEntry, use_instruments: bool = False) -> float:
    """Negative edit distance between compressed elapsed and historical prefixes
    (with instruments: step similarity + instrument similarity)."""
    n = min(elapsed.t_el_s, int(entry.full_duration_s))
    sim = -levenshtein(rle_labels(elapsed.elapsed_steps), entry.prefix_labels(n))
    if use_instruments:
        if elapsed.elapsed_instruments is None or entry.compressed_instruments is None:
            raise ValueError("instrument matching needs instrument labels on both sides")
        sim -= levenshtein(rle_labels(elapsed.elapsed_instruments), entry.prefix_labels(n, instruments=True))
    return float(sim)


def rank_neighbours(similarities: np.ndarray, gaps: np.ndarray, video_ids: Sequence[str], k: int) -> np.ndarray:
    """Indices of the top-k entries: highest similarity, then smallest length gap, then video id."""
    id_rank = np.argsort(np.argsort(np.asarray(video_ids, dtype=object)))
    order = np.lexsort((id_rank, gaps, -np.asarray(similarities)))
    return order[:min(k, len(order))]


def sequence_match_rsd(state: ElapsedState, index: HistoryIndex, k: int = 3, use_instruments: bool = False) -> float:
    if len(index) == 0:
        raise ValueError("history index is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    sims = np.array([sequence_similarity(state, e, use_instruments) for e in index.entries])
    durs = np.array([e.full_duration_s for e in index.entries])
    gaps = np.maximum(0.0, state.t_el_s - durs)
    top = rank_neighbours(sims, gaps, [e.video_id for e in index.entries], k)
    return max(0.0, float(durs[top].mean()) - state.t_el_s)


class SequenceMatcher:
    """Incremental form of :func:`sequence_match_rsd` for one ongoing video.

    For each historical entry it keeps the edit-distance DP row of the
    compressed elapsed sequence against that entry's full compressed sequence;
    the distance to the entry's prefix is then a lookup in the row. A new row
    is computed only when the elapsed sequence starts a new run.
    """

    def __init__(self, index: HistoryIndex, k: int = 3, use_instruments: bool = False):
        if len(index) == 0:
            raise ValueError("history index is empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        if use_instruments and not index.has_instruments:
            raise ValueError("instrument matching needs an index built from instrument-labelled videos")
        self.index, self.k, self.use_instruments = index, k, use_instruments
        self._durs = np.array([e.full_duration_s for e in index.entries])
        self._id_rank = np.argsort(np.argsort(np.asarray([e.video_id for e in index.entries], dtype=object)))
        self._tracks = [_Track(index, instruments=False)]
        if use_instruments:
            self._tracks.append(_Track(index, instruments=True))
        self.t_el = 0

    def update(self, step_id: int, instruments: Optional[frozenset] = None) -> float:
        self.t_el += 1
        dist = self._tracks[0].push(step_id, self.t_el)
        if self.use_instruments:
            if instruments is None:
                raise ValueError("instrument matching needs per-frame instrument labels")
            dist = dist + self._tracks[1].push(frozenset(instruments), self.t_el)
        gaps = np.maximum(0.0, self.t_el - self._durs)
        order = np.lexsort((self._id_rank, gaps, dist))
        top = order[:min(self.k, len(order))]
        return max(0.0, float(self._durs[top].mean()) - self.t_el)


class _Track:
    def __init__(self, index: HistoryIndex, instruments: bool):
        runs = [e.compressed_instruments if instruments else e.compressed_steps for e in index.entries]
        self.labels = [[x for x, _ in r] for r in runs]
        width = max(len(r) for r in runs)
        self.starts = np.full((len(runs), width), np.inf)
        for i, r in enumerate(runs):
            self.starts[i, :len(r)] = np.cumsum([0] + [n for _, n in r[:-1]])
        self.durs = np.array([e.full_duration_s for e in index.entries])
        self.rows = [list(range(len(b) + 1)) for b in self.labels]
        self.table = np.zeros((len(runs), width + 1))
        self._fill()
        self.last = object()
        self._arange = np.arange(len(runs))

    def _fill(self):
        for i, r in enumerate(self.rows):
            self.table[i, :len(r)] = r

    def push(self, label, t_el: int) -> np.ndarray:
        if label != self.last:
            self.rows = [_dp_next_row(r, label, b) for r, b in zip(self.rows, self.labels)]
            self._fill()
            self.last = label
        n = np.minimum(t_el, self.durs)
        j = (self.starts < n[:, None]).sum(axis=1)
        return self.table[self._arange, j]
