"""Evaluation protocol: windowed MAE per video, mean/std over videos, step
macro-F1, paired Wilcoxon signed-rank tests and clinical benchmark flags."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

WINDOWS = ("last10", "last20", "full")
WINDOW_LIMITS_MIN = {"last10": 10.0, "last20": 20.0, "full": math.inf}
EXACT_MAX_N = 12

PAIRING_NOTE = ("Wilcoxon pairs one MAE per video per method, so each surgery counts once "
                "regardless of its length.")


@dataclass(frozen=True, eq=False)
class PredictionTrack:
    video_id: str
    pred_rsd_min: np.ndarray
    gt_rsd_min: np.ndarray
    pred_steps: Optional[np.ndarray] = None
    true_steps: Optional[np.ndarray] = None
    t_s: Optional[np.ndarray] = None

    def __post_init__(self):
        pred = np.asarray(self.pred_rsd_min, dtype=float)
        gt = np.asarray(self.gt_rsd_min, dtype=float)
        if pred.shape != gt.shape or pred.ndim != 1:
            raise ValueError("prediction and ground truth must be equal-length 1-d arrays")
        if np.any(pred < 0):
            raise ValueError("RSD predictions must be non-negative")
        object.__setattr__(self, "pred_rsd_min", pred)
        object.__setattr__(self, "gt_rsd_min", gt)
        for name in ("pred_steps", "true_steps", "t_s"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=np.int64)
                if val.shape != pred.shape:
                    raise ValueError(f"{name} length differs from the RSD track")
                object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.pred_rsd_min)


def mae_windows(track: PredictionTrack) -> tuple[float, float, float]:
    """MAE (minutes) over frames whose true RSD is <= 10 min, <= 20 min, and over all frames."""
    if len(track) == 0:
        raise ValueError("empty track")
    err = np.abs(track.pred_rsd_min - track.gt_rsd_min)
    out = []
    for w in WINDOWS:
        mask = track.gt_rsd_min <= WINDOW_LIMITS_MIN[w]
        out.append(float(err[mask].mean()) if mask.any() else float(err.mean()))
    return tuple(out)


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Unweighted mean and population standard deviation over videos."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("aggregate needs at least one value")
    mean = math.fsum(v) / v.size
    return mean, math.sqrt(math.fsum((v - mean) ** 2) / v.size)


def macro_f1(pred_steps: Sequence[int], true_steps: Sequence[int], K: Optional[int] = None) -> float:
    """Mean per-class F1 over classes present in either the predictions or the truth."""
    p = np.asarray(pred_steps)
    t = np.asarray(true_steps)
    if p.shape != t.shape:
        raise ValueError("predictions and truth differ in length")
    classes = np.union1d(p, t)
    if K is not None:
        classes = classes[(classes >= 0) & (classes < K)]
    if classes.size == 0:
        return 1.0
    scores = []
    for c in classes:
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences
    p_value: float
    n: int  # non-zero differences
    method: str  # "exact", "normal" or "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"


def _exact_upper_lower(doubled_ranks: np.ndarray, w2: int) -> tuple[float, float]:
    """P(W >= w) and P(W <= w) under the sign-flip null, by counting subset sums."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks.tolist():
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    denom = 2 ** len(doubled_ranks)
    upper = sum(counts[w2:]) / denom
    lower = sum(counts[:w2 + 1]) / denom
    return float(upper), float(lower)


def wilcoxon_signed_rank(a: Sequence[float], b: Optional[Sequence[float]] = None) -> WilcoxonResult:
    """Two-sided paired signed-rank test on ``a - b`` (or on ``a`` taken as differences).

    Zero differences are dropped and ties get average ranks. Up to 12 pairs the
    p-value is exact; beyond that a normal approximation with tie and
    continuity corrections is used.
    """
    d = np.asarray(a, dtype=float)
    if b is not None:
        d = d - np.asarray(b, dtype=float)
    if d.size == 0:
        raise ValueError("need at least one pair")
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        upper, lower = _exact_upper_lower(doubled, int(round(2 * w_plus)))
        return WilcoxonResult(w_plus, min(1.0, 2 * min(upper, lower)), n, "exact")
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48
    z = max(0.0, abs(w_plus - mean) - 0.5) / math.sqrt(var) if var > 0 else 0.0
    return WilcoxonResult(w_plus, min(1.0, math.erfc(z / math.sqrt(2))), n, "normal")


def clinical_benchmark(summary) -> dict[str, bool]:
    """Strict thresholds on aggregate MAE: last10 < 5, last20 < 5, full < 10 minutes.

    ``summary`` is a ``(last10, last20, full)`` triple or a mapping keyed by window
    whose values are means or ``(mean, std)`` pairs.
    """
    if isinstance(summary, Mapping):
        vals = [summary[w] for w in WINDOWS]
        vals = [v[0] if isinstance(v, (tuple, list)) else v for v in vals]
    else:
        vals = list(summary)
    l10, l20, full = (float(v) for v in vals)
    return {"last10": l10 < 5.0, "last20": l20 < 5.0, "full": full < 10.0}


@dataclass(frozen=True)
class PairwiseResult:
    window: str
    best: str
    runner_up: str
    statistic: float
    p_value: float
    significant: bool


@dataclass
class EvalReport:
    methods: list[str]
    video_ids: list[str]
    per_video: dict[str, dict[str, np.ndarray]]
    summary: dict[str, dict[str, tuple[float, float]]]
    step_f1: dict[str, Optional[tuple[float, float]]]
    best: dict[str, str]
    comparisons: list[PairwiseResult]
    benchmark: dict[str, dict[str, bool]]
    alpha: float = 0.05
    metadata: dict = field(default_factory=lambda: {"wilcoxon_pairing": PAIRING_NOTE})

    def comparison(self, window: str) -> Optional[PairwiseResult]:
        return next((c for c in self.comparisons if c.window == window), None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "window", "mae_mean_min", "mae_std_min", "best", "significant_vs_next",
                     "p_vs_next", "step_f1_mean", "step_f1_std", "clinical_pass"])
        for m in self.methods:
            f1 = self.step_f1.get(m)
            for win in WINDOWS:
                mean, std = self.summary[m][win]
                cmp = self.comparison(win)
                is_best = self.best.get(win) == m
                p = cmp.p_value if (cmp and is_best) else ""
                sig = int(bool(cmp and is_best and cmp.significant))
                w.writerow([m, win, f"{mean:.6f}", f"{std:.6f}", int(is_best), sig,
                            "" if p == "" else f"{p:.6g}",
                            "" if f1 is None else f"{f1[0]:.6f}", "" if f1 is None else f"{f1[1]:.6f}",
                            int(self.benchmark[m][win])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "n_videos": len(self.video_ids),
            "video_ids": self.video_ids,
            "summary": {m: {w: list(v) for w, v in s.items()} for m, s in self.summary.items()},
            "per_video": {m: {w: a.tolist() for w, a in s.items()} for m, s in self.per_video.items()},
            "step_f1": {m: (None if v is None else list(v)) for m, v in self.step_f1.items()},
            "best": self.best,
            "comparisons": [c.__dict__ for c in self.comparisons],
            "clinical_benchmark": self.benchmark,
            "alpha": self.alpha,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Plain-text comparison table; ``*`` marks the best mean, ``+`` significance over the next best."""
        head = f"{'method':<24}" + "".join(f"{w:>20}" for w in WINDOWS) + f"{'step F1':>18}"
        lines = [head, "-" * len(head)]
        for m in self.methods:
            cells = []
            for win in WINDOWS:
                mean, std = self.summary[m][win]
                mark = ""
                if self.best.get(win) == m:
                    cmp = self.comparison(win)
                    mark = "*+" if cmp and cmp.significant else "*"
                cells.append(f"{mean:.2f}±{std:.2f}{mark}".rjust(20))
            f1 = self.step_f1.get(m)
            cells.append(("N/A" if f1 is None else f"{f1[0]:.4f}±{f1[1]:.2f}").rjust(18))
            lines.append(f"{m:<24}" + "".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        (out / f"{stem}_table.txt").write_text(self.table(), encoding="utf-8")


def compare_methods(tracks: Mapping[str, Sequence[PredictionTrack]], alpha: float = 0.05) -> EvalReport:
    """Evaluate every method on the same videos; test best against runner-up per window."""
    methods = list(tracks)
    if not methods:
        raise ValueError("no methods to compare")
    ids = [t.video_id for t in tracks[methods[0]]]
    for m in methods[1:]:
        other = [t.video_id for t in tracks[m]]
        if sorted(other) != sorted(ids):
            raise ValueError(f"method {m!r} was evaluated on a different video set")
    per_video: dict[str, dict[str, np.ndarray]] = {}
    summary: dict[str, dict[str, tuple[float, float]]] = {}
    step_f1: dict[str, Optional[tuple[float, float]]] = {}
    for m in methods:
        by_id = {t.video_id: t for t in tracks[m]}
        rows = np.array([mae_windows(by_id[v]) for v in ids]).reshape(len(ids), 3)
        per_video[m] = {w: rows[:, i] for i, w in enumerate(WINDOWS)}
        summary[m] = {w: aggregate(rows[:, i]) for i, w in enumerate(WINDOWS)}
        if all(by_id[v].pred_steps is not None and by_id[v].true_steps is not None for v in ids):
            step_f1[m] = aggregate([macro_f1(by_id[v].pred_steps, by_id[v].true_steps) for v in ids])
        else:
            step_f1[m] = None
    best: dict[str, str] = {}
    comparisons = []
    for w in WINDOWS:
        ranked = sorted(methods, key=lambda m: (summary[m][w][0], methods.index(m)))
        best[w] = ranked[0]
        if len(ranked) > 1:
            res = wilcoxon_signed_rank(per_video[ranked[0]][w], per_video[ranked[1]][w])
            comparisons.append(PairwiseResult(w, ranked[0], ranked[1], res.statistic, res.p_value,
                                              (not res.degenerate) and res.p_value < alpha))
    bench = {m: clinical_benchmark({w: summary[m][w] for w in WINDOWS}) for m in methods}
    return EvalReport(methods, ids, per_video, summary, step_f1, best, comparisons, bench, alpha)


def write_trajectory_csv(track: PredictionTrack, path, every_s: Optional[int] = None) -> int:
    """Per-frame (or every ``every_s`` seconds plus the first frame) RSD trajectory; returns the row count."""
    t = track.t_s if track.t_s is not None else np.arange(len(track))
    rows = np.arange(len(track))
    if every_s:
        keep = ((t + 1) % every_s == 0) | (rows == 0)
        rows = rows[keep]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "t_el_min", "gt_rsd_min", "pred_rsd_min", "pred_step", "true_step"])
        for i in rows:
            w.writerow([int(t[i]), f"{(t[i] + 1) / 60:.4f}", f"{track.gt_rsd_min[i]:.4f}",
                        f"{track.pred_rsd_min[i]:.4f}",
                        "" if track.pred_steps is None else int(track.pred_steps[i]),
                        "" if track.true_steps is None else int(track.true_steps[i])])
    return len(rows)


def read_trajectory_csv(path, video_id: Optional[str] = None) -> PredictionTrack:
    """Inverse of :func:`write_trajectory_csv` for full-rate files."""
    p = Path(path)
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{p} has no rows")

    def steps(col):
        vals = [r[col] for r in rows]
        return None if any(v == "" for v in vals) else np.array([int(v) for v in vals], dtype=np.int64)

    return PredictionTrack(
        video_id or p.stem,
        np.array([float(r["pred_rsd_min"]) for r in rows]),
        np.array([float(r["gt_rsd_min"]) for r in rows]),
        steps("pred_step"),
        steps("true_step"),
        np.array([int(r["t_s"]) for r in rows], dtype=np.int64),
    )
