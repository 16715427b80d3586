"""Training loop: per-video BPTT with Adam and a two-phase learning-rate schedule."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..domain import Dataset
from .losses import composite_loss
from .model import ModelConfig, TemporalModel, backward_sequence, forward_sequence, init_model
from .targets import video_inputs, video_targets

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "step_loss", "rsd_loss", "step_rsd_ratio", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs_phase1: int = 20
    epochs_phase2: int = 20
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: Optional[float] = None
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ValueError("learning rates must be positive")

    @property
    def total_epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def lr_at(self, epoch: int) -> float:
        """Rate for a 0-based epoch index."""
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        return self.lr_phase1 if epoch < self.epochs_phase1 else self.lr_phase2


class Adam:
    def __init__(self, params: dict, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    step_loss: float
    rsd_loss: float
    lr: float

    @property
    def step_rsd_ratio(self) -> float:
        return self.step_loss / self.rsd_loss if self.rsd_loss > 0 else float("nan")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, r: EpochRecord) -> None:
        self.records.append(r)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def train_losses(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.records])

    @property
    def val_losses(self) -> np.ndarray:
        return np.array([r.val_loss for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, f"{r.train_loss:.10g}", f"{r.val_loss:.10g}", f"{r.step_loss:.10g}",
                            f"{r.rsd_loss:.10g}", f"{r.step_rsd_ratio:.10g}", f"{r.lr:.10g}"])


def inverse_frequency_weights(train: Dataset, stride: int = 1) -> tuple[float, ...]:
    """Inverse step frequency on the training split, normalised to mean 1; unseen steps get the max."""
    K = train.catalog.num_steps
    counts = np.zeros(K)
    for v in train:
        t = v.step_ids if stride == 1 else v.step_ids[v.t_s % stride == 0]
        counts += np.bincount(t, minlength=K)[:K]
    seen = counts > 0
    if not seen.any():
        raise ValueError("training split has no frames")
    w = np.zeros(K)
    w[seen] = 1.0 / counts[seen]
    w[~seen] = w[seen].max()
    return tuple(float(x) for x in w / w.mean())


def _prepare(ds: Dataset, cfg: ModelConfig):
    if not ds.has_features:
        raise ValueError("training needs per-frame feature vectors on every video")
    if cfg.has_instrument_head and not ds.has_instruments:
        raise ValueError("step_instrument_rsd needs instrument labels on every video")
    items = []
    for v in ds:
        if v.feature_dim != cfg.feature_dim:
            raise ValueError(f"video {v.video_id} has feature dim {v.feature_dim}, model expects {cfg.feature_dim}")
        if v.n_frames and v.step_ids.max() >= cfg.num_steps:
            raise ValueError(f"video {v.video_id} has step ids beyond the model's {cfg.num_steps} classes")
        inp = video_inputs(v, cfg.frame_stride)
        if len(inp) == 0:
            continue
        tgt = video_targets(v, cfg.rsd_norm_factor, cfg.frame_stride,
                            cfg.num_instruments if cfg.has_instrument_head else 0)
        items.append((inp, tgt))
    if not items:
        raise ValueError("dataset has no usable frames")
    return items


def _context(cfg, tgt):
    return tgt.steps if cfg.teacher_forcing else None


def evaluate_loss(m: TemporalModel, items) -> tuple[float, float, float]:
    """Mean per-video (total, step, rsd) loss."""
    tot = st = rs = 0.0
    for inp, tgt in items:
        out = forward_sequence(m, inp.features, inp.elapsed_min, _context(m.cfg, tgt))
        bd, _ = composite_loss(out, tgt, m.cfg)
        tot += bd.total
        st += bd.step or 0.0
        rs += bd.rsd or 0.0
    n = len(items)
    return tot / n, st / n, rs / n


def _clip(grads: dict, max_norm: Optional[float]) -> None:
    if max_norm is None:
        return
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm


def train(cfg: ModelConfig, tcfg: TrainConfig, train_set: Dataset, val_set: Optional[Dataset] = None,
          model: Optional[TemporalModel] = None) -> tuple[TemporalModel, TrainHistory]:
    """Train from ``model`` (or a fresh seeded init). One Adam update per video.

    History row 0 evaluates the starting parameters; row e holds the running
    mean training loss during epoch e and the validation loss after it.
    """
    train_items = _prepare(train_set, cfg)
    val_items = _prepare(val_set, cfg) if val_set is not None and len(val_set) else None
    m = (model or init_model(cfg)).copy()
    if m.cfg != cfg:
        raise ValueError("starting model was built with a different configuration")
    opt = Adam(m.params, tcfg.betas, tcfg.adam_eps)
    rng = np.random.default_rng([tcfg.seed, 0x7A1])
    hist = TrainHistory()

    def record(epoch, train_loss, step_loss, rsd_loss, lr):
        vl = evaluate_loss(m, val_items)[0] if val_items else float("nan")
        hist.append(EpochRecord(epoch, train_loss, vl, step_loss, rsd_loss, lr))

    record(0, *evaluate_loss(m, train_items), tcfg.lr_phase1)
    for epoch in range(tcfg.total_epochs):
        lr = tcfg.lr_at(epoch)
        order = rng.permutation(len(train_items)) if tcfg.shuffle else np.arange(len(train_items))
        tot = st = rs = 0.0
        for j in order:
            inp, tgt = train_items[j]
            out = forward_sequence(m, inp.features, inp.elapsed_min, _context(cfg, tgt), keep_cache=True)
            bd, g = composite_loss(out, tgt, cfg)
            grads = backward_sequence(m, out, g, teacher_forced=cfg.teacher_forcing)
            _clip(grads, tcfg.clip_norm)
            opt.step(m.params, grads, lr)
            tot += bd.total
            st += bd.step or 0.0
            rs += bd.rsd or 0.0
        n = len(train_items)
        record(epoch + 1, tot / n, st / n, rs / n, lr)
        log.info("epoch %d lr %.0e train %.4f val %.4f", epoch + 1, lr, tot / n, hist.records[-1].val_loss)
    return m, hist
