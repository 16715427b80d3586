"""Finite-difference verification of the hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .losses import composite_loss, loss_value
from .model import ModelConfig, TemporalModel, backward_sequence, forward_sequence, init_model
from .targets import SequenceInputs, SequenceTargets

MAX_FRAMES = 8
# Entries whose analytic and numeric gradients are both below this are compared
# in absolute terms; relative error of two round-off-sized numbers is meaningless.
REL_ERROR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    mode: str
    max_relative_error: float
    per_tensor: dict = field(default_factory=dict)
    worst: Optional[tuple] = None  # (tensor name, flat index)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error < tol


def as_dtype(m: TemporalModel, dtype) -> TemporalModel:
    return TemporalModel(m.cfg, {k: v.astype(dtype) for k, v in m.params.items()})


def analytic_gradients(m: TemporalModel, inputs: SequenceInputs, tgt: SequenceTargets,
                       scale: float = 1.0, teacher_forcing: Optional[bool] = None) -> dict:
    tf = m.cfg.teacher_forcing if teacher_forcing is None else teacher_forcing
    out = forward_sequence(m, inputs.features, inputs.elapsed_min, tgt.steps if tf else None, keep_cache=True)
    _, g = composite_loss(out, tgt, m.cfg, scale)
    return backward_sequence(m, out, g, teacher_forced=tf)


def objective(m: TemporalModel, inputs: SequenceInputs, tgt: SequenceTargets, scale: float = 1.0):
    tf = m.cfg.teacher_forcing
    out = forward_sequence(m, inputs.features, inputs.elapsed_min, tgt.steps if tf else None)
    return loss_value(out, tgt, m.cfg, scale)


def gradient_check(m: TemporalModel, inputs: SequenceInputs, tgt: SequenceTargets,
                   epsilon: float = 1e-5, dtype=np.longdouble) -> GradCheckReport:
    """Compare analytic gradients with central differences on every parameter entry.

    Both sides are evaluated in ``dtype`` (extended precision by default).
    """
    if len(inputs) > MAX_FRAMES:
        raise ValueError(f"gradient check takes at most {MAX_FRAMES} frames, got {len(inputs)}")
    mx = as_dtype(m, dtype)
    ana = analytic_gradients(mx, inputs, tgt)
    eps = dtype(epsilon)
    worst_err, worst_at, per = 0.0, None, {}
    for name, p in mx.params.items():
        flat = p.reshape(-1)
        num = np.empty_like(flat)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + eps
            up = objective(mx, inputs, tgt)
            flat[j] = keep - eps
            down = objective(mx, inputs, tgt)
            flat[j] = keep
            num[j] = (up - down) / (2 * eps)
        a = ana[name].reshape(-1)
        denom = np.maximum(np.abs(a) + np.abs(num), dtype(REL_ERROR_FLOOR))
        rel = np.abs(a - num) / denom
        j = int(np.argmax(rel))
        per[name] = float(rel[j])
        if rel[j] > worst_err or worst_at is None:
            worst_err, worst_at = float(rel[j]), (name, j)
    return GradCheckReport(m.cfg.mode, worst_err, per, worst_at)


def tiny_problem(mode: str, n_frames: int = 6, feature_dim: int = 4, num_steps: int = 3,
                 hidden_size: int = 5, num_instruments: int = 2, seed: int = 0,
                 context_window: int = 3, **overrides):
    """A seeded random model and batch small enough for exhaustive finite differences."""
    rng = np.random.default_rng([seed, 0x6C])
    cfg = ModelConfig(feature_dim=feature_dim, num_steps=num_steps, hidden_size=hidden_size,
                      context_window=context_window, mode=mode, seed=seed,
                      num_instruments=num_instruments if mode == "step_instrument_rsd" else 0,
                      class_weights=tuple(rng.uniform(0.5, 2.0, num_steps)), **overrides)
    m = init_model(cfg)
    # larger weights than the default init make the check less forgiving
    m = TemporalModel(cfg, {k: v * 2.0 for k, v in m.params.items()})
    t = np.arange(n_frames)
    total = n_frames + 4
    inputs = SequenceInputs(rng.normal(size=(n_frames, feature_dim)), (t + 1) / 60.0, t)
    inst = (rng.random((n_frames, num_instruments)) < 0.5).astype(float) if cfg.has_instrument_head else None
    tgt = SequenceTargets(rng.integers(0, num_steps, n_frames), rng.uniform(-0.5, 2.5, n_frames),
                          (t + 1) / total, inst)
    return m, inputs, tgt
