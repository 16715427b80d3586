"""Per-frame losses and the composite training objective with its output gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .model import ModelConfig, OutputGrads, SequenceOutput
from .targets import SequenceTargets

PROB_FLOOR = 1e-12


def smooth_l1(pred, target, beta: float = 1.0):
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = np.abs(np.asarray(pred) - np.asarray(target))
    out = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return out if out.ndim else float(out)


def smooth_l1_grad(pred, target, beta: float = 1.0):
    d = np.asarray(pred) - np.asarray(target)
    return np.where(np.abs(d) < beta, d / beta, np.sign(d))


def weighted_cross_entropy(step_probs, target: int, weights=None) -> float:
    p = np.asarray(step_probs, dtype=float)
    if not 0 <= target < len(p):
        raise ValueError(f"target {target} outside 0..{len(p) - 1}")
    w = 1.0 if weights is None else float(weights[target])
    return -w * float(np.log(max(p[target], PROB_FLOOR)))


def bce_with_logits(logits, targets):
    u = np.asarray(logits)
    return np.maximum(u, 0) - u * targets + np.log1p(np.exp(-np.abs(u)))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    step: Optional[float] = None
    rsd: Optional[float] = None
    instrument: Optional[float] = None
    progress: Optional[float] = None

    def terms(self) -> dict[str, float]:
        return {k: v for k, v in (("step", self.step), ("rsd", self.rsd), ("instrument", self.instrument),
                                  ("progress", self.progress)) if v is not None}


def composite_loss(out: SequenceOutput, tgt: SequenceTargets, cfg: ModelConfig,
                   scale: float = 1.0) -> tuple[LossBreakdown, OutputGrads]:
    """Unweighted sum of per-term frame means; returns the breakdown and dLoss/d(head outputs).

    ``scale`` multiplies the whole objective (used to check gradient linearity).
    """
    n = len(out)
    if len(tgt) != n:
        raise ValueError(f"{n} outputs but {len(tgt)} targets")
    dtype = out.rsd_norm.dtype
    s = dtype.type(scale)
    one_over_n = dtype.type(1) / dtype.type(n)
    terms = {}

    g_logits = np.zeros_like(out.probs)
    if cfg.trains_steps:
        w = cfg.weights().astype(dtype)
        rows = np.arange(n)
        py = out.probs[rows, tgt.steps]
        wy = w[tgt.steps]
        logp = np.log(np.maximum(py, dtype.type(PROB_FLOOR)))
        terms["step"] = -np.sum(wy * logp) * one_over_n
        live = (py > PROB_FLOOR).astype(dtype)  # the floor cuts the gradient
        g_logits = out.probs * (wy * live)[:, None]
        g_logits[rows, tgt.steps] -= wy * live
        g_logits *= s * one_over_n

    beta = dtype.type(cfg.smooth_l1_beta)
    terms["rsd"] = np.sum(smooth_l1(out.rsd_norm, tgt.rsd_norm.astype(dtype), beta)) * one_over_n
    g_rsd = smooth_l1_grad(out.rsd_norm, tgt.rsd_norm.astype(dtype), beta).astype(dtype) * s * one_over_n

    g_inst = None
    if cfg.has_instrument_head:
        if tgt.instruments is None:
            raise ValueError("step_instrument_rsd needs instrument targets")
        y = tgt.instruments.astype(dtype)
        M = dtype.type(y.shape[1])
        terms["instrument"] = np.sum(bce_with_logits(out.instrument_logits, y)) * one_over_n / M
        g_inst = (expit(out.instrument_logits) - y) * (s * one_over_n / M)

    g_prog = None
    if cfg.has_progress_head:
        q = out.progress
        target = tgt.progress.astype(dtype)
        terms["progress"] = np.sum(smooth_l1(q, target, beta)) * one_over_n
        g_prog = smooth_l1_grad(q, target, beta).astype(dtype) * q * (1 - q) * s * one_over_n

    total = sum(terms.values()) * s
    bd = LossBreakdown(float(total), **{k: float(v) for k, v in terms.items()})
    return bd, OutputGrads(g_logits, g_rsd, g_inst, g_prog)


def loss_value(out: SequenceOutput, tgt: SequenceTargets, cfg: ModelConfig, scale: float = 1.0):
    """Objective in the dtype of ``out`` (no float conversion), for finite differences."""
    n = len(out)
    dtype = out.rsd_norm.dtype
    total = dtype.type(0)
    if cfg.trains_steps:
        py = out.probs[np.arange(n), tgt.steps]
        total += -np.sum(cfg.weights().astype(dtype)[tgt.steps] * np.log(np.maximum(py, dtype.type(PROB_FLOOR)))) / n
    beta = dtype.type(cfg.smooth_l1_beta)
    total += np.sum(smooth_l1(out.rsd_norm, tgt.rsd_norm.astype(dtype), beta)) / n
    if cfg.has_instrument_head:
        y = tgt.instruments.astype(dtype)
        total += np.sum(bce_with_logits(out.instrument_logits, y)) / (n * y.shape[1])
    if cfg.has_progress_head:
        total += np.sum(smooth_l1(out.progress, tgt.progress.astype(dtype), beta)) / n
    return total * dtype.type(scale)
