"""Two-layer LSTM with step and RSD heads, in plain numpy.

Every forward path (single frame, whole sequence, streaming) goes through
:func:`_frame`, so offline and online runs are bit-identical. The sequence
forward keeps per-frame caches for :func:`backward_sequence`, which is full
backpropagation through time, including the path through fed-back step
probabilities in ``full_context`` mode.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

MODES = ("rsd_only", "step_rsd", "step_instrument_rsd", "full_context", "rsdnet_mode", "catanet_mode")
MODEL_FORMAT = "pitrsd-temporal"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    num_steps: int
    hidden_size: int = 64
    num_recurrent_layers: int = 2
    context_window: int = 30
    mode: str = "full_context"
    rsd_norm_factor: float = 10.0
    smooth_l1_beta: float = 1.0
    class_weights: Optional[tuple[float, ...]] = None
    num_instruments: int = 0
    teacher_forcing: bool = False
    frame_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if min(self.feature_dim, self.num_steps, self.hidden_size, self.num_recurrent_layers) < 1:
            raise ValueError("feature_dim, num_steps, hidden_size and layer count must be >= 1")
        if self.context_window < 1 or self.frame_stride < 1:
            raise ValueError("context_window and frame_stride must be >= 1")
        if self.rsd_norm_factor <= 0 or self.smooth_l1_beta <= 0:
            raise ValueError("rsd_norm_factor and smooth_l1_beta must be positive")
        if self.class_weights is not None:
            w = tuple(float(x) for x in self.class_weights)
            if len(w) != self.num_steps or min(w) <= 0:
                raise ValueError("class_weights needs num_steps positive entries")
            object.__setattr__(self, "class_weights", w)
        if self.mode == "step_instrument_rsd" and self.num_instruments < 1:
            raise ValueError("step_instrument_rsd needs num_instruments >= 1")

    @property
    def uses_context(self) -> bool:
        return self.mode == "full_context"

    @property
    def elapsed_at_input(self) -> bool:
        return self.mode == "catanet_mode"

    @property
    def elapsed_at_output(self) -> bool:
        return self.mode == "rsdnet_mode"

    @property
    def trains_steps(self) -> bool:
        return self.mode not in ("rsd_only", "rsdnet_mode")

    @property
    def has_instrument_head(self) -> bool:
        return self.mode == "step_instrument_rsd"

    @property
    def has_progress_head(self) -> bool:
        return self.mode == "rsdnet_mode"

    @property
    def input_dim(self) -> int:
        if self.uses_context:
            return self.feature_dim + 2 * self.num_steps
        return self.feature_dim + (1 if self.elapsed_at_input else 0)

    @property
    def head_dim(self) -> int:
        return self.hidden_size + (1 if self.elapsed_at_output else 0)

    def weights(self) -> np.ndarray:
        return np.ones(self.num_steps) if self.class_weights is None else np.asarray(self.class_weights)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H = cfg.hidden_size
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(cfg.num_recurrent_layers):
        n_in = cfg.input_dim if layer == 0 else H
        shapes[f"lstm{layer}.W"] = (4 * H, n_in + H)  # gate rows: input, forget, cell, output
        shapes[f"lstm{layer}.b"] = (4 * H,)
    shapes["step.W"] = (cfg.num_steps, H)
    shapes["step.b"] = (cfg.num_steps,)
    shapes["rsd.W"] = (1, cfg.head_dim)
    shapes["rsd.b"] = (1,)
    if cfg.has_instrument_head:
        shapes["inst.W"] = (cfg.num_instruments, H)
        shapes["inst.b"] = (cfg.num_instruments,)
    if cfg.has_progress_head:
        shapes["prog.W"] = (1, cfg.head_dim)
        shapes["prog.b"] = (1,)
    return shapes


@dataclass(frozen=True, eq=False)
class TemporalModel:
    cfg: ModelConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.cfg)
        if set(shapes) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} do not match {sorted(shapes)}")
        for k, shp in shapes.items():
            if self.params[k].shape != shp:
                raise ValueError(f"{k}: shape {self.params[k].shape} != {shp}")
            if not np.all(np.isfinite(self.params[k])):
                raise ValueError(f"{k} has non-finite entries")

    def copy(self) -> "TemporalModel":
        return TemporalModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def save(self, path) -> None:
        meta = json.dumps({"format": MODEL_FORMAT, "version": MODEL_VERSION, "config": asdict(self.cfg)})
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **self.params)

    @classmethod
    def load(cls, path) -> "TemporalModel":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("format") != MODEL_FORMAT:
                raise ValueError(f"{path} is not a temporal model file")
            if meta.get("version") != MODEL_VERSION:
                raise ValueError(f"unsupported model file version {meta.get('version')}")
            c = meta["config"]
            if c.get("class_weights") is not None:
                c["class_weights"] = tuple(c["class_weights"])
            params = {k: z[k].copy() for k in z.files if k != "__meta__"}
        return cls(ModelConfig(**c), params)


def init_model(cfg: ModelConfig) -> TemporalModel:
    """Uniform(-1/sqrt(fan), 1/sqrt(fan)) initialisation; forget-gate bias starts at 1."""
    rng = np.random.default_rng(cfg.seed)
    H = cfg.hidden_size
    params = {}
    for name, shp in param_shapes(cfg).items():
        fan = H if name.startswith("lstm") else shp[-1] if len(shp) == 2 else shp[0]
        bound = 1.0 / np.sqrt(fan)
        params[name] = rng.uniform(-bound, bound, size=shp)
    for layer in range(cfg.num_recurrent_layers):
        params[f"lstm{layer}.b"][H:2 * H] = 1.0
    return TemporalModel(cfg, params)


def zero_model(cfg: ModelConfig) -> TemporalModel:
    return TemporalModel(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()})


# -- recurrent state and context ------------------------------------------------

@dataclass(frozen=True, eq=False)
class RecurrentState:
    h: tuple[np.ndarray, ...]
    c: tuple[np.ndarray, ...]
    buffer: tuple[np.ndarray, ...] = ()  # last <= t_hat step-probability vectors, oldest first
    frames_seen: int = 0


def initial_state(cfg: ModelConfig, dtype=np.float64) -> RecurrentState:
    z = np.zeros(cfg.hidden_size, dtype=dtype)
    return RecurrentState(tuple(z for _ in range(cfg.num_recurrent_layers)),
                          tuple(z for _ in range(cfg.num_recurrent_layers)))


def context_suffix(buffer, K: int, dtype=np.float64) -> np.ndarray:
    """Last probability vector followed by the mean of the buffer; uniform before any frame."""
    if not buffer:
        u = np.full(K, 1.0 / K, dtype=dtype)
        return np.concatenate([u, u])
    return np.concatenate([buffer[-1], np.sum(buffer, axis=0) / len(buffer)])


def assemble_context_input(feature, state: RecurrentState, cfg: ModelConfig,
                           elapsed_min: Optional[float] = None) -> np.ndarray:
    """Build the recurrent input for one frame according to the model mode."""
    feature = np.asarray(feature)
    if feature.shape != (cfg.feature_dim,):
        raise ValueError(f"feature has shape {feature.shape}, expected ({cfg.feature_dim},)")
    if cfg.uses_context:
        return np.concatenate([feature, context_suffix(state.buffer, cfg.num_steps, feature.dtype)])
    if cfg.elapsed_at_input:
        if elapsed_min is None:
            raise ValueError("catanet_mode needs the elapsed time")
        return np.concatenate([feature, np.array([elapsed_min / cfg.rsd_norm_factor], dtype=feature.dtype)])
    return feature


# -- forward --------------------------------------------------------------------

@dataclass
class FrameResult:
    step_probs: np.ndarray
    rsd_norm: float
    h: list
    c: list
    instrument_logits: Optional[np.ndarray] = None
    progress: Optional[float] = None
    cache: Optional[tuple] = None


def _frame(P: dict, cfg: ModelConfig, x: np.ndarray, elapsed_norm, h_prev, c_prev, keep_cache: bool) -> FrameResult:
    H = cfg.hidden_size
    inp = x
    hs, cs, layer_cache = [], [], []
    for layer in range(cfg.num_recurrent_layers):
        z = np.concatenate([inp, h_prev[layer]])
        a = P[f"lstm{layer}.W"] @ z + P[f"lstm{layer}.b"]
        sig = expit(a)  # the cell-gate slice is recomputed with tanh below
        i, f, o = sig[:H], sig[H:2 * H], sig[3 * H:]
        g = np.tanh(a[2 * H:3 * H])
        c = f * c_prev[layer] + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep_cache:
            layer_cache.append((z, i, f, g, o, c_prev[layer], tc))
        hs.append(h)
        cs.append(c)
        inp = h
    top = inp
    logits = P["step.W"] @ top + P["step.b"]
    shifted = logits - logits.max()
    e = np.exp(shifted)
    probs = e / e.sum()
    head_in = np.concatenate([top, [elapsed_norm]]) if cfg.elapsed_at_output else top
    rsd = (P["rsd.W"] @ head_in + P["rsd.b"])[0]
    inst = P["inst.W"] @ top + P["inst.b"] if cfg.has_instrument_head else None
    prog = expit((P["prog.W"] @ head_in + P["prog.b"])[0]) if cfg.has_progress_head else None
    cache = (layer_cache, top, head_in, shifted) if keep_cache else None
    return FrameResult(probs, rsd, hs, cs, inst, prog, cache)


def forward_frame(m: TemporalModel, state: RecurrentState, l_t: np.ndarray,
                  elapsed_min: float = 0.0) -> tuple[np.ndarray, float, RecurrentState]:
    """One causal step: returns (step probabilities, normalised RSD, next state)."""
    cfg = m.cfg
    l_t = np.asarray(l_t)
    if l_t.shape != (cfg.input_dim,):
        raise ValueError(f"input has shape {l_t.shape}, expected ({cfg.input_dim},)")
    r = _frame(m.params, cfg, l_t, elapsed_min / cfg.rsd_norm_factor, state.h, state.c, False)
    if not (np.isfinite(r.rsd_norm) and np.all(np.isfinite(r.step_probs))):
        raise FloatingPointError(f"non-finite activation at frame {state.frames_seen}")
    buf = state.buffer
    if cfg.uses_context:
        buf = (buf + (r.step_probs,))[-cfg.context_window:]
    return r.step_probs, float(r.rsd_norm), RecurrentState(tuple(r.h), tuple(r.c), buf, state.frames_seen + 1)


@dataclass(eq=False)
class SequenceOutput:
    probs: np.ndarray  # (n, K)
    rsd_norm: np.ndarray  # (n,)
    instrument_logits: Optional[np.ndarray] = None  # (n, M)
    progress: Optional[np.ndarray] = None  # (n,)
    caches: Optional[list] = None

    def __len__(self) -> int:
        return len(self.rsd_norm)


def forward_sequence(m: TemporalModel, features: np.ndarray, elapsed_min: np.ndarray,
                     context_steps: Optional[np.ndarray] = None, keep_cache: bool = False) -> SequenceOutput:
    """Run a whole sequence from the initial state.

    ``context_steps`` switches on teacher forcing: the context buffer is fed
    one-hot ground-truth steps instead of the model's own probabilities.
    """
    cfg, P = m.cfg, m.params
    dtype = P["step.W"].dtype
    features = np.asarray(features, dtype=dtype)
    n, K = len(features), cfg.num_steps
    if features.ndim != 2 or features.shape[1] != cfg.feature_dim:
        raise ValueError(f"features must be (n, {cfg.feature_dim})")
    elapsed_norm = np.asarray(elapsed_min, dtype=dtype) / dtype.type(cfg.rsd_norm_factor)
    state = initial_state(cfg, dtype)
    h, c, buf = list(state.h), list(state.c), []
    probs = np.empty((n, K), dtype=dtype)
    rsd = np.empty(n, dtype=dtype)
    inst = np.empty((n, cfg.num_instruments), dtype=dtype) if cfg.has_instrument_head else None
    prog = np.empty(n, dtype=dtype) if cfg.has_progress_head else None
    caches = [] if keep_cache else None
    eye = np.eye(K, dtype=dtype)
    for t in range(n):
        if cfg.uses_context:
            x = np.concatenate([features[t], context_suffix(buf, K, dtype)])
        elif cfg.elapsed_at_input:
            x = np.concatenate([features[t], elapsed_norm[t:t + 1]])
        else:
            x = features[t]
        r = _frame(P, cfg, x, elapsed_norm[t], h, c, keep_cache)
        h, c = r.h, r.c
        probs[t], rsd[t] = r.step_probs, r.rsd_norm
        if inst is not None:
            inst[t] = r.instrument_logits
        if prog is not None:
            prog[t] = r.progress
        if cfg.uses_context:
            buf.append(eye[context_steps[t]] if context_steps is not None else r.step_probs)
            if len(buf) > cfg.context_window:
                buf.pop(0)
        if keep_cache:
            caches.append(r.cache)
    bad = ~(np.isfinite(rsd) & np.isfinite(probs).all(axis=1))
    if bad.any():
        raise FloatingPointError(f"non-finite activation at frame {int(np.argmax(bad))}")
    return SequenceOutput(probs, rsd, inst, prog, caches)


# -- backward -------------------------------------------------------------------

@dataclass(eq=False)
class OutputGrads:
    """Loss gradients with respect to the raw head outputs."""

    logits: np.ndarray  # (n, K)
    rsd: np.ndarray  # (n,)
    instrument_logits: Optional[np.ndarray] = None
    progress_pre: Optional[np.ndarray] = None  # w.r.t. the progress pre-activation


def backward_sequence(m: TemporalModel, out: SequenceOutput, g: OutputGrads,
                      teacher_forced: bool = False) -> dict[str, np.ndarray]:
    """Gradients of the loss behind ``g`` with respect to every parameter.

    The time loop only carries the recurrent and feedback terms; per-frame
    contributions to the weights are stacked and reduced with one matmul each.
    """
    cfg, P = m.cfg, m.params
    if out.caches is None:
        raise ValueError("forward_sequence must be run with keep_cache=True")
    H, K, L = cfg.hidden_size, cfg.num_steps, cfg.num_recurrent_layers
    D = cfg.feature_dim
    n = len(out)
    dtype = out.rsd_norm.dtype
    feed_back = cfg.uses_context and not teacher_forced
    tops = np.array([c[1] for c in out.caches], dtype=dtype).reshape(n, H)
    heads = np.array([c[2] for c in out.caches], dtype=dtype).reshape(n, cfg.head_dim)

    # head terms that do not depend on the feedback path
    dtop_fixed = g.rsd[:, None] * P["rsd.W"][0][:H]
    if cfg.has_progress_head:
        dtop_fixed = dtop_fixed + g.progress_pre[:, None] * P["prog.W"][0][:H]
    if cfg.has_instrument_head:
        dtop_fixed = dtop_fixed + g.instrument_logits @ P["inst.W"]

    dlogits_all = np.array(g.logits, dtype=dtype, copy=True)
    dprobs = np.zeros_like(out.probs) if feed_back else None
    da_all = [np.empty((n, 4 * H), dtype=dtype) for _ in range(L)]
    dh_next = [np.zeros(H, dtype=dtype) for _ in range(L)]
    dc_next = [np.zeros(H, dtype=dtype) for _ in range(L)]
    Ws = P["step.W"]
    Wl = [P[f"lstm{layer}.W"] for layer in range(L)]
    for t in range(n - 1, -1, -1):
        layer_cache = out.caches[t][0]
        if feed_back:
            p, q = out.probs[t], dprobs[t]
            dlogits_all[t] += p * (q - p @ q)
        dh = Ws.T @ dlogits_all[t] + dtop_fixed[t] + dh_next[L - 1]
        for layer in range(L - 1, -1, -1):
            z, i, f, gg, o, c_prev, tc = layer_cache[layer]
            do = dh * tc
            dc = dc_next[layer] + dh * o * (1 - tc * tc)
            da = da_all[layer][t]
            da[:H] = dc * gg * i * (1 - i)
            da[H:2 * H] = dc * c_prev * f * (1 - f)
            da[2 * H:3 * H] = dc * i * (1 - gg * gg)
            da[3 * H:] = do * o * (1 - o)
            dz = Wl[layer].T @ da
            n_in = len(z) - H
            dc_next[layer] = dc * f
            dh_next[layer] = dz[n_in:]
            if layer > 0:
                dh = dz[:n_in] + dh_next[layer - 1]
            else:
                dx = dz[:n_in]
        if feed_back and t > 0:
            dprobs[t - 1] += dx[D:D + K]
            span = min(cfg.context_window, t)
            dprobs[t - span:t] += dx[D + K:] / span

    grads = {}
    for layer in range(L):
        Z = np.array([c[0][layer][0] for c in out.caches], dtype=dtype)
        grads[f"lstm{layer}.W"] = da_all[layer].T @ Z
        grads[f"lstm{layer}.b"] = da_all[layer].sum(axis=0)
    grads["step.W"] = dlogits_all.T @ tops
    grads["step.b"] = dlogits_all.sum(axis=0)
    grads["rsd.W"] = (g.rsd @ heads)[None, :]
    grads["rsd.b"] = np.array([g.rsd.sum()], dtype=dtype)
    if cfg.has_instrument_head:
        grads["inst.W"] = g.instrument_logits.T @ tops
        grads["inst.b"] = g.instrument_logits.sum(axis=0)
    if cfg.has_progress_head:
        grads["prog.W"] = (g.progress_pre @ heads)[None, :]
        grads["prog.b"] = np.array([g.progress_pre.sum()], dtype=dtype)
    return grads
