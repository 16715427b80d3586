"""Synthetic pituitary-like surgeries.

A video is built in three layers: a step skeleton (core steps in canonical
order, optional steps by coin flip, repeatable steps re-inserted after later
steps), per-occurrence log-normal durations, and optionally per-frame
instrument sets and feature vectors. Durations share a per-video log-normal
"pace" multiplier so that total duration has the spread seen in real theatre
data; :func:`calibrate` fits that multiplier and a global scale so the
duration distribution hits a target median and IQR.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from .domain import AnnotatedVideo, Dataset, Step, StepCatalog

# (name, is_core, is_repeatable, optional prob, median seconds, log-sd)
PITUITARY_STEPS = (
    ("nasal_corridor_creation", True, False, 1.0, 540, 0.45),
    ("anterior_sphenoidotomy", True, False, 1.0, 420, 0.45),
    ("septum_displacement", False, False, 0.8, 150, 0.5),
    ("sphenoid_sinus_clearance", True, False, 1.0, 330, 0.45),
    ("sellotomy", True, False, 1.0, 270, 0.45),
    ("durotomy", True, False, 1.0, 120, 0.5),
    ("tumour_excision", True, False, 1.0, 1080, 0.55),
    ("haemostasis", True, True, 1.0, 180, 0.6),
    ("synthetic_graft_placement", False, False, 0.8, 150, 0.5),
    ("fat_graft_placement", False, False, 0.55, 300, 0.5),
    ("gasket_seal_construct", False, False, 0.5, 240, 0.5),
    ("dural_sealant", True, False, 1.0, 150, 0.5),
    ("nasal_packing", False, False, 0.8, 240, 0.5),
    ("debris_clearance", False, False, 0.65, 150, 0.5),
)

SHORT_OUTLIER = (0.4, 0.6)
LONG_OUTLIER = (1.6, 2.2)
INSTRUMENT_CHUNK_S = 60


def pituitary_catalog() -> StepCatalog:
    return StepCatalog.from_steps(
        Step(i, name, core, rep) for i, (name, core, rep, *_rest) in enumerate(PITUITARY_STEPS)
    )


@dataclass(frozen=True)
class GeneratorConfig:
    catalog: StepCatalog = field(default_factory=pituitary_catalog)
    median_duration_min: float = 64.0
    iqr_min: tuple[float, float] = (53.0, 84.0)
    optional_step_prob: tuple[float, ...] = tuple(p for *_h, p, _m, _d in PITUITARY_STEPS)
    repeat_prob: float = 0.2
    step_duration_params: tuple[tuple[float, float], ...] = tuple((m, d) for *_h, m, d in PITUITARY_STEPS)
    feature_dim: int = 16
    feature_noise_sigma: float = 0.5
    outlier_prob: float = 0.12
    long_outlier_share: float = 0.5
    with_instruments: bool = False
    num_instruments: int = 18
    instrument_noise: float = 0.1
    seed: int = 0
    # fitted by calibrate(); the defaults leave per-step medians untouched
    duration_scale: float = 1.0
    pace_sigma: float = 0.0

    def __post_init__(self):
        k = self.catalog.num_steps
        q1, q3 = self.iqr_min
        if not q1 < self.median_duration_min < q3:
            raise ValueError("need q1 < median < q3")
        if len(self.optional_step_prob) != k or len(self.step_duration_params) != k:
            raise ValueError(f"per-step parameters must have {k} entries")
        probs = (*self.optional_step_prob, self.repeat_prob, self.outlier_prob, self.long_outlier_share,
                 self.instrument_noise)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.feature_noise_sigma < 0 or self.pace_sigma < 0 or self.duration_scale <= 0:
            raise ValueError("noise scales must be >= 0 and duration_scale > 0")
        if any(m <= 0 or d < 0 for m, d in self.step_duration_params):
            raise ValueError("step medians must be > 0 and dispersions >= 0")
        if self.num_instruments < 1:
            raise ValueError("num_instruments must be >= 1")
        object.__setattr__(self, "iqr_min", (float(q1), float(q3)))


@dataclass(frozen=True)
class _Skeleton:
    steps: tuple[int, ...]
    base_durations: np.ndarray  # seconds before the per-video multiplier
    pace_z: float
    outlier_factor: float
    outlier_kind: Optional[str]


def _draw_skeleton(cfg: GeneratorConfig, rng: np.random.Generator) -> _Skeleton:
    cat = cfg.catalog
    repeatables = cat.repeatable_ids()
    seen: set[int] = set()
    seq: list[int] = []
    for sid in cat.canonical_order:
        u = rng.random()
        if not cat.steps[sid].is_core and u >= cfg.optional_step_prob[sid]:
            continue
        seq.append(sid)
        seen.add(sid)
        for r in repeatables:
            # uniforms drawn unconditionally so one flag does not shift the stream
            u = rng.random()
            if r in seen and seq[-1] != r and u < cfg.repeat_prob:
                seq.append(r)
    params = np.array([cfg.step_duration_params[s] for s in seq], dtype=float).reshape(-1, 2)
    base = params[:, 0] * np.exp(params[:, 1] * rng.standard_normal(len(seq)))
    pace_z = float(rng.standard_normal())
    u_out, u_dir, u_mag = rng.random(3)
    factor, kind = 1.0, None
    if u_out < cfg.outlier_prob:
        kind = "short" if u_dir < 1.0 - cfg.long_outlier_share else "long"
        lo, hi = LONG_OUTLIER if kind == "long" else SHORT_OUTLIER
        factor = lo + (hi - lo) * u_mag
    return _Skeleton(tuple(seq), base, pace_z, factor, kind)


def _multiplier(cfg: GeneratorConfig, sk: _Skeleton) -> float:
    return cfg.duration_scale * float(np.exp(cfg.pace_sigma * sk.pace_z)) * sk.outlier_factor


def _video_rng(cfg: GeneratorConfig, video_seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, int(video_seed), stream])


def _step_instrument_map(cfg: GeneratorConfig) -> list[tuple[int, ...]]:
    rng = np.random.default_rng([cfg.seed, 0x1257])
    out = []
    for _ in range(cfg.catalog.num_steps):
        n = int(rng.integers(2, 4))
        out.append(tuple(sorted(rng.choice(cfg.num_instruments, size=min(n, cfg.num_instruments),
                                           replace=False).tolist())))
    return out


def _instrument_column(cfg, steps, durations, rng) -> tuple[frozenset, ...]:
    typical = _step_instrument_map(cfg)
    col: list[frozenset] = []
    for sid, d in zip(steps, durations):
        left = int(d)
        while left > 0:
            n = min(left, INSTRUMENT_CHUNK_S)
            keep = {i for i in typical[sid] if rng.random() >= cfg.instrument_noise}
            if rng.random() < cfg.instrument_noise:
                keep.add(int(rng.integers(cfg.num_instruments)))
            col.extend([frozenset(keep)] * n)
            left -= n
    return tuple(col)


def generate_workflow(cfg: GeneratorConfig, video_seed: int) -> AnnotatedVideo:
    """One synthetic surgery (no features), deterministic in ``(cfg.seed, video_seed)``."""
    rng = _video_rng(cfg, video_seed)
    sk = _draw_skeleton(cfg, rng)
    durations = np.maximum(1, np.rint(sk.base_durations * _multiplier(cfg, sk))).astype(np.int64)
    labels = np.repeat(np.asarray(sk.steps, dtype=np.int64), durations)
    total = int(durations.sum())
    tags = set()
    if sk.outlier_kind:
        tags |= {"outlier", f"outlier_{sk.outlier_kind}"}
    instruments = None
    if cfg.with_instruments:
        instruments = _instrument_column(cfg, sk.steps, durations, _video_rng(cfg, video_seed, 1))
    return AnnotatedVideo(f"synth-{video_seed:04d}", total, np.arange(total), labels, instruments,
                          None, frozenset(tags))


def step_anchors(cfg: GeneratorConfig) -> np.ndarray:
    """Fixed per-step anchor vectors, shape (K, D)."""
    rng = np.random.default_rng([cfg.seed, 0xFEA7])
    while True:
        anchors = rng.standard_normal((cfg.catalog.num_steps, cfg.feature_dim))
        diff = anchors[:, None, :] - anchors[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1)) + np.eye(len(anchors))
        if dist.min() > 0:
            return anchors


def emit_features(v: AnnotatedVideo, cfg: GeneratorConfig) -> AnnotatedVideo:
    """Per-frame feature = step anchor + isotropic Gaussian noise of scale ``feature_noise_sigma``."""
    if v.features is not None:
        raise ValueError(f"video {v.video_id} already carries features")
    anchors = step_anchors(cfg)
    rng = np.random.default_rng([cfg.seed, 0xFEA7, zlib.crc32(v.video_id.encode())])
    noise = rng.standard_normal((v.n_frames, cfg.feature_dim))
    return v.with_features(anchors[v.step_ids] + cfg.feature_noise_sigma * noise)


def generate_dataset(cfg: GeneratorConfig, n: int, features: bool = False) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    videos = [generate_workflow(cfg, i) for i in range(n)]
    if features:
        videos = [emit_features(v, cfg) for v in videos]
    return Dataset(cfg.catalog, videos)


def calibrate(cfg: GeneratorConfig, n_samples: int = 4000) -> GeneratorConfig:
    """Fit ``duration_scale`` and ``pace_sigma`` to the configured median and IQR.

    The skeletons are drawn once with a fixed calibration seed; for each
    candidate pace sigma the scale is set to hit the median exactly, and the
    sigma minimising the squared log-error of both quartiles wins.
    """
    rng = np.random.default_rng([cfg.seed, 0xCA1])
    base = np.empty(n_samples)
    z = np.empty(n_samples)
    for i in range(n_samples):
        sk = _draw_skeleton(cfg, rng)
        base[i] = sk.base_durations.sum() * sk.outlier_factor
        z[i] = sk.pace_z
    q1_t, q3_t = (q * 60.0 for q in cfg.iqr_min)
    med_t = cfg.median_duration_min * 60.0
    best = (np.inf, 1.0, 0.0)
    for sigma in np.linspace(0.0, 1.0, 501):
        totals = base * np.exp(sigma * z)
        q1, med, q3 = np.quantile(totals, [0.25, 0.5, 0.75])
        scale = med_t / med
        err = np.log(scale * q1 / q1_t) ** 2 + np.log(scale * q3 / q3_t) ** 2
        if err < best[0]:
            best = (err, scale, sigma)
    return replace(cfg, duration_scale=float(best[1]), pace_sigma=float(best[2]))


@lru_cache(maxsize=16)
def _calibrated(cfg: GeneratorConfig) -> GeneratorConfig:
    return calibrate(cfg)


def pit88_config(**overrides) -> GeneratorConfig:
    """Default calibration: median 64 min, IQR 53-84 min."""
    return _calibrated(GeneratorConfig(**overrides))


def pit33_config(**overrides) -> GeneratorConfig:
    """Instrument-annotated variant: median 72 min, IQR 61-80 min."""
    kw = dict(median_duration_min=72.0, iqr_min=(61.0, 80.0), with_instruments=True)
    kw.update(overrides)
    return _calibrated(GeneratorConfig(**kw))


def duration_summary(durations_s: Sequence[float]) -> dict[str, float]:
    d = np.asarray(durations_s, dtype=float) / 60.0
    q1, med, q3 = np.quantile(d, [0.25, 0.5, 0.75])
    return {"n": int(len(d)), "median_min": float(med), "q1_min": float(q1), "q3_min": float(q3),
            "mean_min": float(d.mean()), "std_min": float(d.std())}


def _parse_pair(s) -> tuple[float, float]:
    if isinstance(s, str):
        a, b = (float(x) for x in s.replace(";", ",").split(","))
        return a, b
    a, b = s
    return float(a), float(b)


def _as_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    return str(s).strip().lower() in {"1", "true", "yes", "on"}


def generator_config_from_mapping(m: Mapping[str, str], base: Optional[GeneratorConfig] = None,
                                  calibrated: bool = True) -> GeneratorConfig:
    """Build a config from flat keys as found in a ``[generator]`` config section.

    Per-step keys are ``optional_step_prob.<step name or id>`` and
    ``step_duration.<step name or id> = median_s, dispersion``.
    """
    cfg = base or GeneratorConfig()
    names = {s.name: s.step_id for s in cfg.catalog.steps}
    probs = list(cfg.optional_step_prob)
    durs = list(cfg.step_duration_params)
    kw: dict = {}
    scalar = {"median_duration_min": float, "repeat_prob": float, "feature_dim": int,
              "feature_noise_sigma": float, "outlier_prob": float, "long_outlier_share": float, "num_instruments": int,
              "instrument_noise": float, "seed": int}
    for key, val in m.items():
        if key in scalar:
            kw[key] = scalar[key](val)
        elif key == "iqr_min":
            kw[key] = _parse_pair(val)
        elif key == "with_instruments":
            kw[key] = _as_bool(val)
        elif key.startswith("optional_step_prob."):
            ref = key.split(".", 1)[1]
            probs[names[ref] if ref in names else int(ref)] = float(val)
        elif key.startswith("step_duration."):
            ref = key.split(".", 1)[1]
            durs[names[ref] if ref in names else int(ref)] = _parse_pair(val)
        else:
            raise KeyError(f"unknown generator key {key!r}")
    cfg = replace(cfg, optional_step_prob=tuple(probs), step_duration_params=tuple(durs), **kw)
    return _calibrated(replace(cfg, duration_scale=1.0, pace_sigma=0.0)) if calibrated else cfg
