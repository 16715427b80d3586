"""INI run configuration: one file with [generator], [model], [train] and [eval] sections.

Command-line flags are layered on top; the merged result is written next to
the run outputs so a run can be repeated from its own directory.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Mapping, Optional

from .domain import SplitSpec
from .temporal.model import ModelConfig
from .temporal.training import TrainConfig

SECTIONS = ("run", "generator", "model", "train", "eval")

_MODEL_KEYS = {"hidden_size": int, "num_recurrent_layers": int, "context_window": int, "mode": str,
               "rsd_norm_factor": float, "smooth_l1_beta": float, "frame_stride": int,
               "teacher_forcing": "bool", "class_weights": str, "seed": int}
_TRAIN_KEYS = {"epochs_phase1": int, "epochs_phase2": int, "lr_phase1": float, "lr_phase2": float,
               "adam_eps": float, "clip_norm": float, "shuffle": "bool", "seed": int, "betas": "pair"}


def as_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in {"1", "true", "yes", "on"}:
        return True
    if v in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _convert(kind, val):
    if kind == "bool":
        return as_bool(val)
    if kind == "pair":
        a, b = (float(x) for x in str(val).split(","))
        return a, b
    return kind(val)


def load_config(path: Optional[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case
    for s in SECTIONS:
        cp.add_section(s)
    if path:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {path} does not exist")
        cp.read(p, encoding="utf-8")
        unknown = [s for s in cp.sections() if s not in SECTIONS]
        if unknown:
            raise ValueError(f"unknown config sections {unknown}; expected {SECTIONS}")
    return cp


def apply_overrides(cp: configparser.ConfigParser, section: str, values: Mapping[str, object]) -> None:
    """Flags win: every non-None value replaces the file's entry."""
    for k, v in values.items():
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        cp.set(section, k, str(v))


def write_config(cp: configparser.ConfigParser, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def parse_class_weights(spec: Optional[str]):
    """``auto`` (inverse frequency), ``none`` (all ones) or a comma list of K weights."""
    if spec is None or spec.strip().lower() == "auto":
        return "auto"
    if spec.strip().lower() == "none":
        return None
    return tuple(float(x) for x in spec.split(","))


def model_config_from_mapping(m: Mapping[str, str], feature_dim: int, num_steps: int,
                              num_instruments: int = 0, class_weights=None) -> ModelConfig:
    kw = {}
    for key, val in m.items():
        if key not in _MODEL_KEYS:
            raise KeyError(f"unknown model key {key!r}")
        if key == "class_weights":
            continue
        kw[key] = _convert(_MODEL_KEYS[key], val)
    if kw.get("mode") == "step_instrument_rsd":
        kw["num_instruments"] = num_instruments
    return ModelConfig(feature_dim=feature_dim, num_steps=num_steps, class_weights=class_weights, **kw)


def train_config_from_mapping(m: Mapping[str, str]) -> TrainConfig:
    kw = {}
    for key, val in m.items():
        if key not in _TRAIN_KEYS:
            raise KeyError(f"unknown train key {key!r}")
        kw[key] = _convert(_TRAIN_KEYS[key], val)
    return TrainConfig(**kw)


def parse_split(spec: Optional[str], n: int, seed: int = 0) -> SplitSpec:
    """``a,b,c`` counts, or ``auto`` for the 70/8/10 proportions scaled to ``n`` videos."""
    if spec is None or spec.strip().lower() == "auto":
        if n < 3:
            raise ValueError("need at least 3 videos to split into train/val/test")
        n_val = max(1, round(n * 8 / 88))
        n_test = max(1, round(n * 10 / 88))
        return SplitSpec(n - n_val - n_test, n_val, n_test, seed)
    parts = [int(x) for x in spec.split(",")]
    if len(parts) != 3:
        raise ValueError(f"split must be 'train,val,test', got {spec!r}")
    s = SplitSpec(*parts, seed=seed)
    if s.total != n:
        raise ValueError(f"split {spec} covers {s.total} videos but the dataset has {n}")
    return s


def section(cp: configparser.ConfigParser, name: str) -> dict[str, str]:
    return dict(cp.items(name)) if cp.has_section(name) else {}

