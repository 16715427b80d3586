"""Dataset and catalog files.

Datasets are newline-delimited JSON, one video per line; catalogs are a single
JSON document. Field names are documented in FORMAT.md.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

from .domain import AnnotatedVideo, Dataset, Step, StepCatalog

PathLike = Union[str, Path]

FORMAT_VERSION = 1


def catalog_to_dict(c: StepCatalog) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "steps": [
            {"step_id": s.step_id, "name": s.name, "is_core": s.is_core, "is_repeatable": s.is_repeatable}
            for s in c.steps
        ],
        "canonical_order": list(c.canonical_order),
    }


def catalog_from_dict(d: dict) -> StepCatalog:
    steps = [Step(int(s["step_id"]), s["name"], bool(s.get("is_core", True)), bool(s.get("is_repeatable", False)))
             for s in d["steps"]]
    steps.sort(key=lambda s: s.step_id)
    return StepCatalog.from_steps(steps, d.get("canonical_order"))


def write_catalog(c: StepCatalog, path: PathLike) -> None:
    Path(path).write_text(json.dumps(catalog_to_dict(c), indent=2) + "\n", encoding="utf-8")


def read_catalog(path: PathLike) -> StepCatalog:
    return catalog_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _fmt_vector(x: np.ndarray, digits: int) -> str:
    return "[" + ",".join(format(float(v), f".{digits}g") for v in x) + "]"


def video_to_line(v: AnnotatedVideo, feature_digits: int = 9) -> str:
    if feature_digits < 9:
        raise ValueError("features need at least 9 significant digits")
    frames = []
    for i in range(v.n_frames):
        parts = [f'"t_s":{int(v.t_s[i])}', f'"step_id":{int(v.step_ids[i])}']
        if v.instruments is not None:
            parts.append('"instrument_ids":' + json.dumps(sorted(v.instruments[i])))
        if v.features is not None:
            parts.append('"feature":' + _fmt_vector(v.features[i], feature_digits))
        frames.append("{" + ",".join(parts) + "}")
    head = {"video_id": v.video_id, "duration_s": int(v.duration_s), "tags": sorted(v.tags)}
    return json.dumps(head)[:-1] + ',"frames":[' + ",".join(frames) + "]}"


def video_from_record(rec: dict) -> AnnotatedVideo:
    frames = rec["frames"]
    t_s = [f["t_s"] for f in frames]
    steps = [f["step_id"] for f in frames]
    inst = None
    if frames and any("instrument_ids" in f for f in frames):
        inst = tuple(frozenset(f.get("instrument_ids", ())) for f in frames)
    feats, ragged = None, None
    if frames and any("feature" in f for f in frames):
        dims = tuple(len(f["feature"]) if "feature" in f else -1 for f in frames)
        if len(set(dims)) == 1:
            feats = np.array([f["feature"] for f in frames], dtype=np.float64)
        else:
            ragged = dims
    return AnnotatedVideo(rec["video_id"], int(rec["duration_s"]), t_s, steps, inst, feats,
                          frozenset(rec.get("tags", ())), ragged_feature_dims=ragged)


def write_dataset(videos: Iterable[AnnotatedVideo], path: PathLike, feature_digits: int = 9) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in videos:
            fh.write(video_to_line(v, feature_digits))
            fh.write("\n")


def iter_dataset(path: PathLike) -> Iterator[AnnotatedVideo]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield video_from_record(json.loads(line))
            except (KeyError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed video record ({exc})") from exc


def read_dataset(path: PathLike, catalog: Union[StepCatalog, PathLike]) -> Dataset:
    if not isinstance(catalog, StepCatalog):
        catalog = read_catalog(catalog)
    return Dataset(catalog, list(iter_dataset(path)))
