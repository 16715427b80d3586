from __future__ import annotations

import json

import numpy as np
import pytest
from conftest import make_catalog, video_from_runs

from pitrsd.domain import Dataset
from pitrsd.io import read_catalog, read_dataset, video_to_line, write_catalog, write_dataset
from pitrsd.synth import pituitary_catalog


def test_catalog_round_trip(tmp_path):
    c = pituitary_catalog()
    write_catalog(c, tmp_path / "c.json")
    assert read_catalog(tmp_path / "c.json") == c


def test_dataset_round_trip_preserves_features_exactly(tmp_path, feature_dataset):
    write_dataset(feature_dataset.videos[:3], tmp_path / "d.jsonl", feature_digits=17)
    write_catalog(feature_dataset.catalog, tmp_path / "c.json")
    back = read_dataset(tmp_path / "d.jsonl", tmp_path / "c.json")
    for a, b in zip(feature_dataset.videos[:3], back):
        assert a.video_id == b.video_id and a.duration_s == b.duration_s
        assert np.array_equal(a.step_ids, b.step_ids)
        assert a.instruments == b.instruments
        assert np.array_equal(a.features, b.features)
        assert a.tags == b.tags


def test_nine_digit_features_round_trip_to_nine_digits(tmp_path, feature_dataset):
    v = feature_dataset[0]
    write_dataset([v], tmp_path / "d.jsonl")
    back = read_dataset(tmp_path / "d.jsonl", feature_dataset.catalog)[0]
    np.testing.assert_allclose(back.features, v.features, rtol=1e-8, atol=0)


def test_fewer_than_nine_digits_refused(tmp_path, feature_dataset):
    with pytest.raises(ValueError):
        write_dataset([feature_dataset[0]], tmp_path / "d.jsonl", feature_digits=6)


def test_record_fields():
    v = video_from_runs("a", [(0, 2), (1, 1)])
    rec = json.loads(video_to_line(v))
    assert set(rec) >= {"video_id", "duration_s", "frames"}
    assert rec["frames"][2] == {"t_s": 2, "step_id": 1}


def test_serialisation_is_byte_stable(tmp_path, feature_dataset):
    write_dataset(feature_dataset.videos, tmp_path / "a.jsonl")
    write_dataset(feature_dataset.videos, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_read_dataset_accepts_catalog_object(tmp_path):
    c = make_catalog(2)
    write_dataset([video_from_runs("x", [(0, 2), (1, 2)])], tmp_path / "d.jsonl")
    d = read_dataset(tmp_path / "d.jsonl", c)
    assert isinstance(d, Dataset) and d.video_ids == ["x"]
