from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pitrsd.domain import AnnotatedVideo, Dataset, Step, StepCatalog  # noqa: E402


def make_catalog(n: int = 3, order=None) -> StepCatalog:
    steps = [Step(i, f"s{i}", True, False) for i in range(n)]
    return StepCatalog(tuple(steps), tuple(order if order is not None else range(n)))


def video_from_runs(video_id: str, runs, features=None, instruments=None, tags=()) -> AnnotatedVideo:
    """Build a 1 Hz video from (step_id, seconds) runs."""
    steps = np.concatenate([np.full(n, s) for s, n in runs]) if runs else np.zeros(0, dtype=int)
    n = len(steps)
    return AnnotatedVideo(video_id, n, np.arange(n), steps, instruments, features, frozenset(tags))


@pytest.fixture
def abc_catalog():
    return make_catalog(3)


@pytest.fixture
def small_dataset(abc_catalog):
    vids = [
        video_from_runs("v0", [(0, 60), (1, 120), (2, 60)]),
        video_from_runs("v1", [(0, 90), (1, 60), (2, 30)]),
        video_from_runs("v2", [(0, 30), (2, 30), (1, 60), (2, 120)]),
    ]
    return Dataset(abc_catalog, vids)


@pytest.fixture(scope="session")
def feature_dataset():
    """Twelve short synthetic surgeries with features and instrument labels."""
    from pitrsd.synth import GeneratorConfig, generate_dataset

    cfg = GeneratorConfig(median_duration_min=12.0, iqr_min=(10.0, 15.0), with_instruments=True,
                          feature_dim=6, duration_scale=0.2, seed=11)
    return generate_dataset(cfg, 12, features=True)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; returns the verdict for asserting."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        results[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
