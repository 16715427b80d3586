from __future__ import annotations

import numpy as np
import pytest
from conftest import make_catalog, video_from_runs
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import edit_distance_all_alignments, levenshtein_recursive

from pitrsd.domain import Dataset, ElapsedState
from pitrsd.stats import (HistoryEntry, HistoryIndex, ReferenceStats, SequenceMatcher, build_history_index,
                          fit_reference_stats, levenshtein, naive_rsd, rle_compress, rle_decompress, rle_labels,
                          sequence_match_rsd, sequence_similarity, step_inferred_rsd)

labels = st.lists(st.integers(0, 4), max_size=12)


def test_reference_stats_means():
    c = make_catalog(2)
    d = Dataset(c, [video_from_runs(f"v{i}", [(0, 600), (1, m * 60 - 600)]) for i, m in enumerate((60, 70, 80))])
    s = fit_reference_stats(d)
    assert s.mean_full_duration_s == 70 * 60
    assert s.step_reference_durations_s[0] == 600


def test_reference_only_over_videos_with_the_step():
    c = make_catalog(3)
    d = Dataset(c, [video_from_runs("a", [(0, 100), (2, 50)]), video_from_runs("b", [(0, 300), (1, 10), (0, 20)])])
    s = fit_reference_stats(d)
    assert s.step_reference_durations_s == {0: 210.0, 1: 10.0, 2: 50.0}
    assert s.global_mean_step_duration_s == pytest.approx(90.0)


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        fit_reference_stats(Dataset(make_catalog(1), []))


@pytest.mark.parametrize("t_el,expected", [(0, 4200), (600, 3600), (5400, 0)])
def test_naive_rsd(t_el, expected):
    stats = ReferenceStats(4200.0, {}, 0.0)
    state = ElapsedState.from_labels([0] * t_el)
    assert naive_rsd(state, stats) == expected


def test_step_inferred_formula():
    stats = ReferenceStats(0.0, {0: 600.0, 1: 1200.0, 2: 1800.0}, 1200.0)
    c = make_catalog(3)
    state = ElapsedState.from_labels([0] * 600 + [1] * 300)
    assert step_inferred_rsd(state, stats, c) == 2700.0
    late = ElapsedState.from_labels([2] * 2000)
    assert step_inferred_rsd(late, stats, c) == 0.0


def test_step_inferred_unknown_step_uses_fallback():
    stats = ReferenceStats(0.0, {0: 100.0, 2: 50.0}, 75.0)
    state = ElapsedState.from_labels([1] * 10)
    assert step_inferred_rsd(state, stats, make_catalog(3)) == 65.0 + 50.0


def test_single_step_workflow_reduces_to_naive():
    c = make_catalog(1)
    d = Dataset(c, [video_from_runs("a", [(0, 300)]), video_from_runs("b", [(0, 500)])])
    s = fit_reference_stats(d)
    for t in range(0, 700, 7):
        state = ElapsedState.from_labels([0] * t)
        assert step_inferred_rsd(state, s, c) == naive_rsd(state, s)


def test_rle_examples():
    assert rle_compress([1, 1, 2, 2, 2, 8, 1]) == [(1, 2), (2, 3), (8, 1), (1, 1)]
    assert rle_compress([]) == []
    assert rle_compress([3]) == [(3, 1)]


@given(labels)
def test_rle_round_trip(seq):
    assert rle_decompress(rle_compress(seq)) == seq
    runs = rle_compress(seq)
    assert all(a[0] != b[0] for a, b in zip(runs, runs[1:]))


def test_levenshtein_examples():
    kitten = [ord(c) for c in "kitten"]
    sitting = [ord(c) for c in "sitting"]
    assert levenshtein(kitten, sitting) == 3
    assert levenshtein([1, 2, 3], [1, 2, 3]) == 0
    assert levenshtein([], [4, 5]) == 2


def test_levenshtein_matches_operation_search():
    rng = np.random.default_rng(0)
    for _ in range(40):
        a = rng.integers(0, 3, rng.integers(0, 4)).tolist()
        b = rng.integers(0, 3, rng.integers(0, 4)).tolist()
        assert levenshtein(a, b) == edit_distance_all_alignments(a, b)


@settings(max_examples=300)
@given(labels, labels)
def test_levenshtein_matches_recursion(a, b):
    assert levenshtein(a, b) == levenshtein_recursive(a, b)


@settings(max_examples=300)
@given(labels, labels, labels)
def test_levenshtein_metric_axioms(a, b, c):
    dab = levenshtein(a, b)
    assert dab >= 0
    assert (dab == 0) == (a == b)
    assert dab == levenshtein(b, a)
    assert levenshtein(a, c) <= dab + levenshtein(b, c)


def _entry(vid, runs, inst_runs=None):
    v = video_from_runs(vid, runs)
    steps = rle_compress(v.step_ids.tolist())
    inst = None if inst_runs is None else rle_compress([frozenset(x) for x, n in inst_runs for _ in range(n)])
    return HistoryEntry(vid, float(v.duration_s), steps, inst)


def test_history_entry_prefix():
    e = _entry("h", [(0, 5), (1, 5), (2, 5)])
    assert e.prefix_labels(0) == []
    assert e.prefix_labels(5) == [0]
    assert e.prefix_labels(6) == [0, 1]
    assert e.prefix_labels(100) == [0, 1, 2]


def test_similarity_zero_for_matching_prefix():
    e = _entry("h", [(0, 5), (1, 5), (2, 5)])
    state = ElapsedState.from_labels([0] * 3 + [1] * 4)
    assert sequence_similarity(state, e) == 0


def test_similarity_disjoint_alphabets_is_minus_max_length():
    e = _entry("h", [(0, 2), (1, 2), (0, 2), (1, 2)])
    state = ElapsedState.from_labels([5, 6, 7])
    assert sequence_similarity(state, e) == -max(3, 3)
    state = ElapsedState.from_labels([5, 6, 5, 6, 5, 6, 5, 6])
    assert sequence_similarity(state, e) == -8


def test_similarity_sums_instrument_term():
    e = _entry("h", [(0, 4)], inst_runs=[({1}, 2), ({2}, 2)])
    state = ElapsedState.from_labels([0] * 4, [frozenset({7})] * 2 + [frozenset({8})] * 2)
    assert sequence_similarity(state, e, use_instruments=False) == 0
    assert sequence_similarity(state, e, use_instruments=True) == -2


def test_similarity_without_instrument_data_rejected():
    e = _entry("h", [(0, 4)])
    state = ElapsedState.from_labels([0] * 4, [frozenset()] * 4)
    with pytest.raises(ValueError):
        sequence_similarity(state, e, use_instruments=True)


def test_sequence_match_two_nearest():
    m = 60
    idx = HistoryIndex((
        _entry("a60", [(0, 20 * m), (1, 40 * m)]),
        _entry("b70", [(0, 20 * m), (1, 50 * m)]),
        _entry("c100", [(2, 20 * m), (3, 80 * m)]),
    ))
    state = ElapsedState.from_labels([0] * (20 * m) + [1] * (10 * m))
    assert sequence_match_rsd(state, idx, k=2) == 35 * m


def test_sequence_match_clamps_at_zero():
    idx = HistoryIndex((_entry("a", [(0, 10)]),))
    assert sequence_match_rsd(ElapsedState.from_labels([0] * 50), idx, k=1) == 0


def test_sequence_match_rejects_empty_index_and_bad_k():
    with pytest.raises(ValueError):
        sequence_match_rsd(ElapsedState.from_labels([0]), HistoryIndex(()), k=1)
    idx = HistoryIndex((_entry("a", [(0, 10)]),))
    with pytest.raises(ValueError):
        sequence_match_rsd(ElapsedState.from_labels([0]), idx, k=0)


def test_tie_break_prefers_comparable_length_then_id():
    # both entries match the prefix exactly; the one whose full length is nearer t_el wins
    idx = HistoryIndex((_entry("z_long", [(0, 100)]), _entry("a_short", [(0, 6)]), _entry("m_long", [(0, 100)])))
    state = ElapsedState.from_labels([0] * 10)
    # prefix gaps: z_long 0, a_short 4, m_long 0 -> m_long and z_long tie, m before z
    assert sequence_match_rsd(state, idx, k=1) == 90.0
    assert sequence_match_rsd(state, idx, k=2) == 90.0
    assert sequence_match_rsd(state, idx, k=3) == pytest.approx((100 + 6 + 100) / 3 - 10)


def _brute_force_rsd(state, entries, k):
    scored = []
    for e in entries:
        hist = [s for s, n in e.compressed_steps for _ in range(n)][:state.t_el_s]
        sim = -levenshtein_recursive(rle_labels(list(state.elapsed_steps)), rle_labels(hist))
        gap = max(0, state.t_el_s - int(e.full_duration_s))
        scored.append((-sim, gap, e.video_id, e.full_duration_s))
    scored.sort()
    top = scored[:k]
    return max(0.0, sum(x[3] for x in top) / len(top) - state.t_el_s)


def test_sequence_match_against_brute_force(small_dataset):
    idx = build_history_index(small_dataset)
    rng = np.random.default_rng(3)
    for _ in range(60):
        n = int(rng.integers(0, 260))
        seq = rng.integers(0, 3, n) if rng.random() < 0.3 else np.repeat(rng.integers(0, 3, 4), 65)[:n]
        state = ElapsedState.from_labels(seq.tolist())
        for k in (1, 2, 3):
            assert sequence_match_rsd(state, idx, k) == pytest.approx(_brute_force_rsd(state, idx.entries, k))


def test_k_equal_index_size_is_naive(small_dataset):
    idx = build_history_index(small_dataset)
    stats = fit_reference_stats(small_dataset)
    for t in range(0, 400, 13):
        state = ElapsedState.from_labels(([1] * 400)[:t])
        assert sequence_match_rsd(state, idx, k=len(idx)) == naive_rsd(state, stats)


def test_incremental_matcher_equals_direct(small_dataset):
    idx = build_history_index(small_dataset)
    for v in small_dataset:
        m = SequenceMatcher(idx, k=2)
        for t, s in enumerate(v.step_ids.tolist()):
            got = m.update(s)
            want = sequence_match_rsd(ElapsedState.from_video(v, t + 1), idx, k=2)
            assert got == want


def test_incremental_matcher_with_instruments(feature_dataset):
    idx = build_history_index(Dataset(feature_dataset.catalog, feature_dataset.videos[:6]))
    v = feature_dataset[7]
    m = SequenceMatcher(idx, k=3, use_instruments=True)
    for t in range(0, v.n_frames):
        got = m.update(int(v.step_ids[t]), v.instruments[t])
        if t % 37 == 0:
            assert got == sequence_match_rsd(ElapsedState.from_video(v, t + 1), idx, 3, use_instruments=True)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=300))
def test_naive_and_seqmatch_non_increasing_and_non_negative(seq):
    c = make_catalog(3)
    d = Dataset(c, [video_from_runs("a", [(0, 100), (1, 50)]), video_from_runs("b", [(2, 80), (1, 40)])])
    stats, idx = fit_reference_stats(d), build_history_index(d)
    prev_n = prev_s = np.inf
    for t in range(0, len(seq) + 1, 10):
        state = ElapsedState.from_labels(seq[:t])
        n = naive_rsd(state, stats)
        assert 0 <= n <= prev_n
        prev_n = n
    # with a fixed neighbour set sequence matching is non-increasing too
    for t in range(0, len(seq) + 1, 10):
        state = ElapsedState.from_labels([0] * t)
        s = sequence_match_rsd(state, idx, k=2)
        assert 0 <= s <= prev_s
        prev_s = s
