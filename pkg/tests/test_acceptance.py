"""Acceptance gate: ten end-to-end criteria, each printing one PASS/FAIL line.

Configurations and seeds below were fixed before any of these results were seen.
"""

from __future__ import annotations

import time

import numpy as np
from conftest import make_catalog, video_from_runs
from oracles import levenshtein_plain_recursion, macro_f1_loops, mean_pop_std, wilcoxon_enumeration

from pitrsd.domain import Dataset, ElapsedState, SplitSpec, split_dataset
from pitrsd.evaluation import (PredictionTrack, aggregate, clinical_benchmark, compare_methods, macro_f1,
                               mae_windows, wilcoxon_signed_rank)
from pitrsd.predictors import fit_stat_predictor
from pitrsd.stats import build_history_index, fit_reference_stats, levenshtein, naive_rsd, sequence_match_rsd
from pitrsd.synth import duration_summary, generate_dataset, pit88_config
from pitrsd.temporal.gradcheck import gradient_check, tiny_problem
from pitrsd.temporal.inference import TemporalPredictor, predict_stream
from pitrsd.temporal.model import MODES, ModelConfig, init_model
from pitrsd.temporal.targets import denormalize_rsd, normalize_rsd
from pitrsd.temporal.training import TrainConfig, inverse_frequency_weights, train

BENCH_SEED = 7


def test_c01_statistical_method_ordering(acceptance):
    t0 = time.perf_counter()
    ds = generate_dataset(pit88_config(seed=BENCH_SEED), 88)
    tr, _, te = split_dataset(ds, SplitSpec(70, 8, 10, BENCH_SEED))
    tracks = {m: fit_stat_predictor(m, tr).predict_dataset(te) for m in ("naive", "step_inferred", "seqmatch_s")}
    s = compare_methods(tracks).summary
    elapsed = time.perf_counter() - t0
    l10 = {m: s[m]["last10"][0] for m in s}
    full = {m: s[m]["full"][0] for m in s}
    ok_l10 = l10["seqmatch_s"] < l10["step_inferred"] < l10["naive"]
    ok_full = full["step_inferred"] < full["naive"]
    ok = ok_l10 and ok_full and elapsed < 120
    detail = (f"last10 seqmatch {l10['seqmatch_s']:.2f} < step_inferred {l10['step_inferred']:.2f} < naive "
              f"{l10['naive']:.2f} [{'ok' if ok_l10 else 'no'}]; full step_inferred {full['step_inferred']:.2f} "
              f"< naive {full['naive']:.2f} [{'ok' if ok_full else 'no'}]; {elapsed:.1f}s")
    assert acceptance(1, ok, detail), detail


def test_c02_context_ablation_direction(acceptance):
    t0 = time.perf_counter()
    ds = generate_dataset(pit88_config(seed=BENCH_SEED, feature_noise_sigma=0.5), 88, features=True)
    tr, va, te = split_dataset(ds, SplitSpec(70, 8, 10, BENCH_SEED))
    stride = 15
    weights = inverse_frequency_weights(tr, stride)
    f1 = {}
    for mode in ("step_rsd", "full_context"):
        cfg = ModelConfig(feature_dim=ds[0].feature_dim, num_steps=ds.catalog.num_steps, mode=mode,
                          frame_stride=stride, class_weights=weights, seed=0)
        model, _ = train(cfg, TrainConfig(), tr, va)
        tracks = TemporalPredictor(model).predict_dataset(te)
        f1[mode] = float(np.mean([macro_f1(t.pred_steps, t.true_steps) for t in tracks]))
    elapsed = time.perf_counter() - t0
    ok_dir = f1["full_context"] >= f1["step_rsd"]
    ok_abs = min(f1.values()) >= 0.9
    ok = ok_dir and ok_abs and elapsed < 600
    detail = (f"macro-F1 full_context {f1['full_context']:.4f} >= step_rsd {f1['step_rsd']:.4f} "
              f"[{'ok' if ok_dir else 'no'}]; both >= 0.9 [{'ok' if ok_abs else 'no'}]; {elapsed:.0f}s")
    assert acceptance(2, ok, detail), detail


def test_c03_gradient_check_all_modes(acceptance):
    t0 = time.perf_counter()
    errs = {}
    for mode in MODES:
        m, inputs, tgt = tiny_problem(mode)
        errs[mode] = gradient_check(m, inputs, tgt, epsilon=1e-5, dtype=np.longdouble).max_relative_error
    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and elapsed < 60
    detail = f"max relative error {errs[worst]:.2e} ({worst}) over {len(MODES)} modes; {elapsed:.1f}s"
    assert acceptance(3, ok, detail), detail


def test_c04_levenshtein_oracle_and_axioms(acceptance):
    rng = np.random.default_rng(404)
    mismatches = 0
    for _ in range(1000):
        a = rng.integers(0, 4, rng.integers(0, 9)).tolist()
        b = rng.integers(0, 4, rng.integers(0, 9)).tolist()
        mismatches += levenshtein(a, b) != levenshtein_plain_recursion(a, b)
    violations = 0
    for _ in range(1000):
        a, b, c = (rng.integers(0, 4, rng.integers(0, 13)).tolist() for _ in range(3))
        dab = levenshtein(a, b)
        violations += not (dab >= 0 and (dab == 0) == (a == b) and dab == levenshtein(b, a)
                           and levenshtein(a, c) <= dab + levenshtein(b, c))
    ok = mismatches == 0 and violations == 0
    detail = f"{mismatches} oracle mismatches / 1000 pairs; {violations} axiom violations / 1000 triples"
    assert acceptance(4, ok, detail), detail


def test_c05_wilcoxon_exactness(acceptance):
    rng = np.random.default_rng(505)
    bad = checked = 0
    while checked < 500:
        n = int(rng.integers(1, 13))
        d = rng.integers(-8, 9, n).astype(float)  # small integers give ties and zeros
        if not d.any():
            continue
        w, p = wilcoxon_enumeration(d.tolist())
        r = wilcoxon_signed_rank(d)
        bad += not (r.method == "exact" and r.p_value == p and r.statistic == w)
        checked += 1
    five = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0]).p_value
    ok = bad == 0 and five == 0.0625
    detail = f"{bad} differences from enumeration over {checked} samples; n=5 all-positive p = {five}"
    assert acceptance(5, ok, detail), detail


def test_c06_reduction_identities(acceptance):
    ds = generate_dataset(pit88_config(seed=BENCH_SEED), 88)
    tr, _, te = split_dataset(ds, SplitSpec(70, 8, 10, BENCH_SEED))
    naive = fit_stat_predictor("naive", tr).predict_dataset(te)
    full_k = fit_stat_predictor("seqmatch_s", tr, k=len(tr)).predict_dataset(te)
    worst = max(float(np.max(np.abs(a.pred_rsd_min - b.pred_rsd_min))) for a, b in zip(naive, full_k))
    # the direct function too, at sampled frames
    stats, idx = fit_reference_stats(tr), build_history_index(tr)
    labels = te[0].step_ids.tolist()
    for t in range(0, len(labels) + 1, 97):
        state = ElapsedState.from_labels(labels[:t])
        worst = max(worst, abs(sequence_match_rsd(state, idx, k=len(idx)) - naive_rsd(state, stats)))
    runs = [(0, 300), (1, 600), (2, 240), (3, 900), (4, 120)]
    seq = Dataset(make_catalog(5), [video_from_runs(f"s{i}", runs) for i in range(4)])
    p = fit_stat_predictor("step_inferred", seq)
    mae = max(float(np.max(np.abs(t.pred_rsd_min - t.gt_rsd_min))) for t in p.predict_dataset(seq))
    ok = worst == 0 and mae == 0
    detail = f"seqmatch(k=|index|) vs naive max difference {worst}; step_inferred max error on sequential data {mae}"
    assert acceptance(6, ok, detail), detail


def test_c07_causality(acceptance):
    ds = generate_dataset(pit88_config(seed=BENCH_SEED), 1, features=True)
    v = ds[0]
    cfg = ModelConfig(v.feature_dim, ds.catalog.num_steps, hidden_size=16, context_window=10, mode="full_context",
                      seed=3)
    m = init_model(cfg)
    frames = list(v.frames)
    full = list(predict_stream(m, frames))
    rng = np.random.default_rng(707)
    bad = 0
    for cut in rng.integers(1, len(frames), 100):
        part = list(predict_stream(m, frames[:cut]))
        bad += not all(a.step_id == b.step_id and a.rsd_minutes == b.rsd_minutes
                       and np.array_equal(a.step_probs, b.step_probs) for a, b in zip(full[:cut], part))
    ok = bad == 0
    detail = f"{bad} of 100 truncation points differ (video of {len(frames)} frames)"
    assert acceptance(7, ok, detail), detail


def test_c08_metric_fidelity(acceptance):
    errs = []
    # hand-worked toy tracks: constant error 4 / windows chosen by ground truth
    t1 = PredictionTrack("toy1", np.array([5.0, 6.0, 7.0]), np.array([3.0, 2.0, 1.0]))
    errs += list(np.subtract(mae_windows(t1), (4.0, 4.0, 4.0)))
    gt = np.array([25.0, 15.0, 8.0, 2.0])
    t2 = PredictionTrack("toy2", gt + np.array([100.0, 10.0, 1.0, 3.0]), gt)
    errs += list(np.subtract(mae_windows(t2), (2.0, 14 / 3, 28.5)))
    vals = [4.12, 7.33, 2.05, 11.9, 5.5, 6.01, 3.14, 9.99, 0.42, 8.08]
    errs += list(np.subtract(aggregate(vals), mean_pop_std(vals)))
    errs.append(aggregate(vals)[0] - 5.854)
    errs.append(macro_f1([1, 1, 1, 1], [0, 0, 1, 1]) - 1 / 3)
    pred, true = [0, 2, 1, 1, 3, 0, 2, 2], [0, 1, 1, 1, 3, 2, 2, 0]
    errs.append(macro_f1(pred, true) - macro_f1_loops(pred, true))
    metric_ok = max(abs(e) for e in errs) <= 1e-9
    # exact on the grid the package produces and wherever float division by 10 is invertible
    secs = np.arange(0, 48 * 3600, dtype=float)
    grid_ok = np.array_equal(denormalize_rsd(normalize_rsd(secs, 10.0), 10.0), secs)
    x = np.random.default_rng(808).uniform(0, 1e4, 200_000)
    y = normalize_rsd(x, 10.0)
    unique = (np.nextafter(x, np.inf) / 10.0 != y) & (np.nextafter(x, -np.inf) / 10.0 != y)
    back = denormalize_rsd(y, 10.0)
    rt_ok = grid_ok and np.array_equal(back[unique], x[unique]) and np.array_equal(normalize_rsd(back, 10.0), y)
    ok = metric_ok and rt_ok
    detail = (f"max metric deviation {max(abs(e) for e in errs):.1e}; factor-10 round trip exact "
              f"[{'ok' if rt_ok else 'no'}] ({int(unique.sum())} invertible random values + whole seconds)")
    assert acceptance(8, ok, detail), detail


def test_c09_generator_calibration(acceptance):
    s = duration_summary([v.duration_s for v in generate_dataset(pit88_config(), 1000)])
    med_ok = abs(s["median_min"] - 64) <= 0.10 * 64
    q1_ok = abs(s["q1_min"] - 53) <= 0.15 * 53
    q3_ok = abs(s["q3_min"] - 84) <= 0.15 * 84
    ok = med_ok and q1_ok and q3_ok
    detail = f"median {s['median_min']:.1f} min (64 ±10%), IQR ({s['q1_min']:.1f}, {s['q3_min']:.1f}) (53, 84 ±15%)"
    assert acceptance(9, ok, detail), detail


def test_c10_clinical_benchmark_gate(acceptance):
    flags = clinical_benchmark((4.08, 6.20, 12.25))
    as_report = clinical_benchmark({"last10": (4.08, 1.0), "last20": (6.20, 1.0), "full": (12.25, 1.0)})
    got = (flags["last10"], flags["last20"], flags["full"])
    ok = got == (True, False, False) and as_report == flags
    detail = "(4.08, 6.20, 12.25) -> " + ", ".join("pass" if f else "fail" for f in got)
    assert acceptance(10, ok, detail), detail
