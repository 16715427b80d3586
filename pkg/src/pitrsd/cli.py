"""Command-line entry point: generate, train, predict, evaluate, benchmark, gradcheck.

Every run writes into its own directory under ``--out`` together with the
effective configuration (file values overlaid by flags).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as rc
from .domain import Dataset, split_dataset
from .evaluation import compare_methods, read_trajectory_csv, write_trajectory_csv
from .io import read_dataset, write_catalog, write_dataset
from .predictors import STAT_METHODS, Predictor, fit_stat_predictor
from .synth import duration_summary, generate_dataset, generator_config_from_mapping, pit33_config, pit88_config

log = logging.getLogger("pitrsd")


class CliError(Exception):
    """A failure with a message meant for the user; exits with status 1."""


# -- run directory and config -----------------------------------------------------

def make_run_dir(out: str, command: str, run_name: Optional[str]) -> Path:
    base = Path(out)
    if run_name:
        d = base / run_name
        if d.exists():
            raise CliError(f"run directory {d} already exists")
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        d = base / f"{command}-{stamp}"
        n = 1
        while d.exists():
            d = base / f"{command}-{stamp}-{n}"
            n += 1
    try:
        d.mkdir(parents=True)
    except OSError as e:
        raise CliError(f"cannot create run directory {d}: {e.strerror or e}") from e
    return d


def _catalog_path(data: str, catalog: Optional[str]) -> Path:
    p = Path(catalog) if catalog else Path(data).with_name("catalog.json")
    if not p.is_file():
        raise CliError(f"catalog file {p} not found (pass --catalog)")
    return p


def _load(data: str, catalog: Optional[str]) -> Dataset:
    if not Path(data).is_file():
        raise CliError(f"dataset file {data} not found")
    return read_dataset(data, _catalog_path(data, catalog))


def _svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "pitrsd"
    return plt


# -- generate ---------------------------------------------------------------------

def cmd_generate(args, cp, run: Path) -> int:
    if args.n is not None and args.n < 1:
        raise CliError("--n must be >= 1")
    rc.apply_overrides(cp, "generator", {"seed": args.seed, "feature_dim": args.feature_dim,
                                         "feature_noise_sigma": args.noise,
                                         "with_instruments": True if args.instruments else None})
    rc.apply_overrides(cp, "run", {"n": args.n, "preset": args.preset,
                                   "features": True if args.features else None})
    runsec = rc.section(cp, "run")
    n = int(runsec.get("n", 88))
    if n < 1:
        raise CliError("n must be >= 1")
    preset = runsec.get("preset", "pit88")
    base = {"pit88": pit88_config, "pit33": pit33_config}.get(preset)
    if base is None:
        raise CliError(f"unknown preset {preset!r}; choose pit88 or pit33")
    gen = generator_config_from_mapping(rc.section(cp, "generator"), base())
    ds = generate_dataset(gen, n, features=rc.as_bool(runsec.get("features", "false")))
    write_dataset(ds.videos, run / "dataset.jsonl", feature_digits=args.feature_digits)
    write_catalog(ds.catalog, run / "catalog.json")
    summary = duration_summary([v.duration_s for v in ds])
    (run / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {n} videos to {run / 'dataset.jsonl'}")
    print(f"duration median {summary['median_min']:.1f} min, IQR ({summary['q1_min']:.1f}, "
          f"{summary['q3_min']:.1f}) min; calibration target {gen.median_duration_min:g} and "
          f"({gen.iqr_min[0]:g}, {gen.iqr_min[1]:g}) min")
    return 0


# -- train ------------------------------------------------------------------------

def _model_overrides(args) -> dict:
    return {"mode": args.mode, "hidden_size": args.hidden_size, "context_window": args.context_window,
            "frame_stride": args.frame_stride, "class_weights": args.class_weights,
            "teacher_forcing": True if args.teacher_forcing else None, "seed": args.seed}


def _train_overrides(args) -> dict:
    return {"epochs_phase1": args.epochs_phase1, "epochs_phase2": args.epochs_phase2,
            "lr_phase1": args.lr_phase1, "lr_phase2": args.lr_phase2, "seed": args.seed}


def _split_parts(cp, ds: Dataset, split: Optional[str], split_seed: Optional[int]):
    rc.apply_overrides(cp, "eval", {"split": split, "split_seed": split_seed})
    ev = rc.section(cp, "eval")
    spec = rc.parse_split(ev.get("split", "auto"), len(ds), int(ev.get("split_seed", 0)))
    return split_dataset(ds, spec)


def fit_temporal(cp, train_set: Dataset, val_set: Optional[Dataset]):
    from .temporal.training import inverse_frequency_weights, train

    msec = rc.section(cp, "model")
    if not train_set.has_features:
        raise CliError("training needs a dataset with feature vectors (generate --features)")
    weights = rc.parse_class_weights(msec.get("class_weights"))
    stride = int(msec.get("frame_stride", 1))
    if weights == "auto":
        weights = inverse_frequency_weights(train_set, stride)
    try:
        mcfg = rc.model_config_from_mapping(msec, train_set[0].feature_dim, train_set.catalog.num_steps,
                                            train_set.num_instruments(), weights)
        tcfg = rc.train_config_from_mapping(rc.section(cp, "train"))
    except (KeyError, ValueError) as e:
        raise CliError(f"invalid model/train configuration: {e}") from e
    return train(mcfg, tcfg, train_set, val_set)


def plot_history(hist, path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ep = [r.epoch for r in hist.records]
    ax.plot(ep, hist.train_losses, label="train")
    if np.isfinite(hist.val_losses).any():
        ax.plot(ep, hist.val_losses, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("composite loss")
    ax.legend()
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


def cmd_train(args, cp, run: Path) -> int:
    rc.apply_overrides(cp, "model", _model_overrides(args))
    rc.apply_overrides(cp, "train", _train_overrides(args))
    ds = _load(args.data, args.catalog)
    if args.val_data:
        train_set, val_set = ds, _load(args.val_data, args.catalog)
    elif args.split or cp.has_option("eval", "split"):
        train_set, val_set, _ = _split_parts(cp, ds, args.split, args.split_seed)
    else:
        train_set, val_set = ds, None
    model, hist = fit_temporal(cp, train_set, val_set)
    model.save(run / "model.npz")
    hist.write_csv(run / "history.csv")
    plot_history(hist, run / "loss_curve.svg")
    last = hist.records[-1]
    print(f"trained {model.cfg.mode} on {len(train_set)} videos; final train loss {last.train_loss:.4f}, "
          f"val loss {last.val_loss:.4f}; model at {run / 'model.npz'}")
    return 0


# -- predict ----------------------------------------------------------------------

def build_predictor(method: str, train_set: Optional[Dataset], model_path: Optional[str], k: int) -> Predictor:
    if method in STAT_METHODS or method == "seqmatch":
        if train_set is None:
            raise CliError(f"{method} is fitted on training videos; pass --train-data or --split")
        try:
            return fit_stat_predictor(method, train_set, k)
        except ValueError as e:
            raise CliError(str(e)) from e
    if method == "model":
        from .temporal.inference import TemporalPredictor
        from .temporal.model import TemporalModel

        if not model_path:
            raise CliError("--method model needs --model PATH")
        if not Path(model_path).is_file():
            raise CliError(f"model file {model_path} not found")
        return TemporalPredictor(TemporalModel.load(model_path))
    raise CliError(f"unknown method {method!r}; choose from {STAT_METHODS + ('model',)}")


def predict_tracks(p: Predictor, videos: Dataset, stream: bool):
    tracks = []
    for v in videos:
        try:
            p.check_video(v)
        except ValueError as e:
            raise CliError(f"{p.name} cannot run on this dataset: {e}") from e
        if stream:
            from .evaluation import PredictionTrack

            preds = list(p.stream(v.frames))
            steps = np.array([x.step_id for x in preds], dtype=np.int64) if p.predicts_steps else None
            tracks.append(PredictionTrack(v.video_id, np.array([x.rsd_s for x in preds]) / 60.0,
                                          v.gt_rsd_s() / 60.0, steps, v.step_ids, v.t_s))
        else:
            tracks.append(p.predict_video(v))
    return tracks


def cmd_predict(args, cp, run: Path) -> int:
    rc.apply_overrides(cp, "eval", {"k": args.k})
    k = int(rc.section(cp, "eval").get("k", 3))
    ds = _load(args.data, args.catalog)
    if args.split or cp.has_option("eval", "split"):
        train_set, _, test_set = _split_parts(cp, ds, args.split, args.split_seed)
    else:
        train_set = _load(args.train_data, args.catalog) if args.train_data else None
        test_set = ds
    p = build_predictor(args.method, train_set, args.model, k)
    tracks = predict_tracks(p, test_set, args.stream)
    out = run / "trajectories"
    out.mkdir()
    for t in tracks:
        write_trajectory_csv(t, out / f"{t.video_id}.csv")
        if args.downsample:
            (run / "trajectories_1min").mkdir(exist_ok=True)
            write_trajectory_csv(t, run / "trajectories_1min" / f"{t.video_id}.csv", every_s=60)
    print(f"{p.name}: wrote {len(tracks)} trajectories to {out}")
    return 0


# -- evaluate ---------------------------------------------------------------------

def _parse_named(items: Sequence[str], what: str) -> dict[str, str]:
    named = {}
    for it in items:
        name, sep, path = it.partition("=")
        if not sep or not name or not path:
            raise CliError(f"{what} must look like NAME=PATH, got {it!r}")
        if name in named:
            raise CliError(f"duplicate {what} name {name!r}")
        named[name] = path
    return named


def _write_report(report, run: Path) -> None:
    report.write(run, "eval")
    print(report.table(), end="")
    for m, flags in report.benchmark.items():
        verdict = ", ".join(f"{w} {'pass' if ok else 'fail'}" for w, ok in flags.items())
        print(f"clinical benchmark {m}: {verdict}")


def cmd_evaluate(args, cp, run: Path) -> int:
    rc.apply_overrides(cp, "eval", {"alpha": args.alpha})
    alpha = float(rc.section(cp, "eval").get("alpha", 0.05))
    tracks = {}
    for name, d in _parse_named(args.pred, "--pred").items():
        files = sorted(Path(d).glob("*.csv"))
        if not files:
            raise CliError(f"no trajectory CSV files in {d}")
        tracks[name] = [read_trajectory_csv(f) for f in files]
    try:
        report = compare_methods(tracks, alpha)
    except ValueError as e:
        raise CliError(str(e)) from e
    _write_report(report, run)
    return 0


# -- benchmark --------------------------------------------------------------------

def plot_trajectories(tracks: dict, video_id: str, path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    first = None
    for name, ts in tracks.items():
        t = next(x for x in ts if x.video_id == video_id)
        first = first or t
        sel = ((t.t_s + 1) % 60 == 0) | (np.arange(len(t)) == 0)
        ax.plot((t.t_s[sel] + 1) / 60.0, t.pred_rsd_min[sel], label=name)
    sel = ((first.t_s + 1) % 60 == 0) | (np.arange(len(first)) == 0)
    ax.plot((first.t_s[sel] + 1) / 60.0, first.gt_rsd_min[sel], "k--", label="ground truth")
    ax.set_xlabel("elapsed time (min)")
    ax.set_ylabel("remaining duration (min)")
    ax.set_title(video_id)
    ax.legend()
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


def cmd_benchmark(args, cp, run: Path) -> int:
    rc.apply_overrides(cp, "eval", {"methods": args.methods, "k": args.k, "alpha": args.alpha,
                                    "plot_videos": args.plot_videos})
    ev = rc.section(cp, "eval")
    methods = [m.strip() for m in ev.get("methods", "naive,step_inferred,seqmatch_s").split(",") if m.strip()]
    models = _parse_named(args.model or [], "--model")
    if len(methods) + len(models) < 2:
        raise CliError("benchmark needs at least two methods")
    ds = _load(args.data, args.catalog)
    train_set, val_set, test_set = _split_parts(cp, ds, args.split, args.split_seed)
    k = int(ev.get("k", 3))
    tracks = {}
    for m in methods:
        try:
            p = build_predictor(m, train_set, None, k)
            tracks[p.name] = predict_tracks(p, test_set, stream=False)
        except (CliError, ValueError) as e:
            raise CliError(f"method {m} failed: {e}") from e
    for name, path in models.items():
        try:
            p = build_predictor("model", None, path, k)
            tracks[name] = predict_tracks(p, test_set, stream=False)
        except (CliError, ValueError) as e:
            raise CliError(f"method {name} failed: {e}") from e
    report = compare_methods(tracks, float(ev.get("alpha", 0.05)))
    _write_report(report, run)
    n_plots = int(ev.get("plot_videos", 3))
    if n_plots:
        (run / "plots").mkdir()
        for vid in report.video_ids[:n_plots]:
            plot_trajectories(tracks, vid, run / "plots" / f"{vid}.svg")
    return 0


# -- gradcheck --------------------------------------------------------------------

def cmd_gradcheck(args, cp, run: Path) -> int:
    from .temporal.gradcheck import gradient_check, tiny_problem
    from .temporal.model import MODES

    modes = MODES if args.mode == "all" else (args.mode,)
    seed = args.seed or 0
    rows, ok = [], True
    for mode in modes:
        m, inputs, tgt = tiny_problem(mode, n_frames=args.frames, seed=seed)
        r = gradient_check(m, inputs, tgt, args.epsilon)
        passed = r.passed(args.tol)
        ok &= passed
        rows.append(f"{mode},{r.max_relative_error:.6e},{int(passed)}")
        print(f"{mode:<22} max relative error {r.max_relative_error:.3e}  {'PASS' if passed else 'FAIL'}")
    (run / "gradcheck.csv").write_text("mode,max_relative_error,passed\n" + "\n".join(rows) + "\n",
                                       encoding="utf-8")
    return 0 if ok else 1


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run], [generator], [model], [train], [eval] sections")
    common.add_argument("--seed", type=int, help="global seed (generator, model init, training order)")
    common.add_argument("--out", default="runs", help="parent directory for run outputs")
    common.add_argument("--run-name", help="run directory name (default: <command>-<timestamp>)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="dataset JSONL file")
    data.add_argument("--catalog", help="catalog JSON (default: catalog.json next to --data)")
    data.add_argument("--split", help="train,val,test counts or 'auto'")
    data.add_argument("--split-seed", type=int)

    p = argparse.ArgumentParser(prog="pitrsd", description="Remaining surgery duration toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--n", type=int, help="number of videos (default 88)")
    g.add_argument("--preset", choices=("pit88", "pit33"))
    g.add_argument("--features", action="store_true", help="attach per-frame feature vectors")
    g.add_argument("--instruments", action="store_true", help="attach instrument labels")
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--noise", type=float, help="feature noise sigma")
    g.add_argument("--feature-digits", type=int, default=9)

    t = sub.add_parser("train", parents=[common, data], help="train the temporal model")
    t.add_argument("--val-data")
    t.add_argument("--mode")
    t.add_argument("--hidden-size", type=int)
    t.add_argument("--context-window", type=int)
    t.add_argument("--frame-stride", type=int)
    t.add_argument("--class-weights", help="auto, none, or comma list")
    t.add_argument("--teacher-forcing", action="store_true")
    t.add_argument("--epochs-phase1", type=int)
    t.add_argument("--epochs-phase2", type=int)
    t.add_argument("--lr-phase1", type=float)
    t.add_argument("--lr-phase2", type=float)

    pr = sub.add_parser("predict", parents=[common, data], help="write per-frame RSD trajectories")
    pr.add_argument("--method", required=True, help=f"one of {', '.join(STAT_METHODS)}, model")
    pr.add_argument("--model", help="trained model file for --method model")
    pr.add_argument("--train-data", help="training videos for statistical methods")
    pr.add_argument("--k", type=int)
    pr.add_argument("--downsample", action="store_true", help="also write one row per minute")
    pr.add_argument("--stream", action="store_true", help="feed frames one at a time through a session")

    e = sub.add_parser("evaluate", parents=[common], help="score trajectory directories")
    e.add_argument("--pred", action="append", required=True, help="NAME=DIR of trajectory CSVs (repeatable)")
    e.add_argument("--alpha", type=float)

    b = sub.add_parser("benchmark", parents=[common, data], help="compare methods on one split")
    b.add_argument("--methods", help="comma list of statistical methods")
    b.add_argument("--model", action="append", help="NAME=PATH of a trained temporal model (repeatable)")
    b.add_argument("--k", type=int)
    b.add_argument("--alpha", type=float)
    b.add_argument("--plot-videos", type=int)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.add_argument("--mode", default="all")
    gc.add_argument("--epsilon", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--frames", type=int, default=6)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "benchmark": cmd_benchmark, "gradcheck": cmd_gradcheck}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "generate" and args.n is not None and args.n < 1:
        parser.error("--n must be >= 1")
    if args.command == "benchmark" and args.methods is not None:
        n = len([m for m in args.methods.split(",") if m.strip()]) + len(args.model or [])
        if n < 2:
            parser.error("benchmark needs at least two methods")
    try:
        cp = rc.load_config(args.config)
        if args.seed is not None:
            rc.apply_overrides(cp, "run", {"seed": args.seed})
        elif cp.has_option("run", "seed"):
            args.seed = cp.getint("run", "seed")  # the file's global seed feeds every section
        run = make_run_dir(args.out, args.command, args.run_name)
        rc.write_config(cp, run / "config.ini")
        status = COMMANDS[args.command](args, cp, run)
        rc.write_config(cp, run / "config.ini")  # now with flag overrides resolved
        return status
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
