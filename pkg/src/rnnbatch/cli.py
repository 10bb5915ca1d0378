"""Command-line entry point: ``rnnbatch <command> ...``.

Exit codes: 0 success, 2 configuration or user error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import RunConfig, load_config
from .data import split_sizes
from .errors import ConfigError, DivergenceError, ParseError
from .gru import GruModel
from .hydro import export_csv, make_dataset
from .metrics import aggregate_seeds, write_trace_csv
from .trainer import fit

log = logging.getLogger("rnnbatch")

SUMMARY_HEADER = ["strategy", "variable", "rmse_mean", "rmse_std", "nse_mean", "nse_std"]
MODEL_RE = re.compile(r"^(RMB|SMB|SSMB|CMB|TF)_(sw|sno|sf)_seed(\d+)\.npz$")


def _csv_list(text: str, conv=str) -> list:
    try:
        return [conv(p.strip()) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def _out_dir(run: RunConfig, override: str | None) -> Path:
    path = Path(override or run.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    return path


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _summary_rows(evaluations) -> list[list]:
    groups: dict[tuple, list] = {}
    for e in evaluations:
        groups.setdefault((e.label, e.variable), []).append(e.report)
    rows = []
    for (name, var), reports in groups.items():
        agg = aggregate_seeds(reports)
        rows.append([name, var, repr(agg["rmse"].mean), repr(agg["rmse"].std),
                     repr(agg["nse"].mean), repr(agg["nse"].std)])
        print(f"{name:10s} {var:4s} RMSE {agg['rmse']}  NSE {agg['nse']}")
    return rows


def _write_eval_outputs(out: Path, evaluations) -> None:
    """Metrics, per-label traces and per-run predictions for a list of evaluations."""
    _write_rows(out / "summary.csv", SUMMARY_HEADER, _summary_rows(evaluations))
    _write_rows(out / "metrics.csv", ["strategy", "variable", "seed", "rmse", "nse"],
                [[e.label, e.variable, e.seed, repr(e.report.rmse), repr(e.report.nse)] for e in evaluations])
    step, daily = {}, {}
    for e in evaluations:
        step.setdefault(e.label, []).append(e.report.avg_step_rmse)
        daily.setdefault(e.label, []).append(e.report.avg_daily_rmse)
    write_trace_csv(out / "avg_step_rmse.csv", "step", {k: np.mean(v, axis=0) for k, v in step.items()})
    write_trace_csv(out / "avg_daily_rmse.csv", "doy", {k: np.mean(v, axis=0) for k, v in daily.items()})
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for e in evaluations:
        e.prediction.write_csv(pred_dir / f"{e.label}_{e.variable}_seed{e.seed}.csv")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    if args.years < 1:
        raise ConfigError(f"--years must be >= 1, got {args.years}")
    ds = make_dataset(args.seed, args.years)
    export_csv(ds, args.out)
    tr, va, te = split_sizes(ds.n_days)
    print(f"wrote {ds.n_days} days ({args.years} years) to {args.out}")
    print(f"split sizes: train {tr}, valid {va}, test {te}")
    return 0


def cmd_train(args) -> int:
    run = load_config(args.config)
    out = _out_dir(run, args.out)
    cfg = run.train
    print(f"training {cfg.strategy} on {cfg.variable}: T={cfg.T} stride={cfg.effective_stride} bs={cfg.bs} "
          f"lr={cfg.lr} seeds={list(cfg.seeds)}")
    splits = ex.load_splits(run)
    models, logs = out / "models", out / "logs"
    models.mkdir(exist_ok=True)
    logs.mkdir(exist_ok=True)
    (models / "config.txt").write_text(run.to_text())

    def save(rec):
        stem = f"{cfg.strategy}_{cfg.variable}_seed{rec.seed}"
        rec.model.save(models / f"{stem}.npz")
        rec.write_log(logs / f"{stem}.csv")

    result = ex.train_and_evaluate(cfg, splits, on_record=save)
    _write_rows(out / "summary.csv", SUMMARY_HEADER, _summary_rows(result.evaluations))
    return 0


def cmd_evaluate(args) -> int:
    models = Path(args.models)
    cfg_path = models / "config.txt"
    if not cfg_path.is_file():
        raise ConfigError(f"{models} has no config.txt; point --models at a directory written by 'train'")
    run = load_config(cfg_path)
    found = sorted(p for p in models.glob("*.npz") if MODEL_RE.match(p.name))
    if not found:
        raise ConfigError(f"no model files (STRATEGY_variable_seedN.npz) in {models}")
    out = _out_dir(run, args.out or str(models.parent / f"eval_{args.split}"))
    cache: dict[str, object] = {}
    evaluations = []
    for path in found:
        strategy, variable, seed = MODEL_RE.match(path.name).groups()
        if variable not in cache:
            cache[variable] = ex.load_splits(run, variable)
        split = getattr(cache[variable], args.split)
        try:
            model = GruModel.load(path)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load model {path}: {exc}") from None
        evaluations += ex.evaluate_model(model, split, strategy, variable, int(seed), run.train.T)
    _write_eval_outputs(out, evaluations)
    print(f"wrote evaluation outputs to {out}")
    return 0


def cmd_sweep(args) -> int:
    run = load_config(args.config)
    sizes = _csv_list(args.years_list, int)
    strategies = _csv_list(args.strategies, str.upper)
    available = split_sizes(run.data_years * 366)[0] // 366
    too_big = [s for s in sizes if s > available or s < 1]
    if too_big:
        raise ConfigError(f"training sizes {too_big} outside 1..{available} available training years")
    out = _out_dir(run, args.out)
    rows = []
    for years in sizes:
        splits = ex.load_splits(run, train_years=years)  # test split is the same for every size
        for strategy in strategies:
            cfg = replace(run.train, strategy=strategy)
            result = ex.train_and_evaluate(cfg, splits)
            for e in result.evaluations:
                rows.append([e.label, years, e.seed, repr(e.report.rmse), repr(e.report.nse)])
                print(f"{years:4d} years {e.label:10s} seed {e.seed}: RMSE {e.report.rmse:.3f}")
    _write_rows(out / "sweep_train_size.csv", ["strategy", "train_years", "seed", "rmse", "nse"], rows)
    return 0


def cmd_timing(args) -> int:
    if args.epochs < 3:
        raise ConfigError("--epochs must be >= 3 (the first epoch is discarded)")
    run = load_config(args.config)
    out = _out_dir(run, args.out)
    strategies = _csv_list(args.strategies, str.upper)
    times = ex.run_timing(run.train, ex.load_splits(run), strategies, args.epochs)
    base = times.get("RMB")
    rows = []
    for s, t in times.items():
        ratio = t / base if base else float("nan")
        rows.append([s, repr(t), repr(ratio)])
        print(f"{s:5s} {t:.4f} s/epoch  ({ratio:.2f}x RMB)")
    _write_rows(out / "timing.csv", ["strategy", "seconds_per_epoch", "ratio_to_rmb"], rows)
    if base and "SSMB" in times:
        print(f"SSMB/RMB ratio: {times['SSMB'] / base:.2f}")
    return 0


def cmd_scif_sensitivity(args) -> int:
    run = load_config(args.config)
    out = _out_dir(run, args.out)
    splits = ex.load_splits(run)
    if args.model:
        try:
            model = GruModel.load(args.model)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load model {args.model}: {exc}") from None
    else:
        cfg = replace(run.train, strategy="CMB", seeds=run.train.seeds[:1])
        model = fit(cfg, splits).model
    inits = _csv_list(args.inits, float) if args.inits else None
    report = ex.run_scif_sensitivity(model, splits, inits, args.tol, run.train.T)
    report.write_csv(out / "scif_trajectories.csv", out / "scif_merge.csv")
    worst = report.worst_merge_step
    print(f"inits {report.inits}")
    print("worst merge step: " + ("never within the split" if worst is None else str(worst)))
    return 0


def cmd_compare_tf(args) -> int:
    run = load_config(args.config)
    out = _out_dir(run, args.out)
    splits = ex.load_splits(run)
    evaluations = []
    for strategy in ("CMB", "TF"):
        evaluations += ex.train_and_evaluate(replace(run.train, strategy=strategy), splits).evaluations
    _write_rows(out / "compare_tf.csv", SUMMARY_HEADER, _summary_rows(evaluations))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rnnbatch", description="Mini-batch strategies for stateful RNNs on "
                                "synthetic watershed data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--years", type=int, default=200)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def with_config(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="key = value run configuration")
        s.add_argument("--out", help="output directory (default: eval.out_dir)")
        s.set_defaults(func=func)
        return s

    with_config("train", cmd_train, "train all seeds of one strategy and score the test split")
    e = sub.add_parser("evaluate", help="score saved models")
    e.add_argument("--models", required=True, help="models directory written by 'train'")
    e.add_argument("--split", choices=("train", "valid", "test"), default="test")
    e.add_argument("--out", help="output directory (default: <models>/../eval_<split>)")
    e.set_defaults(func=cmd_evaluate)

    s = with_config("sweep-train-size", cmd_sweep, "test RMSE against training-set size")
    s.add_argument("--years-list", default="5,10,20,40,80,160")
    s.add_argument("--strategies", default="RMB,SSMB,CMB")
    t = with_config("timing", cmd_timing, "seconds per training epoch for each strategy")
    t.add_argument("--epochs", type=int, default=6)
    t.add_argument("--strategies", default="RMB,SMB,SSMB,CMB")
    c = with_config("scif-sensitivity", cmd_scif_sensitivity, "SCIF predictions from several initial values")
    c.add_argument("--model", help="trained CMB model (.npz); trained from the config when omitted")
    c.add_argument("--inits", help="comma-separated initial values in target units "
                   "(default: 0, train mean, min, mid, max)")
    c.add_argument("--tol", type=float, default=1e-3, help="merge tolerance in normalized units")
    with_config("compare-tf", cmd_compare_tf, "teacher forcing against CMB-SCIF")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)  # message carries strategy/seed/epoch/batch
        return 3


if __name__ == "__main__":
    sys.exit(main())
