"""Command-line surface: one subcommand per pipeline stage.

Stages communicate only through files, so any stage can be rerun from
the serialized outputs of the previous one: simulate -> preprocess /
represent -> train -> evaluate -> report. All outputs are deterministic
for a given config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .errors import OscibpError, InsufficientDataError, InvalidConfigurationError
from .evaluation import (
    EvaluationReport,
    aggregate_runs,
    bland_altman,
    bland_altman_to_csv,
    format_report,
    report_to_json,
    reports_to_csv,
)
from .grid import build_grid, grid_from_csv, grid_to_csv
from .model import save_model
from .signal_prep import preprocess_record
from .synthetic import generate_cohort
from .trainer import LabeledGrid, run_experiment

VARIANT_LSTM_LAYERS = {"cnn": 0, "cnn_lstm1": 1, "cnn_lstm2": 2}

PULSE_HEADER = ("subject_id,record_id,peak_index,start_index,end_index,"
                "peak_amp,trough_amp,pulse_amp,duration_s,is_outlier")
QC_HEADER = "subject_id,record_id,n_peaks,n_pulses,n_outliers,status"


def _load_config(args) -> fileio.RunConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = fileio.parse_run_config(fh.read())
    else:
        cfg = fileio.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_master_seed(args.seed)
    cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_paths(args) -> list[Path]:
    paths = sorted(Path(args.in_dir).glob("*.rec"))
    if not paths:
        raise InsufficientDataError(f"no .rec files under {args.in_dir}")
    return paths


def _preprocessed(path, cfg):
    record = fileio.parse_record(path, cfg.signal.working_rate_hz)
    omw, pulses, peaks = preprocess_record(
        record, hp_cutoff=cfg.signal.hp_cutoff_hz,
        lp_cutoff=cfg.signal.lp_cutoff_hz, window_s=cfg.signal.window_s)
    return record, omw, pulses, peaks


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    cohort = generate_cohort(cfg.cohort)
    for record, _ in cohort:
        fileio.write_record(record, out / f"{record.subject_id}_{record.record_id}.rec")
    (out / "truth.csv").write_text(fileio.truth_to_csv(cohort))
    print(f"simulate: wrote {len(cohort)} records and truth.csv to {out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    pulse_lines = [PULSE_HEADER]
    qc_lines = [QC_HEADER]
    for path in _record_paths(args):
        try:
            record, omw, pulses, peaks = _preprocessed(path, cfg)
        except OscibpError as err:
            sid, rid = path.stem.split("_", 1) if "_" in path.stem else (path.stem, "")
            qc_lines.append(f"{sid},{rid},0,0,0,{type(err).__name__}")
            continue
        n_out = sum(p.is_outlier for p in pulses)
        qc_lines.append(f"{record.subject_id},{record.record_id},"
                        f"{len(peaks)},{len(pulses)},{n_out},ok")
        for p in pulses:
            pulse_lines.append(
                f"{record.subject_id},{record.record_id},{p.peak_index},"
                f"{p.start_index},{p.end_index},{p.peak_amp!r},{p.trough_amp!r},"
                f"{p.pulse_amp!r},{p.duration!r},{str(p.is_outlier).lower()}")
    (out / "pulses.csv").write_text("\n".join(pulse_lines) + "\n")
    (out / "qc.csv").write_text("\n".join(qc_lines) + "\n")
    print(f"preprocess: wrote pulse table and QC summary for "
          f"{len(qc_lines) - 1} records to {out}")
    return 0


def cmd_represent(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    written = 0
    for path in _record_paths(args):
        try:
            record, omw, pulses, _ = _preprocessed(path, cfg)
            grid = build_grid(pulses, omw.slow_component,
                              pressure_range=cfg.grid.pressure_range,
                              n_rows=cfg.grid.n_rows,
                              clamp_extrapolation=cfg.grid.clamp_extrapolation,
                              subject_id=record.subject_id,
                              record_id=record.record_id)
        except OscibpError as err:
            print(f"represent: skipping {path.name}: {err}", file=sys.stderr)
            continue
        name = f"{record.subject_id}_{record.record_id}_grid.csv"
        (out / name).write_text(grid_to_csv(grid))
        written += 1
    if written == 0:
        raise InsufficientDataError("no record produced a grid")
    truth = Path(args.in_dir) / "truth.csv"
    if truth.exists():
        # pass labels through so the training stage needs only this directory
        (out / "truth.csv").write_bytes(truth.read_bytes())
    print(f"represent: wrote {written} grids to {out}")
    return 0


def _load_dataset(in_dir: Path, expected_size: int) -> list[LabeledGrid]:
    truth_path = in_dir / "truth.csv"
    if not truth_path.exists():
        raise InsufficientDataError(f"missing {truth_path}")
    labels = fileio.truth_from_csv(truth_path.read_text())
    grids = sorted(in_dir.glob("*_grid.csv"))
    if not grids:
        raise InsufficientDataError(f"no *_grid.csv files under {in_dir}")
    dataset = []
    for path in grids:
        grid = grid_from_csv(path.read_text())
        key = (grid.subject_id, grid.record_id)
        if key not in labels:
            raise InsufficientDataError(f"{path.name}: no truth row for {key}")
        if grid.values.shape != (expected_size, expected_size):
            raise InvalidConfigurationError(
                f"{path.name}: grid is {grid.values.shape}, model expects "
                f"({expected_size}, {expected_size})")
        sbp, dbp = labels[key]
        dataset.append(LabeledGrid(grid.subject_id, grid.record_id,
                                   grid.values, sbp, dbp))
    return dataset


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    model_config = cfg.model
    if args.variant:
        model_config = replace(model_config,
                               lstm_layers=VARIANT_LSTM_LAYERS[args.variant])
    dataset = _load_dataset(Path(args.in_dir), model_config.grid_size)
    targets = {"sbp": ("SBP",), "dbp": ("DBP",), "both": ("SBP", "DBP")}[args.target]
    rows = []
    for target in targets:
        tc = replace(cfg.training, target=target)

        def on_fold(run, fold, model, history, _target=target):
            stem = f"{_target.lower()}_run{run}_fold{fold.fold_id}"
            (out / f"history_{stem}.csv").write_text(fileio.history_to_csv(history))
            save_model(model, out / f"model_{stem}.ckpt", target=_target)

        rows.extend(run_experiment(dataset, model_config, tc,
                                   n_runs=cfg.n_runs, on_fold=on_fold))
    (out / "predictions.csv").write_text(fileio.predictions_to_csv(rows))
    print(f"train: wrote {len(rows)} predictions over {cfg.n_runs} run(s) to {out}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    pred_path = Path(args.in_dir) / "predictions.csv"
    if not pred_path.exists():
        raise InsufficientDataError(f"missing {pred_path}")
    rows = fileio.predictions_from_csv(pred_path.read_text())
    if not rows:
        raise InsufficientDataError("prediction table has no rows")
    n_runs = max(r.run for r in rows) + 1
    reports = aggregate_runs(rows, n_runs)
    (out / "report.json").write_text(report_to_json(reports))
    (out / "report.csv").write_text(reports_to_csv(reports))
    for target in sorted(reports):
        pairs = [r for r in rows if r.target == target]
        table = bland_altman([r.prediction for r in pairs],
                             [r.reference for r in pairs])
        (out / f"bland_altman_{target.lower()}.csv").write_text(
            bland_altman_to_csv(table))
    print(f"evaluate: wrote report.json, report.csv, and "
          f"{len(reports)} agreement table(s) to {out}")
    return 0


def cmd_report(args) -> int:
    report_path = Path(args.in_dir) / "report.json"
    if not report_path.exists():
        raise InsufficientDataError(f"missing {report_path}")
    payload = json.loads(report_path.read_text())
    reports = {t: EvaluationReport(**v) for t, v in payload.items()}
    for r in reports.values():
        r.validate()
    text = format_report(reports)
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "summary.txt").write_text(text)
    return 0


def _add_common(p, config=True, seed=True, out=True, in_dir=False):
    if config:
        p.add_argument("--config", help="run configuration file (key=value lines)")
    if seed:
        p.add_argument("--seed", type=int,
                       help="master seed; propagates into every seeded stage")
    if in_dir:
        p.add_argument("--in", dest="in_dir", required=True,
                       help="directory holding the previous stage's outputs")
    if out:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oscibp",
        description="Oscillometric blood pressure estimation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labeled cohort")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="extract pulses and QC counts")
    _add_common(p, seed=False, in_dir=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("represent", help="build pressure-indexed pulse grids")
    _add_common(p, seed=False, in_dir=True)
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("train", help="run the leave-one-subject-out protocol")
    _add_common(p, in_dir=True)
    p.add_argument("--target", choices=("sbp", "dbp", "both"), default="both")
    p.add_argument("--variant", choices=sorted(VARIANT_LSTM_LAYERS),
                   help="architecture variant; default keeps the configured depth")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="grade predictions against standards")
    _add_common(p, config=False, seed=False, in_dir=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a human-readable summary")
    _add_common(p, config=False, seed=False, out=False, in_dir=True)
    p.add_argument("--out", help="also write summary.txt here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OscibpError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
