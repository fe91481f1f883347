"""Command-line entry point: ``slmctl <command> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cosim
from .datagen import all_cases
from .dynamics import DynModel, build_samples, evaluate, unique_samples
from .harness import (
    ExperimentConfig,
    RunReport,
    emit_plotdata,
    generate_campaign,
    pool_samples,
    report_from_csv,
    rollout_check,
    run_closed_loop,
    run_open_loop,
    train_from_samples,
)
from .logs import read_log, write_log

log = logging.getLogger("slmctl")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _read_logs(log_dir: Path) -> dict:
    files = sorted(log_dir.glob("case_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise SystemExit(f"no case_*.csv logs in {log_dir}; run 'slmctl datagen' first")
    return {int(p.stem.split("_")[1]): read_log(p) for p in files}


def cmd_datagen(args, cfg: ExperimentConfig, out: Path) -> int:
    (out / "plans").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    for i, plan in enumerate(all_cases(cfg.cases), start=1):
        (out / "plans" / f"case_{i}.json").write_text(plan.dumps() + "\n")
    logs = generate_campaign(cfg)
    for i, records in logs.items():
        write_log(records, out / "logs" / f"case_{i}.csv")
    _write_json(out / "config.json", cfg.to_dict())
    print(f"wrote {len(logs)} plans and logs ({sum(map(len, logs.values()))} records) to {out}")
    return 0


def cmd_train(args, cfg: ExperimentConfig, out: Path) -> int:
    logs = _read_logs(Path(args.logs) if args.logs else out / "logs")
    samples = pool_samples(logs, cfg.train)
    period = logs[min(logs)][1].time - logs[min(logs)][0].time
    res = train_from_samples(samples, cfg, period)
    out.mkdir(parents=True, exist_ok=True)
    res.model.save(out / "model.json")
    summary = {"pool_size": len(samples), **res.summary()}
    _write_json(out / "train_summary.json", summary)
    if res.validation:
        report = RunReport([], {}, cfg.to_dict(), scatter=(res.metrics["predicted"], res.metrics["actual"]))
        emit_plotdata(report, "scatter", out / "plotdata")
    print(json.dumps(summary, indent=1, default=_jsonable))
    return 0


def cmd_validate(args, cfg: ExperimentConfig, out: Path) -> int:
    model = DynModel.load(args.model or out / "model.json")
    logs = _read_logs(Path(args.logs) if args.logs else out / "logs")
    samples = [s for k in sorted(logs) for s in build_samples(logs[k], cfg.train.include_transitions)]
    if cfg.train.unique:
        samples = unique_samples(samples)
    ev = evaluate(model, samples)
    roll = rollout_check(model, logs[2]) if 2 in logs else None
    doc = {"pool": {k: ev[k] for k in ("n", "r2", "mae_pct", "rmse")}}
    if roll is not None:
        doc["case2_rollout_mae_pct"] = roll["mae_pct"]
        lines = ["# time_ms actual_mm2 rollout_mm2"] + [
            f"{t * 1e3:.17g} {a:.17g} {p:.17g}" for t, a, p in zip(roll["time"], roll["actual"], roll["predicted"])
        ]
        (out / "plotdata").mkdir(parents=True, exist_ok=True)
        (out / "plotdata" / "case2_rollout.dat").write_text("\n".join(lines) + "\n")
    _write_json(out / "validation.json", doc)
    print(json.dumps(doc, indent=1))
    return 0


def _finish_run(report: RunReport, out: Path, name: str) -> int:
    _write_json(out / f"{name}_report.json", report.summary())
    emit_plotdata(report, ("area", "power", "temp"), out / "plotdata", prefix=f"{name}_")
    print(json.dumps({"csv": report.csv_path, "metrics": report.metrics, "timing": report.timing}, indent=1, default=_jsonable))
    return 1 if report.error else 0


def cmd_simulate(args, cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    report = run_open_loop(cfg, args.power, out / "open_loop.csv")
    return _finish_run(report, out, "open_loop")


def cmd_control(args, cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    model = DynModel.load(args.model or out / "model.json")
    report = run_closed_loop(cfg.test.plan(), model, cfg, out / "closed_loop.csv", include_timing=args.timing)
    # wall-clock timings stay out of the CSV by default so repeated runs are byte-identical
    _write_json(out / "closed_loop_timing.json", {"solve_time_s": report.solve_times, **report.timing})
    return _finish_run(report, out, "closed_loop")


def cmd_metrics(args, cfg: ExperimentConfig, out: Path) -> int:
    x_ref = args.x_ref if args.x_ref is not None else cfg.mpc.x_ref
    print(json.dumps(report_from_csv(args.csv, x_ref, cfg.startup_window), indent=1, default=_jsonable))
    return 0


def cmd_cosim(args, cfg: ExperimentConfig, out: Path) -> int:
    model = DynModel.load(args.model or out / "model.json")
    mpc_cfg = cfg.mpc if cfg.mpc.control_speed else replace(cfg.mpc, speed=cfg.test.speed)
    if args.replay:
        session = cosim.CosimSession(model, mpc_cfg)
        records = read_log(args.replay)
        replies = cosim.replay(records, session)
        mismatched = sum(1 for r, m in zip(records, replies) if m.get("p") != r.power)
        print(json.dumps({"steps": len(replies), "mismatched": mismatched, "config_hash": session.hash}))
        return 1 if mismatched else 0
    if args.port is not None:
        summaries = cosim.serve_tcp(args.host, args.port, model, mpc_cfg, args.sessions)
        print(json.dumps([s.to_dict() for s in summaries]), file=sys.stderr)
        return 0
    summary = cosim.serve_stream(sys.stdin, sys.stdout, model, mpc_cfg)
    print(json.dumps(summary.to_dict()), file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    def globals_(parser, defaults):
        # subcommand copies use SUPPRESS so they do not overwrite values given before the command
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        parser.add_argument("--config", default=d(None), help="experiment config JSON")
        parser.add_argument("--seed", type=int, default=d(None), help="override the experiment seed")
        parser.add_argument("--out", default=d("out"), help="output directory (default: out)")
        parser.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return parser

    common = globals_(argparse.ArgumentParser(add_help=False), defaults=False)
    p = globals_(argparse.ArgumentParser(prog="slmctl", description=__doc__), defaults=True)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("datagen", parents=[common], help="run the nine training cases through the plant")
    s = sub.add_parser("train", parents=[common], help="train the dynamics model from case logs")
    s.add_argument("--logs", help="directory of case_N.csv logs (default: OUT/logs)")
    s = sub.add_parser("validate", parents=[common], help="score a model on the log pool and the case 2 rollout")
    s.add_argument("--model")
    s.add_argument("--logs")
    s = sub.add_parser("simulate", parents=[common], help="open-loop run of the multi-track test")
    s.add_argument("--power", type=float, help="constant power (W), default from config")
    s = sub.add_parser("control", parents=[common], help="closed-loop MPC run of the multi-track test")
    s.add_argument("--model")
    s.add_argument("--timing", action="store_true", help="include solve_time_s in the CSV")
    s = sub.add_parser("metrics", parents=[common], help="metrics from a run CSV")
    s.add_argument("csv")
    s.add_argument("--x-ref", type=float)
    s = sub.add_parser("cosim", parents=[common], help="serve the controller over NDJSON (stdio or TCP)")
    s.add_argument("--model")
    s.add_argument("--port", type=int)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--sessions", type=int, help="stop after this many TCP sessions")
    s.add_argument("--replay", help="replay a closed-loop CSV through a local session and compare powers")
    return p


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "control": cmd_control,
    "metrics": cmd_metrics,
    "cosim": cmd_cosim,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cfg = _load_config(args)
    return COMMANDS[args.command](args, cfg, Path(args.out))


if __name__ == "__main__":
    sys.exit(main())
