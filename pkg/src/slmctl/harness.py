"""End-to-end experiment pipeline: data generation, training, open and closed loop runs, metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gp
from .datagen import CaseDefaults, ScanPlan, Waveform, all_cases, subsample_split
from .dynamics import DynModel, build_samples, evaluate, rollout, train_dynamics, unique_samples
from .logs import format_log, read_log, write_log
from .mpc import MpcConfig, MpcController
from .thermal import ScanAborted, SimConfig, StepRecord, run_scan

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TestPlanConfig:
    """The multi-track regulation test: n parallel tracks, bidirectional raster."""

    n_tracks: int = 4
    track_length: float = 10.0  # mm
    hatch: float = 0.1  # mm
    power: float = 250.0  # W, open-loop reference
    speed: float = 800.0  # mm/s
    sample_period: float = 50e-6  # s

    def plan(self, power: Optional[float] = None) -> ScanPlan:
        p = Waveform("constant", self.power if power is None else power)
        return ScanPlan.raster(
            self.n_tracks, self.track_length, self.hatch, p, Waveform("constant", self.speed), True, self.sample_period
        )


@dataclass(frozen=True)
class TrainConfig:
    train_count: int = 100
    include_transitions: bool = True
    unique: bool = True
    noise_floor: float = 0.1  # sigma_n lower bound, standardized units
    max_iter: int = 200
    tol: float = 1e-5
    restarts: int = 5

    def opt_config(self, seed: int) -> gp.OptConfig:
        return gp.OptConfig(max_iter=self.max_iter, tol=self.tol, restarts=self.restarts, seed=seed)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    cases: CaseDefaults = CaseDefaults()
    sim: SimConfig = SimConfig()
    train: TrainConfig = TrainConfig()
    # weights tuned on the surrogate plant; the bare MpcConfig defaults are far too aggressive here
    mpc: MpcConfig = MpcConfig(r=1000.0, qf=1.0, k_ff=0.2, bias_gain=0.02)
    test: TestPlanConfig = TestPlanConfig()
    startup_window: float = 1e-3  # s excluded at the start of every track for RMSE
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sim"] = self.sim.to_dict()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported experiment config schema {d.get('schema_version')!r}")
        base = cls()

        def sub(key, typ, conv=None):
            # partial sections override the experiment defaults field by field
            default = getattr(base, key)
            if key not in d:
                return default
            merged = {**(default.to_dict() if hasattr(default, "to_dict") else asdict(default)), **d[key]}
            if conv is not None:
                return conv(merged)
            return typ(**{k: tuple(v) if isinstance(v, list) else v for k, v in merged.items()})

        return cls(
            seed=int(d.get("seed", base.seed)),
            cases=sub("cases", CaseDefaults),
            sim=sub("sim", SimConfig, SimConfig.from_dict),
            train=sub("train", TrainConfig),
            mpc=sub("mpc", MpcConfig, MpcConfig.from_dict),
            test=sub("test", TestPlanConfig),
            startup_window=float(d.get("startup_window", base.startup_window)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, cases=replace(self.cases, seed=seed))


# ---- data and training ----


def generate_campaign(cfg: ExperimentConfig) -> dict:
    """Run every training case through the plant; returns {case_id: records}."""
    out = {}
    for i, plan in enumerate(all_cases(cfg.cases), start=1):
        out[i] = run_scan(plan, sim_config=cfg.sim)
        log.info("case %d: %d steps", i, len(out[i]))
    return out


def pool_samples(logs: dict, train: TrainConfig = TrainConfig()) -> list:
    samples = [s for k in sorted(logs) for s in build_samples(logs[k], train.include_transitions)]
    return unique_samples(samples) if train.unique else samples


@dataclass
class TrainingResult:
    model: DynModel
    train: list
    validation: list
    metrics: dict

    def summary(self) -> dict:
        hp = self.model.gp.hyperparams
        return {
            "train_count": len(self.train),
            "validation_count": len(self.validation),
            "r2": self.metrics.get("r2"),
            "mae_pct": self.metrics.get("mae_pct"),
            "rmse": self.metrics.get("rmse"),
            "sigma_f": hp.sigma_f,
            "sigma_n": hp.sigma_n,
            "lengthscales": list(hp.lengthscales),
        }


def train_from_samples(samples: Sequence, cfg: ExperimentConfig, sample_period: float = 50e-6) -> TrainingResult:
    train, val = subsample_split(samples, min(cfg.train.train_count, len(samples)), cfg.seed)
    model = train_dynamics(train, cfg.train.opt_config(cfg.seed), sample_period, noise_floor=cfg.train.noise_floor)
    metrics = evaluate(model, val) if len(val) else {}
    return TrainingResult(model, train, val, metrics)


def rollout_check(model: DynModel, records: Sequence, track: int = 0) -> dict:
    """Free-run the model over one track of a recorded log from its first measured area.

    Returns the mean absolute error as a percentage of the mean measured area,
    along with both area sequences.
    """
    s, e = track_windows(records)[track]
    recs = records[s:e]
    xs = rollout(model, recs[0].melt_area, [r.lookahead_temp for r in recs[:-1]], [(r.power, r.speed) for r in recs[:-1]])
    actual = np.array([r.melt_area for r in recs])
    pred = np.array(xs)
    return {
        "mae_pct": float(100.0 * np.abs(pred - actual).mean() / np.abs(actual).mean()),
        "predicted": pred,
        "actual": actual,
        "time": np.array([r.time for r in recs]),
    }


# ---- runs and metrics ----


def track_windows(records: Sequence, startup_steps: int = 0) -> list:
    """Index ranges [start, end) of each track, skipping its first ``startup_steps`` records."""
    if not records:
        return []
    bounds = [0] + [i for i in range(1, len(records)) if abs(records[i].y - records[i - 1].y) > 1e-9]
    bounds.append(len(records))
    return [(a + min(startup_steps, b - a), b) for a, b in zip(bounds, bounds[1:])]


def compute_metrics(series: Sequence, x_ref: float, windows: Optional[Sequence] = None, peak_from: int = 0) -> dict:
    """Overshoot, undershoot (excess convention, %) and steady RMSE (% of set point).

    Peaks are taken over ``series[peak_from:]``; RMSE over the union of
    ``windows`` (index ranges), or the whole series if none are given.
    """
    a = np.asarray(series, float)
    if a.size == 0:
        raise ValueError("empty series")
    if not x_ref > 0:
        raise ValueError("set point must be positive")
    peak = a[peak_from:] if peak_from < a.size else a
    over = max(0.0, (peak.max() - x_ref) / x_ref * 100.0)
    under = max(0.0, (x_ref - peak.min()) / x_ref * 100.0)
    idx = np.concatenate([np.arange(s, e) for s, e in windows]) if windows else np.arange(a.size)
    err = a[idx] - x_ref
    rmse = math.sqrt(float(err @ err) / max(err.size, 1)) / x_ref * 100.0
    return {"overshoot_pct": over, "undershoot_pct": under, "rmse_pct": rmse, "steady_samples": int(idx.size)}


def power_slopes(records: Sequence, windows: Sequence) -> list:
    """Least-squares slope of applied power against time within each window (W/s)."""
    out = []
    for s, e in windows:
        if e - s < 2:
            out.append(math.nan)
            continue
        t = np.array([r.time for r in records[s:e]])
        p = np.array([r.power for r in records[s:e]])
        out.append(float(np.polyfit(t - t[0], p, 1)[0]))
    return out


@dataclass
class RunReport:
    records: list
    metrics: dict
    config: dict
    csv_path: Optional[str] = None
    solve_times: list = field(default_factory=list)
    scatter: Optional[tuple] = None  # (predicted, actual) for the validation set
    error: Optional[str] = None

    @property
    def timing(self) -> dict:
        if not self.solve_times:
            return {}
        t = np.asarray(self.solve_times)
        return {
            "median_s": float(np.median(t)),
            "p95_s": float(np.percentile(t, 95)),
            "max_s": float(t.max()),
            "count": int(t.size),
        }

    def summary(self) -> dict:
        return {
            "csv_path": self.csv_path,
            "steps": len(self.records),
            "metrics": self.metrics,
            "timing": self.timing,
            "error": self.error,
            "config": self.config,
        }


def run_metrics(records: Sequence, x_ref: float, startup_window: float) -> dict:
    if len(records) < 2:
        raise ValueError("need at least two records")
    dt = records[1].time - records[0].time
    startup = int(round(startup_window / dt))
    windows = track_windows(records, startup)
    # the cold start of the first track is a start-up transient, not a track transition
    first = windows[0][0]
    m = compute_metrics([r.melt_area for r in records], x_ref, windows, peak_from=first)
    m["power_slopes_W_s"] = power_slopes(records, windows)
    m["tracks"] = len(windows)
    return m


def _finish(records, cfg: ExperimentConfig, out_csv, solve_times, error=None, include_timing=False) -> RunReport:
    path = None
    if out_csv is not None:
        path = str(write_log(records, out_csv, include_timing))
    metrics = run_metrics(records, cfg.mpc.x_ref, cfg.startup_window) if len(records) >= 2 else {}
    return RunReport(list(records), metrics, cfg.to_dict(), path, list(solve_times), error=error)


def run_open_loop(cfg: ExperimentConfig, power: Optional[float] = None, out_csv=None) -> RunReport:
    records = run_scan(cfg.test.plan(power), sim_config=cfg.sim)
    return _finish(records, cfg, out_csv, [])


def run_closed_loop(
    plan: ScanPlan, model: DynModel, cfg: ExperimentConfig, out_csv=None, include_timing: bool = False
) -> RunReport:
    mpc_cfg = replace(cfg.mpc, speed=cfg.test.speed) if not cfg.mpc.control_speed else cfg.mpc
    ctrl = MpcController(model, mpc_cfg)
    try:
        records = run_scan(plan, ctrl, cfg.sim)
        error = None
    except ScanAborted as exc:
        records, error = exc.records, str(exc)
        log.error("closed loop aborted: %s", exc)
    times = [o.solve_time for o in ctrl.outputs]
    return _finish(records, cfg, out_csv, times, error, include_timing)


def report_from_csv(path, x_ref: float, startup_window: float = 1e-3) -> dict:
    return run_metrics(read_log(path), x_ref, startup_window)


# ---- plot data ----

PLOT_SERIES = ("area", "power", "temp", "scatter")


def plotdata_text(report: RunReport, what: str) -> str:
    if what not in PLOT_SERIES:
        raise ValueError(f"unknown series {what!r}; expected one of {PLOT_SERIES}")
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    if what == "scatter":
        if report.scatter is None:
            raise ValueError("report has no validation scatter")
        pred, act = report.scatter
        lines = ["# actual_mm2 predicted_mm2"] + [f"{fmt(a)} {fmt(p)}" for p, a in zip(pred, act)]
    else:
        col, name = {
            "area": ("melt_area", "melt_area_mm2"),
            "power": ("power", "power_W"),
            "temp": ("lookahead_temp", "lookahead_T_K"),
        }[what]
        lines = [f"# time_ms {name}"] + [f"{fmt(r.time * 1e3)} {fmt(getattr(r, col))}" for r in report.records]
    return "\n".join(lines) + "\n"


def emit_plotdata(report: RunReport, what: Sequence, out_dir, prefix: str = "") -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for w in [what] if isinstance(what, str) else what:
        p = out_dir / f"{prefix}{w}.dat"
        p.write_text(plotdata_text(report, w))
        paths.append(p)
    return paths


def csv_text(records: Sequence) -> str:
    return format_log(records)


__all__ = [
    "ExperimentConfig",
    "TestPlanConfig",
    "TrainConfig",
    "TrainingResult",
    "RunReport",
    "StepRecord",
    "generate_campaign",
    "pool_samples",
    "train_from_samples",
    "rollout_check",
    "track_windows",
    "compute_metrics",
    "power_slopes",
    "run_metrics",
    "run_open_loop",
    "run_closed_loop",
    "report_from_csv",
    "plotdata_text",
    "emit_plotdata",
]
