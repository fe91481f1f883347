"""Scan-log CSV format.

Floats are written with 17 significant digits so a log read back from disk
reproduces the in-memory values bit for bit.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .thermal import StepRecord

PLANT_COLUMNS = ("step", "time_s", "x_mm", "y_mm", "power_W", "speed_mm_s", "melt_area_mm2", "lookahead_T_K")
CONTROL_COLUMNS = ("cmd_power_W", "ff_term_W", "solver_status", "solver_iters")
TIMING_COLUMN = "solve_time_s"

_FIELDS = ("step", "time", "x", "y", "power", "speed", "melt_area", "lookahead_temp")


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, int)) and not isinstance(v, float):
        return str(int(v))
    return format(float(v), ".17g")


def columns_for(records, include_timing: bool = False) -> tuple:
    cols = PLANT_COLUMNS
    if any(r.extra for r in records):
        cols = cols + CONTROL_COLUMNS
        if include_timing:
            cols = cols + (TIMING_COLUMN,)
    return cols


def format_log(records, include_timing: bool = False) -> str:
    cols = columns_for(records, include_timing)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        row = [fmt(getattr(r, f)) for f in _FIELDS]
        for c in cols[len(PLANT_COLUMNS):]:
            row.append(fmt(r.extra.get(c, "")))
        w.writerow(row)
    return buf.getvalue()


def write_log(records, path, include_timing: bool = False) -> Path:
    path = Path(path)
    path.write_text(format_log(records, include_timing))
    return path


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_log(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PLANT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"log is missing columns {sorted(missing)}")
        out = []
        for row in reader:
            extra = {c: _parse(row[c]) for c in reader.fieldnames if c not in PLANT_COLUMNS}
            out.append(
                StepRecord(
                    int(row["step"]),
                    float(row["time_s"]),
                    float(row["x_mm"]),
                    float(row["y_mm"]),
                    float(row["power_W"]),
                    float(row["speed_mm_s"]),
                    float(row["melt_area_mm2"]),
                    float(row["lookahead_T_K"]),
                    False,
                    extra,
                )
            )
    return out
