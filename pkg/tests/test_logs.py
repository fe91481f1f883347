import math

import pytest
from hypothesis import given, settings, strategies as st

from slmctl.logs import CONTROL_COLUMNS, PLANT_COLUMNS, TIMING_COLUMN, format_log, read_log, write_log
from slmctl.thermal import StepRecord

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(rows=st.lists(st.tuples(finite, finite, finite, finite, finite, finite, finite), min_size=1, max_size=8))
def test_plant_log_roundtrip_bitwise(tmp_path_factory, rows):
    recs = [StepRecord(k, *r) for k, r in enumerate(rows)]
    path = write_log(recs, tmp_path_factory.mktemp("log") / "a.csv")
    back = read_log(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        for f in ("time", "x", "y", "power", "speed", "melt_area", "lookahead_temp"):
            assert math.copysign(1, getattr(a, f)) == math.copysign(1, getattr(b, f))
            assert getattr(a, f) == getattr(b, f)
        assert a.step == b.step


def test_header_plant_only():
    recs = [StepRecord(0, 0.0, 0.0, 0.0, 250.0, 800.0, 0.05, 400.0)]
    assert format_log(recs).splitlines()[0].split(",") == list(PLANT_COLUMNS)


def test_control_columns_and_timing():
    extra = {"cmd_power_W": 260.5, "ff_term_W": 1.25, "solver_status": "converged", "solver_iters": 12, "solve_time_s": 3e-4}
    recs = [StepRecord(0, 0.0, 0.0, 0.0, 260.5, 800.0, 0.05, 400.0, False, extra)]
    head = format_log(recs).splitlines()[0].split(",")
    assert head == list(PLANT_COLUMNS + CONTROL_COLUMNS)
    head = format_log(recs, include_timing=True).splitlines()[0].split(",")
    assert head[-1] == TIMING_COLUMN


def test_control_roundtrip(tmp_path):
    extra = {"cmd_power_W": 260.5, "ff_term_W": -0.1, "solver_status": "max-iter", "solver_iters": 500}
    recs = [StepRecord(3, 1.5e-4, 0.12, 0.1, 260.5, 800.0, 0.05, 400.0, False, extra)]
    back = read_log(write_log(recs, tmp_path / "c.csv"))
    assert back[0].extra == extra


def test_missing_columns_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("step,time_s\n0,0\n")
    with pytest.raises(ValueError, match="missing"):
        read_log(p)
