
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slmctl.datagen import CASE_TABLE, CaseDefaults, ScanPlan, Waveform, all_cases, make_case, subsample_split, waveform_eval


def test_constant_waveform():
    assert waveform_eval(Waveform("constant", 250.0), 0.0123) == 250.0


def test_sinusoid_at_zero():
    assert waveform_eval(Waveform("sinusoid", 250.0, 50.0, 200.0), 0.0) == 250.0


def test_sinusoid_quarter_period():
    w = Waveform("sinusoid", 250.0, 50.0, 200.0)
    assert w(1.0 / 800.0) == pytest.approx(300.0)


def test_profile_reproducible_and_seed_dependent():
    a = Waveform("profile", 250.0, 100.0, seed=7)
    b = Waveform("profile", 250.0, 100.0, seed=7)
    c = Waveform("profile", 250.0, 100.0, seed=8)
    ts = np.linspace(0, 5e-3, 50)
    assert [a(t) for t in ts] == [b(t) for t in ts]
    assert [a(t) for t in ts] != [c(t) for t in ts]


def test_profile_band_limited():
    # sampled densely, the profile's spectrum has no energy above the band edge
    w = Waveform("profile", 0.0, 1.0, seed=3)
    fs, n = 20000.0, 4000
    x = np.array([w(i / fs) for i in range(n)])
    power = np.abs(np.fft.rfft(x * np.hanning(n)))
    freqs = np.fft.rfftfreq(n, 1 / fs)
    assert power[freqs > 1300].max() < 0.02 * power.max()


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        waveform_eval(Waveform("constant", 1.0), -1.0)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["constant", "sinusoid", "profile"]),
    base=st.floats(-500, 500),
    amp=st.floats(0, 1000),
    freq=st.floats(0, 2000),
    seed=st.integers(0, 2**31),
    lo=st.floats(-300, 300),
    width=st.floats(0, 500),
    t=st.floats(0, 1),
)
def test_waveform_within_bounds(kind, base, amp, freq, seed, lo, width, t):
    w = Waveform(kind, base, amp, freq, seed, lo, lo + width)
    assert lo <= w(t) <= lo + width


def test_case_1_defaults():
    p = make_case(1)
    assert len(p.tracks) == 1
    assert p.power.kind == "constant" and p.power.base == 250.0
    assert p.speed.kind == "constant" and p.speed.base == 800.0
    (x0, _), (x1, _) = p.tracks[0]
    assert abs(x1 - x0) == 5.0


def test_case_7_hatch():
    p = make_case(7)
    assert len(p.tracks) == 2 and p.hatch == 0.05


def test_case_4_double_sinusoid():
    p = make_case(4)
    assert len(p.tracks) == 1
    assert p.power.kind == "sinusoid" and p.speed.kind == "sinusoid"


def test_case_table_rows():
    expect = {
        5: (2, 0.1),
        6: (2, 0.15),
        7: (2, 0.05),
        8: (2, 0.1),
        9: (2, 0.1),
    }
    for i, (n, hatch) in expect.items():
        p = make_case(i)
        assert len(p.tracks) == n and p.hatch == hatch
    assert make_case(8).power.kind == "sinusoid" and make_case(8).speed.kind == "profile"
    assert make_case(9).power.kind == "profile" and make_case(9).speed.kind == "profile"
    assert all(len(make_case(i).tracks) == 1 for i in (1, 2, 3, 4))


@pytest.mark.parametrize("bad", [0, 10, -1])
def test_invalid_case(bad):
    with pytest.raises(ValueError):
        make_case(bad)


def test_cases_pure_function_of_inputs():
    d = CaseDefaults(seed=3)
    assert all_cases(d) == all_cases(CaseDefaults(seed=3))
    assert make_case(9, d) != make_case(9, CaseDefaults(seed=4))


@pytest.mark.parametrize("case_id", sorted(CASE_TABLE))
def test_case_waveforms_within_process_window(case_id):
    p = make_case(case_id)
    for t in np.linspace(0, 20e-3, 400):
        assert 0.0 <= p.power(t) <= 350.0
        assert 400.0 <= p.speed(t) <= 1200.0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 8), hatch=st.floats(0.01, 1.0), length=st.floats(0.1, 20), bidir=st.booleans())
def test_raster_geometry(n, hatch, length, bidir):
    p = ScanPlan.raster(n, length, hatch, Waveform(), Waveform("constant", 800.0), bidir)
    ys = [tr[0][1] for tr in p.tracks]
    assert np.allclose(np.diff(ys), hatch, rtol=0, atol=1e-9)
    d = p.directions()
    if bidir:
        assert all(a == -b for a, b in zip(d, d[1:]))
    else:
        assert all(x == 1.0 for x in d)


def test_plan_validation():
    w = Waveform()
    with pytest.raises(ValueError):
        ScanPlan((((0, 0), (0, 0)),), 0.0, True, w, w)
    with pytest.raises(ValueError):
        ScanPlan((((0, 0), (1, 0)), ((1, 0.2), (0, 0.2))), 0.1, True, w, w)
    with pytest.raises(ValueError):
        ScanPlan((((0, 0), (1, 0.1)),), 0.0, True, w, w)


def test_plan_json_roundtrip():
    import json

    p = make_case(8)
    assert ScanPlan.from_dict(json.loads(p.dumps())) == p


def test_split_full_and_disjoint():
    items = list(range(50))
    tr, va = subsample_split(items, 50, 1)
    assert tr == items and va == []
    tr, va = subsample_split(items, 20, 1)
    assert len(tr) == 20 and len(va) == 30
    assert set(tr).isdisjoint(va) and set(tr) | set(va) == set(items)


def test_split_protocol_sizes():
    tr, va = subsample_split(list(range(1649)), 100, 0)
    assert (len(tr), len(va)) == (100, 1549)


def test_split_deterministic():
    items = list(range(300))
    assert subsample_split(items, 40, 9) == subsample_split(items, 40, 9)
    assert subsample_split(items, 40, 9) != subsample_split(items, 40, 10)


def test_split_too_many():
    with pytest.raises(ValueError):
        subsample_split([1, 2], 3, 0)


def test_split_uniform():
    # every element should be picked about train/total of the time
    counts = np.zeros(20)
    for seed in range(2000):
        tr, _ = subsample_split(list(range(20)), 5, seed)
        counts[tr] += 1
    assert np.all(np.abs(counts / 2000 - 0.25) < 0.05)
