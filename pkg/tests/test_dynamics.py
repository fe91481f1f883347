import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slmctl import gp
from slmctl.dynamics import (
    DynModel,
    DynSample,
    Normalizer,
    build_samples,
    linearize,
    predict_next,
    rollout,
    samples_to_arrays,
    train_dynamics,
    unique_samples,
)
from slmctl.thermal import StepRecord


def rec(k, area, temp=400.0, power=250.0, speed=800.0, y=0.0, dt=50e-6):
    return StepRecord(k, k * dt, 0.04 * k, y, power, speed, area, temp)


def synthetic_samples(n=60, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x, T, p, v = rng.uniform(0.02, 0.12), rng.uniform(353, 900), rng.uniform(150, 350), rng.uniform(500, 1100)
        nxt = 0.6 * x + 0.02 * math.tanh((p - 250) / 80) - 3e-5 * (v - 800) + 2e-5 * (T - 353) + 0.05
        out.append(DynSample(x, T, p, v, nxt + rng.normal(0, 1e-3)))
    return out


FAST = gp.OptConfig(max_iter=60, restarts=1, seed=0)


# ---- samples ----


def test_three_records_two_samples():
    r = [rec(0, 0.01), rec(1, 0.02, 410, 260, 810), rec(2, 0.03)]
    s = build_samples(r)
    assert len(s) == 2
    assert s[0] == DynSample(0.01, 400.0, 250.0, 800.0, 0.02)
    assert s[1] == DynSample(0.02, 410.0, 260.0, 810.0, 0.03)


def test_degenerate_logs():
    assert build_samples([]) == []
    assert build_samples([rec(0, 0.1)]) == []


def test_unordered_and_mixed_period_logs_rejected():
    with pytest.raises(ValueError):
        build_samples([rec(1, 0.1), rec(0, 0.1)])
    bad = [rec(0, 0.1), rec(1, 0.1), StepRecord(2, 3.5 * 50e-6, 0, 0, 250, 800, 0.1, 400)]
    with pytest.raises(ValueError):
        build_samples(bad)


def test_transition_flag():
    r = [rec(0, 0.1), rec(1, 0.1), rec(2, 0.1, y=0.1), rec(3, 0.1, y=0.1)]
    assert len(build_samples(r)) == 3
    assert len(build_samples(r, include_transitions=False)) == 2


def test_unique_samples_keeps_order():
    a, b = DynSample(1, 2, 3, 4, 5), DynSample(2, 2, 3, 4, 5)
    assert unique_samples([a, b, a, b, a]) == [a, b]


# ---- normalizer ----


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_normalizer_roundtrip(seed, scale):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(20, 4)) * scale + rng.normal(size=4) * 100
    y = rng.normal(size=20) * scale
    n = Normalizer.fit(X, y)
    np.testing.assert_allclose(n.inputs_back(n.inputs(X)), X, rtol=1e-12, atol=1e-12 * np.abs(X).max())
    np.testing.assert_allclose(n.target_back(n.target(y)), y, rtol=1e-12, atol=1e-12 * np.abs(y).max())


def test_zero_spread_rejected():
    s = synthetic_samples(10)
    flat = [DynSample(x.area, x.temp, 250.0, x.speed, x.next_area) for x in s]
    with pytest.raises(ValueError, match="power"):
        train_dynamics(flat, FAST)
    with pytest.raises(ValueError):
        train_dynamics(s[:1], FAST)


# ---- training and prediction ----


@pytest.fixture(scope="module")
def small_model():
    return train_dynamics(synthetic_samples(), FAST)


def test_training_matrix_standardized(small_model):
    Z = small_model.gp.dataset.inputs
    np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-9)
    np.testing.assert_allclose(Z.std(0), 1.0, atol=1e-9)
    t = small_model.gp.dataset.targets
    assert abs(t.mean()) < 1e-9 and abs(t.std() - 1) < 1e-9


def test_training_deterministic():
    a = train_dynamics(synthetic_samples(), FAST)
    b = train_dynamics(synthetic_samples(), FAST)
    assert a.gp.hyperparams == b.gp.hyperparams


def test_noise_floor_respected():
    m = train_dynamics(synthetic_samples(), FAST, noise_floor=0.2)
    assert m.gp.hyperparams.sigma_n >= 0.2 * (1 - 1e-12)


def test_predict_next_is_composition(small_model):
    m = small_model
    q = [0.07, 500.0, 260.0, 700.0]
    z = m.normalizer.inputs(q)
    ref = float(m.normalizer.target_back(gp.predict(m.gp, z).mean))
    assert predict_next(m, *q) == pytest.approx(max(ref, 0.0), rel=1e-12)


def test_far_input_reverts_to_target_mean(small_model):
    m = small_model
    assert predict_next(m, 50.0, 1e6, 1e6, 1e6) == pytest.approx(m.normalizer.target_mean, rel=1e-9)


def test_rollout_lengths(small_model):
    assert rollout(small_model, 0.05, [], []) == [0.05]
    xs = rollout(small_model, 0.05, [400.0], [(250.0, 800.0)])
    assert xs == [0.05, predict_next(small_model, 0.05, 400.0, 250.0, 800.0)]
    with pytest.raises(ValueError):
        rollout(small_model, 0.05, [400.0, 400.0], [(250.0, 800.0)])


def test_json_roundtrip(small_model, tmp_path):
    path = tmp_path / "m.json"
    small_model.save(path)
    back = DynModel.load(path)
    assert back.gp.hyperparams == small_model.gp.hyperparams
    q = (0.06, 420.0, 240.0, 900.0)
    assert predict_next(back, *q) == predict_next(small_model, *q)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    with pytest.raises(ValueError):
        DynModel.from_dict(doc)


# ---- linearization ----


@settings(max_examples=25, deadline=None)
@given(
    x=st.floats(0.02, 0.12),
    T=st.floats(353, 900),
    p=st.floats(150, 350),
    v=st.floats(500, 1100),
)
def test_linearization_exact_at_point(small_model, x, T, p, v):
    lin = linearize(small_model, x, T, p, v)
    assert lin.predict(x, p, v) == pytest.approx(predict_next(small_model, x, T, p, v), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_linearization_matches_finite_differences(small_model, seed):
    rng = np.random.default_rng(seed)
    x, T, p, v = rng.uniform(0.04, 0.1), rng.uniform(400, 800), rng.uniform(200, 300), rng.uniform(600, 1000)
    lin = linearize(small_model, x, T, p, v)
    f = lambda *a: predict_next(small_model, *a)  # noqa: E731
    hx, hp, hv = 1e-4, 1e-1, 1e-1
    fd = [
        (f(x + hx, T, p, v) - f(x - hx, T, p, v)) / (2 * hx),
        (f(x, T, p + hp, v) - f(x, T, p - hp, v)) / (2 * hp),
        (f(x, T, p, v + hv) - f(x, T, p, v - hv)) / (2 * hv),
    ]
    assert lin.a_d == pytest.approx(fd[0], rel=1e-4)
    assert lin.b_d[0] == pytest.approx(fd[1], rel=1e-4)
    assert lin.b_d[1] == pytest.approx(fd[2], rel=1e-4)


# ---- surrogate-trained model ----


def steady_points(campaign, case=1, tail=40):
    return campaign[case][-tail:]


def test_power_sensitivity_positive(trained, campaign):
    r = steady_points(campaign)[-1]
    lin = linearize(trained.model, r.melt_area, r.lookahead_temp, r.power, r.speed)
    assert lin.b_d[0] > 0


def test_steady_point_replay(trained, campaign):
    recs = campaign[1]
    for a, b in zip(recs[-30:-1], recs[-29:]):
        pred = predict_next(trained.model, a.melt_area, a.lookahead_temp, a.power, a.speed)
        assert pred == pytest.approx(b.melt_area, rel=0.05)


def test_monotone_in_power(trained, sample_pool):
    X, _ = samples_to_arrays(sample_pool)
    p_lo, p_hi = np.percentile(X[:, 2], [5, 95])
    grid = np.linspace(p_lo, p_hi, 8)
    for r in (0.05, 0.07, 0.09):
        for T in (357.0, 450.0):
            vals = [predict_next(trained.model, r, T, p, 800.0) for p in grid]
            assert np.all(np.diff(vals) >= 0), (r, T, vals)


def test_constant_input_rollout_bounded(trained, campaign):
    m = trained.model
    _, y = samples_to_arrays(trained.train)
    sf = m.gp.hyperparams.sigma_f * m.normalizer.target_std
    r = steady_points(campaign)[-1]
    xs = rollout(m, r.melt_area, [r.lookahead_temp] * 200, [(r.power, r.speed)] * 200)
    assert min(xs) >= y.min() - 3 * sf and max(xs) <= y.max() + 3 * sf
