import io
import json
import threading

import pytest

from slmctl import cosim
from slmctl.cosim import CosimClient, CosimSession, encode, replay, serve_stream, serve_tcp


@pytest.fixture(scope="module")
def setup(trained, experiment):
    from dataclasses import replace

    return trained.model, replace(experiment.mpc, speed=experiment.test.speed)


def session(setup):
    return CosimSession(*setup)


def hello(s, **kw):
    return s.handle(encode({"kind": "hello", "version": "v1", **kw}))


def obs(s, k, x=0.08, T=400.0):
    return s.handle(encode({"kind": "observe", "version": "v1", "k": k, "x": x, "T": T}))


def test_step_echo(setup):
    s = session(setup)
    ack = hello(s, config_hash=s.hash)
    assert ack["kind"] == "hello-ack" and ack["config_hash"] == s.hash
    r = obs(s, 7)
    assert r["kind"] == "control" and r["k"] == 7 and r["version"] == "v1"
    assert {"p", "v", "status", "iterations", "ff"} <= set(r)
    assert s.handle(encode({"kind": "bye", "version": "v1"})) == {"kind": "bye", "version": "v1", "steps": 1}
    assert s.finished


def test_parse_error_keeps_session(setup):
    s = session(setup)
    hello(s)
    assert s.handle("{not json")["code"] == cosim.PARSE
    assert s.handle("[1, 2]")["code"] == cosim.PARSE
    assert obs(s, 0)["kind"] == "control"
    assert s.summary.errors == {cosim.PARSE: 2}


def test_blank_lines_ignored(setup):
    assert session(setup).handle("   \n") is None


def test_config_mismatch_refused(setup):
    s = session(setup)
    r = hello(s, config_hash="0" * 16)
    assert r["code"] == cosim.CONFIG_MISMATCH and s.finished
    assert s.summary.refused == cosim.CONFIG_MISMATCH


def test_version_mismatch_refused(setup):
    s = session(setup)
    r = s.handle(encode({"kind": "hello", "version": "v2"}))
    assert r["code"] == cosim.VERSION_MISMATCH and s.finished


def test_observe_before_hello(setup):
    assert obs(session(setup), 0)["code"] == cosim.NO_SESSION


def test_out_of_order_and_bad_messages(setup):
    s = session(setup)
    hello(s)
    assert obs(s, 5)["kind"] == "control"
    r = obs(s, 5)
    assert r["code"] == cosim.OUT_OF_ORDER and r["k"] == 5
    assert obs(s, 4)["code"] == cosim.OUT_OF_ORDER
    assert obs(s, 6)["kind"] == "control"
    assert s.handle(encode({"kind": "observe", "version": "v1", "k": 7}))["code"] == cosim.BAD_MESSAGE
    assert s.handle(encode({"kind": "observe", "version": "v1", "k": 1.5, "x": 0.1, "T": 1}))["code"] == cosim.BAD_MESSAGE
    assert s.handle('{"kind": "observe", "version": "v1", "k": 8, "x": NaN, "T": 1}')["code"] == cosim.BAD_MESSAGE
    assert s.handle(encode({"kind": "dance", "version": "v1"}))["code"] == cosim.BAD_MESSAGE
    assert s.summary.steps == 2


def test_hash_depends_on_config(setup):
    from dataclasses import replace

    model, cfg = setup
    assert cosim.config_hash(model, cfg) == cosim.config_hash(model, cfg)
    assert cosim.config_hash(model, cfg) != cosim.config_hash(model, replace(cfg, horizon=cfg.horizon + 1))


def test_stream_session(setup):
    lines = [
        encode({"kind": "hello", "version": "v1"}),
        encode({"kind": "observe", "version": "v1", "k": 0, "x": 0.05, "T": 360.0}),
        encode({"kind": "bye", "version": "v1"}),
        encode({"kind": "observe", "version": "v1", "k": 1, "x": 0.05, "T": 360.0}),
    ]
    out = io.StringIO()
    summary = serve_stream(io.StringIO("".join(lines)), out, *setup)
    replies = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [r["kind"] for r in replies] == ["hello-ack", "control", "bye"]
    assert summary.steps == 1 and summary.closed


def test_tcp_session(setup):
    ready = threading.Event()
    addr = {}

    def on_ready(a):
        addr["a"] = a
        ready.set()

    result = {}
    t = threading.Thread(target=lambda: result.update(s=serve_tcp("127.0.0.1", 0, *setup, max_sessions=1, ready=on_ready)))
    t.start()
    assert ready.wait(10)
    c = CosimClient.connect(*addr["a"])
    try:
        h = c.hello()
        assert h["kind"] == "hello-ack"
        assert c.observe(0, 0.06, 380.0)["kind"] == "control"
        assert c.bye()["steps"] == 1
    finally:
        c.close()
    t.join(10)
    assert result["s"][0].steps == 1


def test_replay_reproduces_closed_loop(closed_loop, setup):
    replies = replay(closed_loop.records, session(setup))
    assert len(replies) == len(closed_loop.records)
    for r, m in zip(closed_loop.records, replies):
        assert m["k"] == r.step and m["p"] == r.power and m["v"] == r.speed
        assert m["status"] == r.extra["solver_status"]
