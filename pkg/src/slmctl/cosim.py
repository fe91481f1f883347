"""Newline-delimited JSON step exchange between an external plant and the MPC.

One JSON object per line, each carrying ``kind`` and ``version``::

    -> {"kind": "hello", "version": "v1", "config_hash": "..."}
    <- {"kind": "hello-ack", "version": "v1", "config_hash": "..."}
    -> {"kind": "observe", "version": "v1", "k": 7, "x": 0.085, "T": 412.0}
    <- {"kind": "control", "version": "v1", "k": 7, "p": 231.5, "v": 800.0, "status": "converged", ...}
    -> {"kind": "bye", "version": "v1"}
    <- {"kind": "bye", "version": "v1", "steps": 1}

x is melt-pool area (mm^2), T the lookahead temperature (K), p power (W),
v speed (mm/s).  Errors come back as ``{"kind": "error", "code": ...}``.
Malformed lines and out-of-order steps leave the session open; a version or
config-hash mismatch in hello refuses the session.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import socket
import socketserver
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dynamics import DynModel
from .mpc import MpcConfig, MpcController

log = logging.getLogger(__name__)

VERSION = "v1"

# error codes
PARSE = "parse"
OUT_OF_ORDER = "out-of-order"
CONFIG_MISMATCH = "config-mismatch"
VERSION_MISMATCH = "version-mismatch"
NO_SESSION = "no-session"
BAD_MESSAGE = "bad-message"


def config_hash(model: DynModel, cfg: MpcConfig) -> str:
    doc = {"model": model.to_dict(), "mpc": cfg.to_dict()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def encode(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, allow_nan=False) + "\n"


def _error(code: str, detail: str, k=None) -> dict:
    msg = {"kind": "error", "version": VERSION, "code": code, "detail": detail}
    if k is not None:
        msg["k"] = k
    return msg


@dataclass
class SessionSummary:
    steps: int = 0
    errors: dict = field(default_factory=dict)
    refused: Optional[str] = None
    closed: bool = False

    def to_dict(self) -> dict:
        return {"steps": self.steps, "errors": dict(self.errors), "refused": self.refused, "closed": self.closed}


class CosimSession:
    """Protocol state machine for one session; feed it lines, get reply dicts back."""

    def __init__(self, model: DynModel, cfg: MpcConfig):
        self.model = model
        self.cfg = cfg
        self.hash = config_hash(model, cfg)
        self.controller = MpcController(model, cfg)
        self.summary = SessionSummary()
        self.open = False
        self.last_k = None

    @property
    def finished(self) -> bool:
        return self.summary.closed or self.summary.refused is not None

    def _fail(self, code, detail, k=None) -> dict:
        self.summary.errors[code] = self.summary.errors.get(code, 0) + 1
        return _error(code, detail, k)

    def handle(self, line: str) -> Optional[dict]:
        line = line.strip()
        if not line:
            return None
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("message is not an object")
        except ValueError as exc:
            return self._fail(PARSE, str(exc))
        kind = msg.get("kind")
        if msg.get("version", VERSION) != VERSION:
            if kind == "hello" or not self.open:
                self.summary.refused = VERSION_MISMATCH
            return self._fail(VERSION_MISMATCH, f"server speaks {VERSION}, got {msg.get('version')!r}")
        if kind == "hello":
            want = msg.get("config_hash")
            if want is not None and want != self.hash:
                self.summary.refused = CONFIG_MISMATCH
                return self._fail(CONFIG_MISMATCH, f"server config hash is {self.hash}")
            self.open = True
            self.controller.reset()
            self.last_k = None
            return {"kind": "hello-ack", "version": VERSION, "config_hash": self.hash}
        if not self.open:
            return self._fail(NO_SESSION, "send hello first")
        if kind == "bye":
            self.summary.closed = True
            self.open = False
            return {"kind": "bye", "version": VERSION, "steps": self.summary.steps}
        if kind != "observe":
            return self._fail(BAD_MESSAGE, f"unknown kind {kind!r}")
        try:
            k = msg["k"]
            x, T = float(msg["x"]), float(msg["T"])
            if not isinstance(k, int) or isinstance(k, bool):
                raise TypeError("step index must be an integer")
            if not (math.isfinite(x) and math.isfinite(T)):
                raise ValueError("non-finite observation")
        except (KeyError, TypeError, ValueError) as exc:
            return self._fail(BAD_MESSAGE, f"bad observe: {exc}", msg.get("k"))
        if self.last_k is not None and k <= self.last_k:
            return self._fail(OUT_OF_ORDER, f"step {k} after {self.last_k}", k)
        out = self.controller(k, x, T)
        self.last_k = k
        self.summary.steps += 1
        return {
            "kind": "control",
            "version": VERSION,
            "k": k,
            "p": out.power,
            "v": out.speed,
            "status": out.status,
            "iterations": out.iterations,
            "ff": out.ff_term,
        }


def serve_stream(reader, writer, model: DynModel, cfg: MpcConfig) -> SessionSummary:
    """Serve one session over text streams (e.g. stdin/stdout)."""
    session = CosimSession(model, cfg)
    for line in reader:
        reply = session.handle(line)
        if reply is not None:
            writer.write(encode(reply))
            writer.flush()
        if session.finished:
            break
    return session.summary


def serve_tcp(host: str, port: int, model: DynModel, cfg: MpcConfig, max_sessions: Optional[int] = None, ready=None):
    """Accept sessions one at a time on a TCP port; returns the list of summaries."""
    summaries = []

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            r = io.TextIOWrapper(self.rfile, encoding="utf-8", newline="\n")
            w = io.TextIOWrapper(self.wfile, encoding="utf-8", newline="\n", write_through=True)
            summaries.append(serve_stream(r, w, model, cfg))

    socketserver.TCPServer.allow_reuse_address = True
    with socketserver.TCPServer((host, port), Handler) as server:
        if ready is not None:
            ready(server.server_address)
        while max_sessions is None or len(summaries) < max_sessions:
            server.handle_request()
    return summaries


class CosimClient:
    """Plant-side helper over a pair of text streams or a socket."""

    def __init__(self, reader, writer):
        self.reader, self.writer = reader, writer

    @classmethod
    def connect(cls, host: str, port: int) -> "CosimClient":
        sock = socket.create_connection((host, port))
        f = sock.makefile("rw", encoding="utf-8", newline="\n")
        client = cls(f, f)
        client._sock = sock
        return client

    def request(self, msg: dict) -> dict:
        self.writer.write(encode(msg))
        self.writer.flush()
        return json.loads(self.reader.readline())

    def hello(self, config_hash: Optional[str] = None) -> dict:
        msg = {"kind": "hello", "version": VERSION}
        if config_hash is not None:
            msg["config_hash"] = config_hash
        return self.request(msg)

    def observe(self, k: int, x: float, T: float) -> dict:
        return self.request({"kind": "observe", "version": VERSION, "k": k, "x": x, "T": T})

    def bye(self) -> dict:
        return self.request({"kind": "bye", "version": VERSION})

    def close(self):
        sock = getattr(self, "_sock", None)
        if sock is not None:
            self.writer.close()
            sock.close()


def replay(records: Sequence, session: CosimSession) -> list:
    """Feed a recorded run's observations through a fresh session; returns control replies."""
    replies = [session.handle(encode({"kind": "hello", "version": VERSION, "config_hash": session.hash}))]
    if replies[0]["kind"] != "hello-ack":
        raise RuntimeError(f"session refused: {replies[0]}")
    out = []
    for r in records:
        out.append(session.handle(encode({"kind": "observe", "version": VERSION, "k": r.step, "x": r.melt_area, "T": r.lookahead_temp})))
    session.handle(encode({"kind": "bye", "version": VERSION}))
    return out
