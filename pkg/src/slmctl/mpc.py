"""Successive-linearisation MPC for melt-pool area.

At each control step the GP dynamics are linearised at the current state and
last applied input, the horizon is condensed into a QP over input increments
(plus one slack per predicted state for the soft area bounds), and the first
input of the solution is applied.

All QP quantities are scaled: areas by ``area_scale`` (default: the set
point), power and speed by their box widths.  The weights Q, R, Qf and the
slack weight act on these scaled quantities.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import qp
from .dynamics import DynModel, Linearization, linearize, predict_next

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MpcConfig:
    q: float = 1.0
    r: float = 0.1
    qf: float = 20.0
    horizon: int = 20
    x_ref: float = 0.09  # mm^2
    x_bounds: tuple = (0.0, 0.5)  # mm^2
    p_bounds: tuple = (0.0, 350.0)  # W
    v_bounds: tuple = (400.0, 1200.0)  # mm/s
    dp_bounds: tuple = (-350.0, 350.0)  # W per step
    dv_bounds: tuple = (-800.0, 800.0)  # mm/s per step
    control_speed: bool = False
    speed: float = 800.0  # fixed speed when control_speed is off
    initial_power: float = 250.0
    k_ff: float = 0.0  # W/K
    k_d: float = 0.0  # W/K
    t_ref: float = 353.0  # K
    bias_gain: float = 0.0  # output-disturbance observer gain in [0, 1]; 0 disables
    slack_weight: float = 1e4
    cost: str = "tracking"  # or "literal"
    area_scale: Optional[float] = None
    power_scale: Optional[float] = None
    speed_scale: Optional[float] = None
    max_iter: int = 500
    tol: float = 1e-6
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for k in ("x_bounds", "p_bounds", "v_bounds", "dp_bounds", "dv_bounds"):
            v = tuple(float(x) for x in getattr(self, k))
            object.__setattr__(self, k, v)
            if v[0] > v[1]:
                raise ValueError(f"{k}: lower bound exceeds upper bound")
        if min(self.q, self.qf) < 0 or self.r <= 0:
            raise ValueError("need Q, Qf >= 0 and R > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.cost not in ("tracking", "literal"):
            raise ValueError("cost must be 'tracking' or 'literal'")
        if self.slack_weight <= 0:
            raise ValueError("slack weight must be positive")
        if not 0.0 <= self.bias_gain <= 1.0:
            raise ValueError("bias gain must lie in [0, 1]")

    @property
    def n_inputs(self) -> int:
        return 2 if self.control_speed else 1

    def scales(self) -> tuple:
        sx = self.area_scale or self.x_ref or 1.0
        sp = self.power_scale or (self.p_bounds[1] - self.p_bounds[0]) or 1.0
        sv = self.speed_scale or (self.v_bounds[1] - self.v_bounds[0]) or 1.0
        return sx, sp, sv

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        d = dict(d)
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported controller config schema {d.get('schema_version')!r}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "MpcConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    # bookkeeping to map the decision vector back to physical quantities
    horizon: int
    n_inputs: int
    u_prev: np.ndarray  # physical
    u_scale: np.ndarray
    x_scale: float
    free_states: np.ndarray  # scaled predicted states for zero increments
    state_map: np.ndarray  # d(scaled states)/d(scaled increments)
    x_box: tuple  # scaled soft state bounds

    @property
    def n_increments(self) -> int:
        return self.horizon * self.n_inputs

    def increments(self, z) -> np.ndarray:
        return np.asarray(z)[: self.n_increments].reshape(self.horizon, self.n_inputs) * self.u_scale

    def inputs(self, z) -> np.ndarray:
        """Physical input sequence (H, n_inputs)."""
        return self.u_prev + np.cumsum(self.increments(z), axis=0)

    def states(self, z) -> np.ndarray:
        """Predicted areas x_{k+1}..x_{k+H} (mm^2)."""
        dz = np.asarray(z)[: self.n_increments]
        return (self.free_states + self.state_map @ dz) * self.x_scale

    def objective(self, z) -> float:
        return qp.objective(self.hessian, self.gradient, np.asarray(z))

    def zero_move(self) -> np.ndarray:
        """Decision vector that holds u_prev, with the slack that makes it feasible."""
        z = np.zeros(self.hessian.shape[0])
        x_lo, x_hi = self.x_box
        xs = self.free_states
        z[self.n_increments :] = np.maximum(np.maximum(xs - x_hi, x_lo - xs), 0.0)
        return z


def _prediction(a: float, bt: np.ndarray, ct: float, x0t: float, u_prev_t: np.ndarray, H: int):
    """Free response F and increment map G for x_{i+1} = a x_i + bt.u_i + ct."""
    nu = bt.shape[0]
    F = np.empty(H)
    x = x0t
    drift = float(bt @ u_prev_t) + ct
    for i in range(H):
        x = a * x + drift
        F[i] = x
    # x_{i+1} = ... + sum_{j<=i} a^{i-j} bt . u_j ; u_j = u_prev + sum_{l<=j} du_l
    gamma = np.zeros((H, H * nu))
    for i in range(H):
        for j in range(i + 1):
            gamma[i, j * nu : (j + 1) * nu] = a ** (i - j) * bt
    S = np.kron(np.tril(np.ones((H, H))), np.eye(nu))
    return F, gamma @ S, S


def build_qp(lin: Linearization, x0: float, u_prev, cfg: MpcConfig) -> QpProblem:
    """Condense the horizon into a QP over scaled input increments and slacks."""
    H, nu = cfg.horizon, cfg.n_inputs
    sx, sp, sv = cfg.scales()
    u_prev = np.atleast_1d(np.asarray(u_prev, float))
    if nu == 1:
        u_prev = u_prev[:1]
        u_scale = np.array([sp])
        b_phys = np.array([lin.b_d[0]])
        # speed held at its fixed value: its contribution folds into the offset
        c_phys = lin.c_d + lin.b_d[1] * cfg.speed
        lo_u, hi_u = np.array([cfg.p_bounds[0]]), np.array([cfg.p_bounds[1]])
        lo_du, hi_du = np.array([cfg.dp_bounds[0]]), np.array([cfg.dp_bounds[1]])
    else:
        u_scale = np.array([sp, sv])
        b_phys = np.asarray(lin.b_d, float)
        c_phys = lin.c_d
        lo_u = np.array([cfg.p_bounds[0], cfg.v_bounds[0]])
        hi_u = np.array([cfg.p_bounds[1], cfg.v_bounds[1]])
        lo_du = np.array([cfg.dp_bounds[0], cfg.dv_bounds[0]])
        hi_du = np.array([cfg.dp_bounds[1], cfg.dv_bounds[1]])
    if not (np.isfinite(lin.a_d) and np.all(np.isfinite(b_phys)) and np.isfinite(c_phys)):
        raise ValueError("linearization is not finite")

    bt = b_phys * u_scale / sx
    ct = c_phys / sx
    F, G, S = _prediction(lin.a_d, bt, ct, x0 / sx, u_prev / u_scale, H)
    n_du = H * nu

    w = np.full(H, cfg.q)
    w[-1] = cfg.qf
    ref = cfg.x_ref / sx if cfg.cost == "tracking" else 0.0
    hess_u = 2.0 * (G.T * w) @ G
    grad_u = 2.0 * G.T @ (w * (F - ref))
    if cfg.cost == "tracking":
        hess_u += 2.0 * cfg.r * np.eye(n_du)
    else:
        # R on absolute (scaled) inputs: u = u_prev + S du
        up = np.tile(u_prev / u_scale, H)
        hess_u += 2.0 * cfg.r * S.T @ S
        grad_u += 2.0 * cfg.r * S.T @ up

    n = n_du + H
    hess = np.zeros((n, n))
    hess[:n_du, :n_du] = 0.5 * (hess_u + hess_u.T)
    hess[n_du:, n_du:] = 2.0 * cfg.slack_weight * np.eye(H)
    grad = np.concatenate([grad_u, np.zeros(H)])

    rows, rhs = [], []
    eye_s = np.eye(H)
    up_t = np.tile(u_prev / u_scale, H)
    hi_t, lo_t = np.tile(hi_u / u_scale, H), np.tile(lo_u / u_scale, H)
    # input boxes on u_prev + S du
    rows += [np.hstack([S, np.zeros((n_du, H))]), np.hstack([-S, np.zeros((n_du, H))])]
    rhs += [hi_t - up_t, up_t - lo_t]
    # rate bounds on du
    I = np.eye(n_du)
    rows += [np.hstack([I, np.zeros((n_du, H))]), np.hstack([-I, np.zeros((n_du, H))])]
    rhs += [np.tile(hi_du / u_scale, H), -np.tile(lo_du / u_scale, H)]
    # soft state bounds
    x_lo, x_hi = cfg.x_bounds[0] / sx, cfg.x_bounds[1] / sx
    rows += [np.hstack([G, -eye_s]), np.hstack([-G, -eye_s])]
    rhs += [x_hi - F, F - x_lo]
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    keep = np.isfinite(b)
    return QpProblem(hess, grad, A[keep], b[keep], H, nu, u_prev, u_scale, sx, F, G, (x_lo, x_hi))


def solve_qp(problem: QpProblem, solver_config: qp.SolverConfig = qp.SolverConfig()) -> qp.QpSolution:
    return qp.solve(problem.hessian, problem.gradient, problem.a_ineq, problem.b_ineq, solver_config)


def feedforward_term(T_k: float, T_prev: float, T_ref: float, k_ff: float, k_d: float) -> float:
    """Direct plus differential correction from the lookahead temperature (W)."""
    return k_ff * (T_ref - T_k) + k_d * (T_prev - T_k)


@dataclass(frozen=True)
class ControlOutput:
    power: float
    speed: float
    status: str
    iterations: int
    solve_time: float
    ff_term: float = 0.0
    mpc_power: float = math.nan
    linearization: Optional[Linearization] = field(default=None, compare=False)

    def telemetry(self) -> dict:
        return {
            "cmd_power_W": self.power,
            "ff_term_W": self.ff_term,
            "solver_status": self.status,
            "solver_iters": self.iterations,
            "solve_time_s": self.solve_time,
        }


def _clamp(v, lo, hi):
    return min(max(v, lo), hi)


def control_step(
    model: DynModel,
    x_k: float,
    T_k: float,
    T_prev: float,
    u_prev,
    cfg: MpcConfig,
    applied_prev=None,
    disturbance: float = 0.0,
) -> ControlOutput:
    """One receding-horizon step.

    ``u_prev`` is the previous MPC command (power, speed) before feedforward;
    the QP is linearised and anchored there, so the feedforward acts as a
    proportional correction rather than accumulating.  ``applied_prev`` is
    the previously applied output (defaults to ``u_prev``), against which the
    rate bounds of the emitted command are enforced.
    """
    start = time.perf_counter()
    p_prev, v_prev = float(u_prev[0]), float(u_prev[1])
    if not cfg.control_speed:
        v_prev = cfg.speed
    pa, va = (p_prev, v_prev) if applied_prev is None else (float(applied_prev[0]), float(applied_prev[1]))
    solver_cfg = qp.SolverConfig(cfg.max_iter, cfg.tol)
    lin = linearize(model, x_k, T_k, p_prev, v_prev)
    if disturbance:
        lin = replace(lin, c_d=lin.c_d + disturbance)
    problem = build_qp(lin, x_k, (p_prev, v_prev), cfg)
    sol = solve_qp(problem, solver_cfg)
    if sol.status == qp.INFEASIBLE:
        u0 = np.array([p_prev, v_prev])[: cfg.n_inputs]
    else:
        u0 = problem.inputs(sol.z)[0]
    mpc_p = _clamp(float(u0[0]), *cfg.p_bounds)
    ff = feedforward_term(T_k, T_prev, cfg.t_ref, cfg.k_ff, cfg.k_d)
    p = _clamp(mpc_p + ff, *cfg.p_bounds)
    p = _clamp(p, pa + cfg.dp_bounds[0], pa + cfg.dp_bounds[1])
    if cfg.control_speed:
        v = _clamp(float(u0[1]), *cfg.v_bounds)
        v = _clamp(v, va + cfg.dv_bounds[0], va + cfg.dv_bounds[1])
    else:
        v = cfg.speed
    elapsed = time.perf_counter() - start
    return ControlOutput(p, v, sol.status, sol.iterations, elapsed, ff, mpc_p, lin)


class MpcController:
    """Plant callback carrying the previous command, output and temperature between steps."""

    def __init__(self, model: DynModel, cfg: MpcConfig):
        self.model = model
        self.cfg = cfg
        self.reset()

    def reset(self):
        self.u_prev = (self.cfg.initial_power, self.cfg.speed)
        self.applied_prev = self.u_prev
        self.T_prev = None
        self.disturbance = 0.0
        self._expected = None
        self.outputs: list[ControlOutput] = []

    def __call__(self, k: int, area: float, temp: float) -> ControlOutput:
        T_prev = temp if self.T_prev is None else self.T_prev
        if self.cfg.bias_gain > 0 and self._expected is not None:
            self.disturbance += self.cfg.bias_gain * (area - self._expected)
        out = control_step(
            self.model, area, temp, T_prev, self.u_prev, self.cfg, self.applied_prev, self.disturbance
        )
        if self.cfg.bias_gain > 0:
            # prediction from the MPC's own command: the observer absorbs model
            # error and the steady share of the feedforward alike
            self._expected = predict_next(self.model, area, temp, out.mpc_power, out.speed) + self.disturbance
        self.u_prev = (out.mpc_power, out.speed)
        self.applied_prev = (out.power, out.speed)
        self.T_prev = temp
        self.outputs.append(out)
        return out
