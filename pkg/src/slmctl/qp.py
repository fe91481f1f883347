"""Dense inequality-constrained QP solved by Hildreth's dual coordinate ascent.

    minimise  1/2 z'Hz + f'z   subject to  A z <= b

The dual ``max_{lam >= 0} -1/2 lam'P lam - lam'd`` with ``P = A H^-1 A'`` and
``d = b + A H^-1 f`` is maximised one coordinate at a time; the primal point
is recovered as ``z = -H^-1 (f + A' lam)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-fallback"


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 500
    tol: float = 1e-6
    divergence: float = 1e12


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    multipliers: np.ndarray


@njit(cache=True)
def _hildreth(P, d, lam, max_iter, tol, divergence):
    m = d.shape[0]
    it = 0
    for it in range(1, max_iter + 1):
        change = 0.0
        big = 0.0
        for i in range(m):
            s = d[i]
            for j in range(m):
                s += P[i, j] * lam[j]
            s -= P[i, i] * lam[i]
            new = -s / P[i, i]
            if new < 0.0:
                new = 0.0
            delta = abs(new - lam[i])
            if delta > change:
                change = delta
            lam[i] = new
            if new > big:
                big = new
        if big > divergence:
            return it, 2
        if change <= tol:
            return it, 0
    return it, 1


def kkt_residual(H, f, A, b, z, lam) -> float:
    """Max of relative stationarity, primal violation and complementarity.

    Complementarity is measured as ``|min(lam_i, b_i - a_i z)|`` so that large
    multipliers on active rows do not amplify rounding in the slack.
    """
    Hz, Al = H @ z, A.T @ lam
    scale = max(1.0, np.abs(f).max(initial=0.0), np.abs(Hz).max(initial=0.0), np.abs(Al).max(initial=0.0))
    stat = np.abs(Hz + f + Al).max(initial=0.0) / scale
    gap = b - A @ z
    primal = np.maximum(-gap, 0.0).max(initial=0.0)
    comp = np.abs(np.minimum(lam, gap)).max(initial=0.0)
    return float(max(stat, primal, comp))


def _kkt_solve(H, f, A, b, rows):
    n, k = H.shape[0], len(rows)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = A[rows].T
    K[n:, :n] = A[rows]
    rhs = np.concatenate([-f, b[rows]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:  # dependent active rows
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    lam = np.zeros(A.shape[0])
    lam[rows] = sol[n:]
    return sol[:n], lam


def _independent(A, rows):
    """Greedy subset of ``rows`` (in order) with linearly independent constraint normals."""
    keep = []
    for r in rows:
        trial = keep + [r]
        if np.linalg.matrix_rank(A[trial]) == len(trial):
            keep = trial
    return keep


def _polish(H, f, A, b, rows, tol, max_changes):
    """Active-set refinement warm-started from ``rows``.

    Each pass solves the equality KKT system, then drops the most negative
    multiplier or adds the most violated constraint, one change at a time.
    """
    rows = _independent(A, rows)
    for _ in range(max_changes):
        z, lam = _kkt_solve(H, f, A, b, rows)
        if rows:
            j = min(rows, key=lambda r: lam[r])
            if lam[j] < -tol:
                rows.remove(j)
                continue
        viol = A @ z - b
        j = int(np.argmax(viol))
        if viol[j] > tol and j not in rows:
            rows = _independent(A, [j] + rows)
            continue
        return z, lam
    return z, lam


def solve(H, f, A, b, cfg: SolverConfig = SolverConfig()) -> QpSolution:
    H = np.asarray(H, float)
    f = np.asarray(f, float)
    A = np.asarray(A, float).reshape(-1, f.shape[0])
    b = np.asarray(b, float)
    chol = cho_factor(H)
    z = -cho_solve(chol, f)
    lam = np.zeros(A.shape[0])
    if A.shape[0] == 0 or np.all(A @ z <= b + cfg.tol):
        return QpSolution(z, CONVERGED, 0, kkt_residual(H, f, A, b, z, lam), lam)
    HiA = cho_solve(chol, A.T)
    P = A @ HiA
    d = b + A @ cho_solve(chol, f)
    # rows with P_ii = 0 cannot move the primal point; they are infeasible when d_i < 0
    diag = np.diag(P).copy()
    dead = diag <= 1e-14 * max(1.0, diag.max())
    if np.any(dead & (d < -cfg.tol)):
        return QpSolution(z, INFEASIBLE, 0, float("inf"), lam)
    live = np.flatnonzero(~dead)
    Pl = np.ascontiguousarray(P[np.ix_(live, live)])
    dl = np.ascontiguousarray(d[live])
    lam_live = np.zeros(dl.shape[0])
    # Sweeps run in growing batches.  After each batch the active set read
    # off the multipliers is polished with one exact KKT solve; dual ascent
    # alone crawls when slack rows make P badly conditioned.
    iters, batch, tried = 0, 8, set()
    while iters < cfg.max_iter:
        it, flag = _hildreth(Pl, dl, lam_live, min(batch, cfg.max_iter - iters), 0.0, cfg.divergence)
        iters += it
        lam[:] = 0.0
        lam[live] = lam_live
        z = -cho_solve(chol, f + A.T @ lam)
        if flag == 2:
            return QpSolution(z, INFEASIBLE, iters, float("inf"), lam)
        res = kkt_residual(H, f, A, b, z, lam)
        if res <= cfg.tol:
            return QpSolution(z, CONVERGED, iters, res, lam)
        active = tuple(live[np.argsort(-lam_live, kind='stable')][: np.count_nonzero(lam_live > 0.0)])
        if active not in tried:
            tried.add(active)
            zp, lp = _polish(H, f, A, b, active, cfg.tol, 2 * A.shape[0] + 2)
            rp = kkt_residual(H, f, A, b, zp, lp)
            if rp <= cfg.tol:
                return QpSolution(zp, CONVERGED, iters, rp, lp)
        batch *= 2
    return QpSolution(z, MAX_ITER, iters, res, lam)


def objective(H, f, z) -> float:
    return float(0.5 * z @ H @ z + f @ z)
