"""Exact Gaussian-process regression with a squared-exponential kernel.

Zero prior mean, Cholesky-based inference, log marginal likelihood and its
gradient in log-hyperparameter space, multi-start gradient-ascent
hyperparameter search, and the analytic gradient of the posterior mean.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)
_JITTER_START = 1e-12
_JITTER_MAX = 1e-6


class GPError(RuntimeError):
    """Factorization or fitting failure."""


@dataclass(frozen=True)
class Hyperparams:
    sigma_f: float
    sigma_n: float
    lengthscales: tuple

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(l) for l in np.ravel(self.lengthscales)))
        if not (self.sigma_f > 0 and math.isfinite(self.sigma_f)):
            raise ValueError("sigma_f must be positive")
        if not (self.sigma_n >= 0 and math.isfinite(self.sigma_n)):
            raise ValueError("sigma_n must be non-negative")
        if not self.lengthscales or not all(l > 0 and math.isfinite(l) for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_log(self) -> np.ndarray:
        """(log sigma_f, log sigma_n, log l_1..l_n)."""
        return np.log([self.sigma_f, self.sigma_n, *self.lengthscales])

    @classmethod
    def from_log(cls, theta) -> "Hyperparams":
        e = np.exp(np.asarray(theta, float))
        return cls(float(e[0]), float(e[1]), tuple(e[2:]))


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, float))
        y = np.asarray(self.targets, float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} input rows but {y.shape[0]} targets")
        if X.shape[0] < 1:
            raise ValueError("dataset is empty")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class TrainedGP:
    dataset: Dataset
    hyperparams: Hyperparams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @property
    def noise_var(self) -> float:
        return self.hyperparams.sigma_n**2 + self.jitter

    def k_y(self) -> np.ndarray:
        X = self.dataset.inputs
        return kernel_matrix(X, X, self.hyperparams) + self.noise_var * np.eye(self.dataset.m)

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "format_version": FORMAT_VERSION,
            "kind": "gp-se",
            "hyperparams": {"sigma_f": hp.sigma_f, "sigma_n": hp.sigma_n, "lengthscales": list(hp.lengthscales)},
            "inputs": self.dataset.inputs.tolist(),
            "targets": self.dataset.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedGP":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported GP format version {doc.get('format_version')!r}")
        hp = Hyperparams(**doc["hyperparams"])
        return fit(Dataset(np.array(doc["inputs"], float), np.array(doc["targets"], float)), hp)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "TrainedGP":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


def _check_point(x, n: int) -> np.ndarray:
    x = np.asarray(x, float).ravel()
    if x.shape[0] != n:
        raise ValueError(f"expected a {n}-vector, got length {x.shape[0]}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")
    return x


def kernel_eval(x, x_prime, hp: Hyperparams) -> float:
    x = _check_point(x, hp.dim)
    xp = _check_point(x_prime, hp.dim)
    d = x - xp
    return hp.sigma_f**2 * math.exp(-0.5 * float(np.sum(d * d / np.asarray(hp.lengthscales))))


def _sq_dist(A: np.ndarray, B: np.ndarray, lengthscales) -> np.ndarray:
    # weighted squared distance (a - b)^T L^{-1} (a - b)
    w = 1.0 / np.sqrt(np.asarray(lengthscales, float))
    A, B = A * w, B * w
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def kernel_matrix(A, B, hp: Hyperparams) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape[1] != hp.dim or B.shape[1] != hp.dim:
        raise ValueError("input dimension does not match lengthscales")
    return hp.sigma_f**2 * np.exp(-0.5 * _sq_dist(A, B, hp.lengthscales))


def _factor(K: np.ndarray, jitter: float):
    m = K.shape[0]
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    j = max(jitter, _JITTER_START)
    while j <= _JITTER_MAX * (1 + 1e-9):
        try:
            return cholesky(K + j * np.eye(m), lower=True, check_finite=False), j
        except np.linalg.LinAlgError:
            j *= 10.0
    raise GPError(f"K_Y not positive definite even with jitter {_JITTER_MAX:g}")


def fit(data: Dataset, hp: Hyperparams, jitter: float = 0.0) -> TrainedGP:
    """Factor K_Y = K(X, X) + sigma_n^2 I and solve K_Y alpha = Y.

    Diagonal jitter (starting at ``max(jitter, 1e-12)`` and growing tenfold to
    1e-6) is applied only when the plain factorization fails.
    """
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    if data.n != hp.dim:
        raise ValueError(f"data has {data.n} input dims, hyperparameters have {hp.dim}")
    K = kernel_matrix(data.inputs, data.inputs, hp)
    K[np.diag_indices_from(K)] += hp.sigma_n**2
    L, used = _factor(K, jitter)
    alpha = cho_solve((L, True), data.targets, check_finite=False)
    L.setflags(write=False)
    alpha.setflags(write=False)
    return TrainedGP(data, hp, L, alpha, used)


def predict(gp: TrainedGP, x_star) -> Prediction:
    hp = gp.hyperparams
    x = _check_point(x_star, hp.dim)
    k = kernel_matrix(x[None, :], gp.dataset.inputs, hp)[0]
    mean = float(k @ gp.alpha)
    v = solve_triangular(gp.chol, k, lower=True, check_finite=False)
    var = hp.sigma_f**2 - float(v @ v)
    return Prediction(mean, max(var, 0.0))


def predict_mean(gp: TrainedGP, X) -> np.ndarray:
    """Vectorised posterior mean for the rows of X."""
    return kernel_matrix(np.atleast_2d(X), gp.dataset.inputs, gp.hyperparams) @ gp.alpha


def predict_mean_grad(gp: TrainedGP, x_star) -> np.ndarray:
    """Gradient of the posterior mean with respect to the query point."""
    hp = gp.hyperparams
    x = _check_point(x_star, hp.dim)
    X = gp.dataset.inputs
    k = kernel_matrix(x[None, :], X, hp)[0]
    return ((gp.alpha * k) @ (X - x)) / np.asarray(hp.lengthscales)


def log_marginal(gp: TrainedGP) -> float:
    y = gp.dataset.targets
    m = gp.dataset.m
    return float(-0.5 * y @ gp.alpha - np.log(np.diag(gp.chol)).sum() - 0.5 * m * _LOG_2PI)


def log_marginal_and_grad(data: Dataset, hp: Hyperparams) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient over (log sf, log sn, log l_i)."""
    gp = fit(data, hp)
    X = data.inputs
    m = data.m
    Kinv = cho_solve((gp.chol, True), np.eye(m), check_finite=False)
    W = np.outer(gp.alpha, gp.alpha) - Kinv
    Kf = kernel_matrix(X, X, hp)
    grad = np.empty(2 + hp.dim)
    # d K_Y / d log sf = 2 Kf ; d K_Y / d log sn = 2 sn^2 I
    grad[0] = np.sum(W * Kf)
    grad[1] = hp.sigma_n**2 * np.trace(W)
    # d K_Y / d log l_d = Kf * (x_d - x'_d)^2 / (2 l_d)
    WK = W * Kf
    for d, l in enumerate(hp.lengthscales):
        diff = X[:, d][:, None] - X[:, d][None, :]
        grad[2 + d] = 0.25 * np.sum(WK * diff * diff) / l
    return log_marginal(gp), grad


def log_marginal_grad(data: Dataset, hp: Hyperparams) -> np.ndarray:
    return log_marginal_and_grad(data, hp)[1]


@dataclass(frozen=True)
class OptConfig:
    max_iter: int = 200
    tol: float = 1e-5
    restarts: int = 5
    seed: int = 0
    log_bounds: tuple = ((-7.0, 7.0), (-14.0, 5.0), (-7.0, 9.0))  # (sf, sn, lengthscale)
    restart_spread: float = 1.0


@dataclass(frozen=True)
class OptResult:
    hyperparams: Hyperparams
    log_marginal: float
    grad_norm: float
    iterations: int
    converged: bool
    initial_log_marginal: float = field(default=float("nan"))


def _bounds(cfg: OptConfig, dim: int) -> tuple[np.ndarray, np.ndarray]:
    (sf, sn, ls) = cfg.log_bounds
    lo = np.array([sf[0], sn[0]] + [ls[0]] * dim)
    hi = np.array([sf[1], sn[1]] + [ls[1]] * dim)
    return lo, hi


def _projected_grad(theta, g, lo, hi):
    pg = g.copy()
    pg[(theta <= lo) & (g < 0)] = 0.0
    pg[(theta >= hi) & (g > 0)] = 0.0
    return pg


def _ascend(data: Dataset, theta0: np.ndarray, cfg: OptConfig, lo, hi):
    theta = np.clip(theta0, lo, hi)
    f, g = log_marginal_and_grad(data, Hyperparams.from_log(theta))
    step = 1e-2 / max(1.0, float(np.abs(g).max()))
    prev = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        pg = _projected_grad(theta, g, lo, hi)
        if np.abs(pg).max() <= cfg.tol:
            return theta, f, pg, it - 1, True
        if prev is not None:
            # Barzilai-Borwein step length
            s, yv = theta - prev[0], g - prev[1]
            sy = float(s @ yv)
            if sy < 0:
                step = float(s @ s) / -sy
        t = min(max(step, 1e-10), 1e3)
        while True:
            cand = np.clip(theta + t * g, lo, hi)
            try:
                fc, gc = log_marginal_and_grad(data, Hyperparams.from_log(cand))
            except GPError:
                fc = -np.inf
            if fc >= f + 1e-4 * float(g @ (cand - theta)) and np.isfinite(fc):
                break
            t *= 0.5
            if t < 1e-14:
                return theta, f, pg, it, False
        prev = (theta, g)
        theta, f, g = cand, fc, gc
        step = t
    pg = _projected_grad(theta, g, lo, hi)
    return theta, f, pg, cfg.max_iter, bool(np.abs(pg).max() <= cfg.tol)


def optimize(data: Dataset, init: Hyperparams, cfg: OptConfig = OptConfig()) -> OptResult:
    """Maximise the log marginal likelihood by multi-start projected gradient
    ascent in log space (Barzilai-Borwein steps, Armijo backtracking)."""
    lo, hi = _bounds(cfg, init.dim)
    rng = np.random.default_rng(cfg.seed)
    theta_init = np.log(np.maximum([init.sigma_f, init.sigma_n, *init.lengthscales], 1e-300))
    f_init = log_marginal(fit(data, init))
    starts = [theta_init] + [
        theta_init + cfg.restart_spread * rng.standard_normal(theta_init.shape) for _ in range(max(cfg.restarts - 1, 0))
    ]
    best = None
    failures = 0
    for start in starts:
        try:
            theta, f, pg, iters, ok = _ascend(data, start, cfg, lo, hi)
        except GPError:
            failures += 1
            continue
        if best is None or f > best[1]:
            best = (theta, f, pg, iters, ok)
    if best is None:
        raise GPError(f"all {failures} optimizer starts failed to factorize")
    theta, f, pg, iters, ok = best
    hp = Hyperparams.from_log(theta)
    if f < f_init:
        hp, f = init, f_init
    if not ok:
        logger.warning("hyperparameter search stopped after %d iterations, |grad| = %.3g", iters, np.abs(pg).max())
    return OptResult(hp, f, float(np.abs(pg).max()), iters, ok, f_init)


def optimize_hyperparams(data: Dataset, init: Hyperparams, opt_config: OptConfig = OptConfig()) -> Hyperparams:
    return optimize(data, init, opt_config).hyperparams
