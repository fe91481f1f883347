"""GP model of melt-pool-area dynamics.

One-step model ``x[k+1] = f(x[k], T[k], p[k], v[k])`` where x is melt-pool
area (mm^2), T the lookahead surface temperature (K), p laser power (W) and
v scan speed (mm/s).  Inputs and target are standardised before the GP sees
them, so the zero-mean prior reverts to the mean training area.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import gp
from .gp import Dataset, Hyperparams, OptConfig, TrainedGP

FORMAT_VERSION = 1
INPUT_NAMES = ("area", "temp", "power", "speed")


@dataclass(frozen=True)
class DynSample:
    area: float
    temp: float
    power: float
    speed: float
    next_area: float

    def as_input(self) -> np.ndarray:
        return np.array([self.area, self.temp, self.power, self.speed])


def build_samples(records: Sequence, include_transitions: bool = True, rtol: float = 1e-9) -> list:
    """Pair consecutive log records into one-step transitions.

    Record k supplies (area, temp, power, speed); record k+1 supplies the
    target area.  Pairs whose endpoints sit on different tracks are kept
    unless ``include_transitions`` is False.
    """
    if len(records) < 2:
        return []
    times = np.array([r.time for r in records])
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ValueError("log records are not strictly time-ordered")
    period = steps[0]
    if np.any(np.abs(steps - period) > rtol * abs(period) + 1e-15):
        raise ValueError("log mixes sample periods")
    out = []
    for a, b in zip(records, records[1:]):
        if not include_transitions and abs(a.y - b.y) > 1e-9:
            continue
        out.append(DynSample(a.melt_area, a.lookahead_temp, a.power, a.speed, b.melt_area))
    return out


def unique_samples(samples: Sequence) -> list:
    """Drop exact repeats, keeping first occurrences in order.

    A deterministic plant at steady state emits the same transition many
    times; repeated rows carry no information and push the likelihood
    towards zero noise.
    """
    return list(dict.fromkeys(samples))


def sample_period(records: Sequence) -> float:
    if len(records) < 2:
        raise ValueError("need two records to infer the sample period")
    return records[1].time - records[0].time


@dataclass(frozen=True)
class Normalizer:
    input_mean: tuple
    input_std: tuple
    target_mean: float
    target_std: float

    def __post_init__(self):
        if min(self.input_std) <= 0 or self.target_std <= 0:
            raise ValueError("normalizer standard deviations must be positive")

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray) -> "Normalizer":
        X, y = np.asarray(X, float), np.asarray(y, float)
        mu, sd = X.mean(0), X.std(0)
        if np.any(sd <= 0) or y.std() <= 0:
            flat = [INPUT_NAMES[i] for i in np.nonzero(sd <= 0)[0]] + (["next_area"] if y.std() <= 0 else [])
            raise ValueError(f"zero spread in training data: {flat}")
        return cls(tuple(mu), tuple(sd), float(y.mean()), float(y.std()))

    def inputs(self, X):
        return (np.asarray(X, float) - np.asarray(self.input_mean)) / np.asarray(self.input_std)

    def inputs_back(self, Z):
        return np.asarray(Z, float) * np.asarray(self.input_std) + np.asarray(self.input_mean)

    def target(self, y):
        return (np.asarray(y, float) - self.target_mean) / self.target_std

    def target_back(self, z):
        return np.asarray(z, float) * self.target_std + self.target_mean


@dataclass(frozen=True)
class DynModel:
    gp: TrainedGP
    normalizer: Normalizer
    sample_period: float

    def __post_init__(self):
        if self.gp.hyperparams.dim != 4:
            raise ValueError("dynamics GP must have exactly 4 inputs")
        if not self.sample_period > 0:
            raise ValueError("sample period must be positive")

    def to_dict(self) -> dict:
        n = self.normalizer
        return {
            "format_version": FORMAT_VERSION,
            "kind": "slm-dynamics",
            "sample_period": self.sample_period,
            "normalizer": {
                "input_mean": list(n.input_mean),
                "input_std": list(n.input_std),
                "target_mean": n.target_mean,
                "target_std": n.target_std,
            },
            "gp": self.gp.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DynModel":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dynamics format version {doc.get('format_version')!r}")
        return cls(TrainedGP.from_dict(doc["gp"]), Normalizer(**doc["normalizer"]), doc["sample_period"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DynModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Linearization:
    """Local affine model x' = a_d x + b_d . (p, v) + c_d."""

    a_d: float
    b_d: np.ndarray
    c_d: float
    point: tuple  # (area, temp, power, speed)

    def predict(self, area: float, power: float, speed: float) -> float:
        return self.a_d * area + self.b_d[0] * power + self.b_d[1] * speed + self.c_d


def samples_to_arrays(samples: Sequence) -> tuple:
    X = np.array([s.as_input() for s in samples], float).reshape(-1, 4)
    y = np.array([s.next_area for s in samples], float)
    return X, y


def train_dynamics(
    samples: Sequence,
    opt_config: OptConfig = OptConfig(),
    sample_period: float = 50e-6,
    init: Hyperparams | None = None,
    noise_floor: float = 0.0,
) -> DynModel:
    """Fit the normalizer and GP on ``samples``.

    ``noise_floor`` is a lower bound on sigma_n in standardized target units;
    it overrides the lower log-bound for sigma_n in ``opt_config``.
    """
    if len(samples) < 2:
        raise ValueError("need at least two samples to train")
    X, y = samples_to_arrays(samples)
    norm = Normalizer.fit(X, y)
    data = Dataset(norm.inputs(X), norm.target(y))
    init = init or Hyperparams(1.0, max(0.1, noise_floor), (1.0, 1.0, 1.0, 1.0))
    if noise_floor > 0:
        bounds = list(opt_config.log_bounds)
        bounds[1] = (max(bounds[1][0], math.log(noise_floor)), max(bounds[1][1], math.log(noise_floor)))
        opt_config = replace(opt_config, log_bounds=tuple(bounds))
    hp = gp.optimize_hyperparams(data, init, opt_config)
    return DynModel(gp.fit(data, hp), norm, sample_period)


def predict_next(model: DynModel, area, temp, power, speed) -> float:
    z = model.normalizer.inputs([area, temp, power, speed])
    mean = float(gp.predict_mean(model.gp, z[None, :])[0])
    return max(float(model.normalizer.target_back(mean)), 0.0)


def predict_batch(model: DynModel, X) -> np.ndarray:
    z = model.normalizer.inputs(np.atleast_2d(X))
    return np.maximum(model.normalizer.target_back(gp.predict_mean(model.gp, z)), 0.0)


def rollout(model: DynModel, x0: float, temps: Sequence, inputs: Sequence) -> list:
    """Iterate the one-step model from x0; ``inputs`` holds (power, speed) pairs."""
    if len(temps) != len(inputs):
        raise ValueError(f"{len(temps)} temperatures but {len(inputs)} inputs")
    xs = [float(x0)]
    for T, (p, v) in zip(temps, inputs):
        xs.append(predict_next(model, xs[-1], T, p, v))
    return xs


def linearize(model: DynModel, area, temp, power, speed) -> Linearization:
    """First-order expansion of the one-step model with temperature frozen."""
    n = model.normalizer
    z = n.inputs([area, temp, power, speed])
    g = gp.predict_mean_grad(model.gp, z) * n.target_std / np.asarray(n.input_std)
    a_d = float(g[0])
    b_d = np.array([g[2], g[3]])
    x_next = predict_next(model, area, temp, power, speed)
    c_d = x_next - a_d * area - float(b_d[0] * power + b_d[1] * speed)
    return Linearization(a_d, b_d, c_d, (float(area), float(temp), float(power), float(speed)))


def evaluate(model: DynModel, samples: Sequence) -> dict:
    """Validation metrics: R^2, mean absolute error relative to mean |target| (%), RMSE."""
    X, y = samples_to_arrays(samples)
    pred = predict_batch(model, X)
    err = pred - y
    ss_res = float(err @ err)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return {
        "n": len(y),
        "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan,
        "mae_pct": 100.0 * float(np.abs(err).mean()) / float(np.abs(y).mean()),
        "rmse": math.sqrt(ss_res / len(y)),
        "predicted": pred,
        "actual": y,
    }
