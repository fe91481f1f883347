"""Scan plans, process waveforms and the nine training experiments.

The training campaign mirrors the nine-case design used for GP training:
four single 5 mm tracks and five bidirectional double tracks, with power and
speed either constant, sinusoidal, or a seeded band-limited "profile".
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

WAVEFORM_KINDS = ("constant", "sinusoid", "profile")
PROFILE_BAND = (100.0, 1000.0)  # Hz
PROFILE_TERMS = 4


@dataclass(frozen=True)
class Waveform:
    kind: str = "constant"
    base: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0  # Hz, sinusoid only
    seed: int = 0  # profile only
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.kind not in WAVEFORM_KINDS:
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        if self.lower > self.upper:
            raise ValueError("waveform clamp bounds are inverted")

    def _profile_terms(self):
        rng = np.random.default_rng(self.seed)
        freqs = rng.uniform(*PROFILE_BAND, size=PROFILE_TERMS)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=PROFILE_TERMS)
        weights = rng.uniform(0.5, 1.0, size=PROFILE_TERMS)
        return freqs, phases, weights / weights.sum()

    def __call__(self, t: float) -> float:
        return waveform_eval(self, t)


def waveform_eval(w: Waveform, t: float) -> float:
    if t < 0:
        raise ValueError("waveform time must be non-negative")
    if w.kind == "constant":
        value = w.base
    elif w.kind == "sinusoid":
        value = w.base + w.amplitude * math.sin(2.0 * math.pi * w.frequency * t)
    else:
        freqs, phases, weights = w._profile_terms()
        value = w.base + w.amplitude * float(np.sum(weights * np.sin(2.0 * math.pi * freqs * t + phases)))
    return min(max(value, w.lower), w.upper)


@dataclass(frozen=True)
class ScanPlan:
    """Straight tracks along x, in part coordinates (mm)."""

    tracks: tuple
    hatch: float
    bidirectional: bool
    power: Waveform
    speed: Waveform
    sample_period: float = 50e-6

    def __post_init__(self):
        tracks = tuple(tuple(tuple(float(c) for c in p) for p in tr) for tr in self.tracks)
        object.__setattr__(self, "tracks", tracks)
        if not tracks:
            raise ValueError("plan has no tracks")
        if self.sample_period <= 0:
            raise ValueError("sample period must be positive")
        for (x0, y0), (x1, y1) in tracks:
            if y0 != y1:
                raise ValueError("tracks must run along the x axis")
            if x0 == x1:
                raise ValueError("track length must be positive")
        if len(tracks) > 1:
            if self.hatch <= 0:
                raise ValueError("multi-track plans need a positive hatch")
            for a, b in zip(tracks, tracks[1:]):
                if abs(abs(b[0][1] - a[0][1]) - self.hatch) > 1e-9:
                    raise ValueError("adjacent tracks must be one hatch apart")

    @classmethod
    def raster(cls, n_tracks, length, hatch, power, speed, bidirectional=True, sample_period=50e-6):
        tracks = []
        for i in range(n_tracks):
            y = i * hatch
            forward = (i % 2 == 0) or not bidirectional
            tracks.append(((0.0, y), (length, y)) if forward else ((length, y), (0.0, y)))
        return cls(tuple(tracks), hatch, bidirectional, power, speed, sample_period)

    def directions(self) -> list:
        return [1.0 if x1 > x0 else -1.0 for (x0, _), (x1, _) in self.tracks]

    def bounding_box(self):
        xs = [p[0] for tr in self.tracks for p in tr]
        ys = [p[1] for tr in self.tracks for p in tr]
        return min(xs), max(xs), min(ys), max(ys)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tracks"] = [[list(p) for p in tr] for tr in self.tracks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanPlan":
        d = dict(d)
        d["power"] = Waveform(**d["power"])
        d["speed"] = Waveform(**d["speed"])
        d["tracks"] = tuple(tuple(tuple(p) for p in tr) for tr in d["tracks"])
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass(frozen=True)
class CaseDefaults:
    power: float = 250.0  # W
    speed: float = 800.0  # mm/s
    hatch: float = 0.1  # mm
    track_length: float = 5.0  # mm
    sample_period: float = 50e-6  # s
    power_bounds: tuple = (0.0, 350.0)
    speed_bounds: tuple = (400.0, 1200.0)
    power_sine: tuple = (50.0, 200.0)  # amplitude W, frequency Hz
    speed_sine: tuple = (200.0, 150.0)  # amplitude mm/s, frequency Hz
    power_profile_amplitude: float = 100.0
    speed_profile_amplitude: float = 200.0
    seed: int = 0


# (power kind, speed kind, hatch); hatch None means single track
CASE_TABLE = {
    1: ("constant", "constant", None),
    2: ("sinusoid", "constant", None),
    3: ("constant", "sinusoid", None),
    4: ("sinusoid", "sinusoid", None),
    5: ("constant", "constant", 0.1),
    6: ("constant", "constant", 0.15),
    7: ("constant", "constant", 0.05),
    8: ("sinusoid", "profile", 0.1),
    9: ("profile", "profile", 0.1),
}


def _waveform(kind, base, sine, profile_amp, bounds, seed) -> Waveform:
    lo, hi = bounds
    if kind == "constant":
        return Waveform("constant", base, lower=lo, upper=hi)
    if kind == "sinusoid":
        return Waveform("sinusoid", base, sine[0], sine[1], lower=lo, upper=hi)
    return Waveform("profile", base, profile_amp, seed=seed, lower=lo, upper=hi)


def make_case(case_id: int, defaults: CaseDefaults = CaseDefaults()) -> ScanPlan:
    if case_id not in CASE_TABLE:
        raise ValueError(f"case id must be 1..9, got {case_id!r}")
    p_kind, v_kind, hatch = CASE_TABLE[case_id]
    d = defaults
    power = _waveform(
        p_kind, d.power, d.power_sine, d.power_profile_amplitude, d.power_bounds, 1000 * d.seed + 10 * case_id
    )
    speed = _waveform(
        v_kind, d.speed, d.speed_sine, d.speed_profile_amplitude, d.speed_bounds, 1000 * d.seed + 10 * case_id + 1
    )
    n_tracks = 1 if hatch is None else 2
    return ScanPlan.raster(n_tracks, d.track_length, hatch or 0.0, power, speed, True, d.sample_period)


def all_cases(defaults: CaseDefaults = CaseDefaults()) -> list:
    return [make_case(i, defaults) for i in CASE_TABLE]


def subsample_split(samples: Sequence, train_count: int, seed: int):
    """Uniform random split without replacement; order within each part follows the input."""
    total = len(samples)
    if train_count > total or train_count < 0:
        raise ValueError(f"cannot draw {train_count} training samples from {total}")
    rng = np.random.default_rng(seed)
    chosen = np.zeros(total, bool)
    chosen[rng.choice(total, size=train_count, replace=False)] = True
    train = [s for s, c in zip(samples, chosen) if c]
    val = [s for s, c in zip(samples, chosen) if not c]
    return train, val
