"""Synthetic telemetry with controlled false-data injection.

Each case is one vehicle.  A warm-up window pins the baseline mean and
range exactly (two alternating readings), so a declared deviation of ``d``
percent maps to a reading ``d/100`` of a baseline range away from the mean.
Injected readings push error up and weight down, the anomalous directions.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from ..detection import DEFAULT_WINDOW, TelemetryFrame

FRAME_STEP_MS = 100


@dataclass(frozen=True)
class Band:
    """Deviation range in percent.  Injected draws use (lo, hi], clean draws [lo, hi)."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise ValueError(f"empty range ({self.lo}, {self.hi})")
        if self.lo < 0:
            raise ValueError("deviations are non-negative")

    @classmethod
    def parse(cls, text: str) -> "Band":
        lo, _, hi = text.partition("..")
        return cls(float(lo), float(hi))

    def draw_open_low(self, rng: random.Random) -> float:
        return self.lo + (self.hi - self.lo) * (1.0 - rng.random())

    def draw_open_high(self, rng: random.Random) -> float:
        return self.lo + (self.hi - self.lo) * rng.random()

    def __str__(self) -> str:
        return f"{self.lo:g}..{self.hi:g}"


@dataclass(frozen=True)
class VehicleProfile:
    error_mean: float
    error_range: float
    weight_mean: float
    weight_range: float
    value_mean: float
    value_range: float

    def warmup(self, vehicle_id: str, count: int) -> list[TelemetryFrame]:
        frames = []
        for i in range(count):
            s = 0.5 if i % 2 else -0.5
            frames.append(TelemetryFrame(vehicle_id, i * FRAME_STEP_MS,
                                         self.value_mean + s * self.value_range,
                                         self.error_mean + s * self.error_range,
                                         self.weight_mean - s * self.weight_range))
        return frames


@dataclass(frozen=True)
class Case:
    vehicle_id: str
    profile: VehicleProfile
    warmup: tuple[TelemetryFrame, ...]
    frames: tuple[TelemetryFrame, ...]
    labels: tuple[bool, ...]
    error_devs: tuple[float, ...]
    weight_devs: tuple[float, ...]

    @property
    def injected(self) -> int:
        return sum(self.labels)


@dataclass(frozen=True)
class InjectionScenario:
    seed: int
    n_cases: int
    injection_rate: float
    error_band: Band
    weight_band: Band
    clean_band: Band
    frames_per_case: int
    cases: tuple[Case, ...] = field(repr=False, default=())

    @property
    def labels(self) -> tuple[bool, ...]:
        return tuple(x for c in self.cases for x in c.labels)

    def checksum(self) -> str:
        return hashlib.sha256(bytes(self.labels)).hexdigest()


def generate_scenario(seed: int = 0, n_cases: int = 30, injection_rate: float = 0.3,
                      error_band: Band | str = Band(20.0, 100.0), weight_band: Band | str = Band(20.0, 100.0),
                      clean_band: Band | str = Band(0.0, 10.0), frames_per_case: int = 50,
                      warmup: int = DEFAULT_WINDOW) -> InjectionScenario:
    """Labels are fixed up front: exactly round(rate * frames) injected frames per case."""
    if not 0.0 <= injection_rate <= 1.0:
        raise ValueError("injection_rate must lie in [0, 1]")
    if n_cases < 0 or frames_per_case < 1 or warmup < 2:
        raise ValueError("need n_cases >= 0, frames_per_case >= 1, warmup >= 2")
    bands = [b if isinstance(b, Band) else Band.parse(b) for b in (error_band, weight_band, clean_band)]
    error_band, weight_band, clean_band = bands
    rng = random.Random(seed)
    cases = []
    n_inj = round(injection_rate * frames_per_case)
    for c in range(n_cases):
        vid = f"veh-{c:03d}"
        prof = VehicleProfile(rng.uniform(5, 15), rng.uniform(2, 6), rng.uniform(60, 80),
                              rng.uniform(10, 20), rng.uniform(20, 80), rng.uniform(1, 4))
        warm = prof.warmup(vid, warmup)
        last_value = warm[-1].value
        injected = set(rng.sample(range(frames_per_case), n_inj))
        frames, labels, e_devs, w_devs = [], [], [], []
        for i in range(frames_per_case):
            ts = (warmup + i) * FRAME_STEP_MS
            if i in injected:
                de, dw = error_band.draw_open_low(rng), weight_band.draw_open_low(rng)
                se, sw = 1.0, -1.0
                value = last_value + de / 100.0 * prof.value_range
            else:
                de, dw = clean_band.draw_open_high(rng), clean_band.draw_open_high(rng)
                se, sw = rng.choice((1.0, -1.0)), rng.choice((1.0, -1.0))
                value = last_value + rng.uniform(-0.05, 0.05) * prof.value_range
            frames.append(TelemetryFrame(vid, ts, value,
                                         prof.error_mean + se * de / 100.0 * prof.error_range,
                                         prof.weight_mean + sw * dw / 100.0 * prof.weight_range))
            labels.append(i in injected)
            e_devs.append(de)
            w_devs.append(dw)
        cases.append(Case(vid, prof, tuple(warm), tuple(frames), tuple(labels), tuple(e_devs), tuple(w_devs)))
    return InjectionScenario(seed, n_cases, injection_rate, error_band, weight_band, clean_band,
                             frames_per_case, tuple(cases))
