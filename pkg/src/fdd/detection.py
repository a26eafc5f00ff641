"""Behaviour-rule evaluation and fuzzy severity grading for vehicle telemetry.

A :class:`Detector` is owned by one roadside unit and processes its frame
stream sequentially.  Per-vehicle baselines live inside the detector; nothing
is shared between detectors.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple

from .fuzzy import FuzzySystem, Verdict, default_system

EPSILON = 1e-9
DEFAULT_WINDOW = 32
THRESHOLD_FRACTION = 0.25


class Rule(str, enum.Enum):
    R1_DELTA_I = "R1_delta_I"
    R2_PROB = "R2_prob"
    R3_ERROR = "R3_error"
    R4_WEIGHT = "R4_weight"


ESCALATION = frozenset({Rule.R1_DELTA_I, Rule.R3_ERROR, Rule.R4_WEIGHT})
GATING = ESCALATION


class MalformedFrame(ValueError):
    pass


@dataclass(frozen=True)
class TelemetryFrame:
    vehicle_id: str
    timestamp: int
    value: float
    error: float
    weight: float
    neighbor_ids: tuple[str, ...] = ()
    p_m: float | None = None
    p_f: float | None = None

    def validate(self) -> None:
        for name in ("value", "error", "weight"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise MalformedFrame(f"{name} is not a finite number")
        if self.error < 0 or self.weight < 0:
            raise MalformedFrame("error and weight must be non-negative")

    @classmethod
    def from_json(cls, record: dict) -> "TelemetryFrame":
        try:
            frame = cls(
                vehicle_id=str(record["vehicle_id"]),
                timestamp=int(record["timestamp"]),
                value=float(record["value"]),
                error=float(record["error"]),
                weight=float(record["weight"]),
                neighbor_ids=tuple(str(n) for n in record.get("neighbor_ids", ())),
                p_m=None if record.get("p_m") is None else float(record["p_m"]),
                p_f=None if record.get("p_f") is None else float(record["p_f"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFrame(f"bad frame record: {exc}") from None
        return frame

    def to_json(self) -> dict:
        out = {
            "vehicle_id": self.vehicle_id,
            "timestamp": self.timestamp,
            "value": self.value,
            "error": self.error,
            "weight": self.weight,
            "neighbor_ids": list(self.neighbor_ids),
        }
        if self.p_m is not None:
            out["p_m"] = self.p_m
        if self.p_f is not None:
            out["p_f"] = self.p_f
        return out


class VehicleBaseline:
    """Ring buffer of recent accepted frames for one vehicle."""

    def __init__(self, window: int = DEFAULT_WINDOW):
        if window < 1:
            raise ValueError("baseline window must be >= 1")
        self.window = window
        self._values: deque[float] = deque(maxlen=window)
        self._errors: deque[float] = deque(maxlen=window)
        self._weights: deque[float] = deque(maxlen=window)
        self.last_value: float | None = None
        self.last_timestamp: int | None = None

    def __len__(self) -> int:
        return len(self._errors)

    def observe(self, frame: TelemetryFrame) -> None:
        """Record the frame as the vehicle's latest reading without learning from it."""
        self.last_value = frame.value
        self.last_timestamp = frame.timestamp

    def add(self, frame: TelemetryFrame) -> None:
        self._values.append(frame.value)
        self._errors.append(frame.error)
        self._weights.append(frame.weight)
        self.observe(frame)

    @staticmethod
    def _stats(xs: deque[float]) -> tuple[float, float]:
        return math.fsum(xs) / len(xs), max(xs) - min(xs)

    @property
    def error_stats(self) -> tuple[float, float]:
        return self._stats(self._errors)

    @property
    def weight_stats(self) -> tuple[float, float]:
        return self._stats(self._weights)

    @property
    def value_range(self) -> float:
        return max(self._values) - min(self._values)


class Deviations(NamedTuple):
    error_dev_pct: float
    weight_dev_pct: float
    delta_i: float
    cold_start: bool = False


def compute_deviations(frame: TelemetryFrame, baseline: VehicleBaseline) -> Deviations:
    if len(baseline) == 0:
        return Deviations(0.0, 0.0, 0.0, cold_start=True)
    e_mean, e_range = baseline.error_stats
    w_mean, w_range = baseline.weight_stats
    error_dev = 100.0 * abs(frame.error - e_mean) / max(e_range, EPSILON)
    weight_dev = 100.0 * abs(frame.weight - w_mean) / max(w_range, EPSILON)
    last = baseline.last_value if baseline.last_value is not None else frame.value
    return Deviations(error_dev, weight_dev, abs(frame.value - last))


@dataclass(frozen=True)
class Thresholds:
    i_threshold: float
    e_threshold: float
    w_threshold: float
    baseline_window: int = DEFAULT_WINDOW
    p_threshold: float | None = None

    def __post_init__(self):
        for name in ("i_threshold", "e_threshold", "w_threshold"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number")
        if self.baseline_window < 1:
            raise ValueError("baseline_window must be >= 1")

    @classmethod
    def from_baseline(cls, baseline: VehicleBaseline, fraction: float = THRESHOLD_FRACTION) -> "Thresholds":
        """Thresholds a quarter of the observed spread away from the baseline mean."""
        e_mean, e_range = baseline.error_stats
        w_mean, w_range = baseline.weight_stats
        return cls(
            i_threshold=max(fraction * baseline.value_range, EPSILON),
            e_threshold=max(e_mean + fraction * e_range, EPSILON),
            w_threshold=max(w_mean - fraction * w_range, EPSILON),
            baseline_window=baseline.window,
        )


def apply_crisp_rules(frame: TelemetryFrame, thresholds: Thresholds, delta_i: float,
                      error_model: "ErrorProbabilityModel | None" = None) -> frozenset[Rule]:
    fired = set()
    if delta_i > thresholds.i_threshold:
        fired.add(Rule.R1_DELTA_I)
    if frame.error > thresholds.e_threshold:
        fired.add(Rule.R3_ERROR)
    # weight *below* its threshold is the anomalous direction
    if frame.weight < thresholds.w_threshold:
        fired.add(Rule.R4_WEIGHT)
    if error_model is not None and thresholds.p_threshold is not None and error_model.p_e > thresholds.p_threshold:
        fired.add(Rule.R2_PROB)
    return frozenset(fired)


@dataclass(frozen=True)
class ErrorProbabilityModel:
    p_m: float
    p_f: float
    p_e: float


def compose_error_probability(p_m: float, p_f: float) -> ErrorProbabilityModel:
    if not (math.isfinite(p_m) and 0.0 <= p_m <= 1.0):
        raise ValueError("P_M must lie in [0, 1]")
    if not (math.isfinite(p_f) and p_f >= 0.0):
        raise ValueError("P_F must be non-negative")
    return ErrorProbabilityModel(p_m, p_f, p_f + p_m)


@dataclass(frozen=True)
class DetectionDecision:
    vehicle_id: str
    verdict: Verdict
    severity: float
    triggered_rules: frozenset[Rule]
    timestamp: int
    error_dev_pct: float = 0.0
    weight_dev_pct: float = 0.0
    delta_i: float = 0.0
    flags: frozenset[str] = frozenset()
    error_model: ErrorProbabilityModel | None = None

    @property
    def malformed(self) -> bool:
        return "malformed" in self.flags

    def to_json(self) -> dict:
        out = {
            "vehicle_id": self.vehicle_id,
            "timestamp": self.timestamp,
            "verdict": self.verdict.name,
            "severity": round(self.severity, 6),
            "triggered_rules": sorted(r.value for r in self.triggered_rules),
            "error_dev_pct": round(self.error_dev_pct, 6),
            "weight_dev_pct": round(self.weight_dev_pct, 6),
            "delta_i": round(self.delta_i, 6),
            "flags": sorted(self.flags),
        }
        if self.error_model is not None:
            out["p_e"] = self.error_model.p_e
        return out


class Detector:
    """Per-RSU detection pipeline: deviations, crisp rules, fuzzy grading.

    Only frames that end with verdict NO are learned into the baseline, so
    injected readings do not drag the reference statistics toward themselves.
    ``thresholds=None`` derives thresholds from each vehicle's baseline.
    """

    def __init__(self, system: FuzzySystem | None = None, thresholds: Thresholds | None = None,
                 window: int = DEFAULT_WINDOW):
        self.system = system or default_system()
        self.thresholds = thresholds
        self.window = thresholds.baseline_window if thresholds else window
        self.baselines: dict[str, VehicleBaseline] = {}

    def baseline(self, vehicle_id: str) -> VehicleBaseline:
        if vehicle_id not in self.baselines:
            self.baselines[vehicle_id] = VehicleBaseline(self.window)
        return self.baselines[vehicle_id]

    def warm_up(self, frames: Iterable[TelemetryFrame]) -> None:
        for frame in frames:
            frame.validate()
            self.baseline(frame.vehicle_id).add(frame)

    def _malformed(self, frame: TelemetryFrame, reason: str) -> DetectionDecision:
        return DetectionDecision(frame.vehicle_id, Verdict.YES, 100.0, frozenset(), frame.timestamp,
                                 flags=frozenset({"malformed", reason}))

    def detect(self, frame: TelemetryFrame, update_baseline: bool = True) -> DetectionDecision:
        try:
            frame.validate()
        except MalformedFrame:
            return self._malformed(frame, "invalid-value")
        base = self.baseline(frame.vehicle_id)
        if base.last_timestamp is not None and frame.timestamp <= base.last_timestamp:
            return self._malformed(frame, "timestamp-regression")

        error_model = None
        if frame.p_m is not None and frame.p_f is not None:
            try:
                error_model = compose_error_probability(frame.p_m, frame.p_f)
            except ValueError:
                return self._malformed(frame, "bad-probability")

        dev = compute_deviations(frame, base)
        if dev.cold_start:
            if update_baseline:
                base.add(frame)
            return DetectionDecision(frame.vehicle_id, Verdict.NO, 0.0, frozenset(), frame.timestamp,
                                     flags=frozenset({"cold-start"}), error_model=error_model)

        thresholds = self.thresholds or Thresholds.from_baseline(base)
        fired = apply_crisp_rules(frame, thresholds, dev.delta_i, error_model)
        out = self.system.infer(dev.error_dev_pct, dev.weight_dev_pct)
        verdict, severity = out.verdict, out.severity
        flags = set()
        if any(out.clamped):
            flags.add("clamped")
        if out.inconclusive:
            flags.add("inconclusive")
        if verdict is not Verdict.NO and not (fired & GATING):
            # no behaviour rule is violated: deviation points the benign way
            verdict = Verdict.NO
            flags.add("gated")
        if ESCALATION <= fired and verdict is not Verdict.YES:
            verdict = Verdict.YES
            severity = max(severity, self.system.yes_floor)
            flags.add("escalated")

        if update_baseline:
            if verdict is Verdict.NO:
                base.add(frame)
            else:
                base.observe(frame)
        return DetectionDecision(frame.vehicle_id, verdict, severity, fired, frame.timestamp,
                                 dev.error_dev_pct, dev.weight_dev_pct, dev.delta_i,
                                 frozenset(flags), error_model)


def detect(frame: TelemetryFrame, thresholds: Thresholds | None, fuzzy_system: FuzzySystem,
           detector: Detector | None = None) -> DetectionDecision:
    """One-shot form; pass a ``detector`` to keep baselines across calls."""
    if detector is None:
        detector = Detector(fuzzy_system, thresholds)
    return detector.detect(frame)


def read_frames(stream: IO[str]) -> Iterator[TelemetryFrame | MalformedFrame]:
    """Parse NDJSON frames; unparsable lines yield a MalformedFrame in place."""
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield TelemetryFrame.from_json(json.loads(line))
        except (json.JSONDecodeError, MalformedFrame, AttributeError) as exc:
            yield MalformedFrame(f"line {lineno}: {exc}")


def write_decisions(decisions: Iterable[DetectionDecision], stream: IO[str]) -> int:
    n = 0
    for d in decisions:
        stream.write(json.dumps(d.to_json(), sort_keys=True) + "\n")
        n += 1
    return n
