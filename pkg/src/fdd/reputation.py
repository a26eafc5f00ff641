"""Beta-reputation bookkeeping for data sources (RSUs, vehicles, sensors)."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from .fuzzy import Verdict


class UnknownSource(KeyError):
    pass


class DuplicateSource(ValueError):
    pass


@dataclass
class ReputationRecord:
    id: str
    alpha: float = 1.0
    beta: float = 1.0
    last_detection_level: float = 0.0
    status: bool = False
    updated_at: int = 0
    quarantined: bool = False

    @property
    def level(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "alpha": self.alpha,
            "beta": self.beta,
            "R": self.level,
            "S": self.status,
            "D": self.last_detection_level,
            "updated_at": self.updated_at,
            "quarantined": self.quarantined,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReputationRecord":
        rec = cls(obj["id"], float(obj["alpha"]), float(obj["beta"]), float(obj["D"]),
                  bool(obj["S"]), int(obj["updated_at"]), bool(obj.get("quarantined", False)))
        if rec.alpha < 1 or rec.beta < 1:
            raise ValueError(f"{rec.id}: evidence counts below the prior")
        return rec


@dataclass(frozen=True)
class ReputationUpdate:
    id: str
    old_r: float
    new_r: float
    detection_level: float
    status: bool
    cause: Verdict


@dataclass(frozen=True)
class ReputationPolicy:
    yes_weight: float = 1.0
    warning_weight: float = 0.5
    floor: float = 0.3
    hysteresis: float = 0.05
    half_life_ms: float | None = None

    def __post_init__(self):
        if not 0.0 < self.floor < 1.0:
            raise ValueError("quarantine floor must lie in (0, 1)")
        if self.yes_weight < 0 or self.warning_weight < 0 or self.hysteresis < 0:
            raise ValueError("policy weights must be non-negative")
        if self.half_life_ms is not None and self.half_life_ms <= 0:
            raise ValueError("half-life must be positive")


def quarantine_check(record: ReputationRecord, floor: float = 0.3, hysteresis: float = 0.05) -> bool:
    """Hysteretic quarantine decision; also stores the new state on ``record``.

    A source enters quarantine when R drops below ``floor`` and leaves only
    once R climbs above ``floor + hysteresis``.
    """
    if not 0.0 < floor < 1.0:
        raise ValueError("quarantine floor must lie in (0, 1)")
    r = record.level
    if record.quarantined:
        record.quarantined = not r > floor + hysteresis
    else:
        record.quarantined = r < floor
    return record.quarantined


def apply_evidence(alpha: float, beta: float, verdict: Verdict, level: float,
                   policy: ReputationPolicy = ReputationPolicy()) -> tuple[float, float]:
    if verdict is Verdict.YES:
        beta += policy.yes_weight + level / 100.0
    elif verdict is Verdict.WARNING:
        beta += policy.warning_weight * (level / 100.0)
    else:
        alpha += 1.0
    return alpha, beta


class ReputationStore:
    """Single-writer reputation table for one RSU node."""

    def __init__(self, policy: ReputationPolicy | None = None):
        self.policy = policy or ReputationPolicy()
        self._records: dict[str, ReputationRecord] = {}

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def ids(self) -> list[str]:
        return sorted(self._records)

    def init(self, source_id: str, now: int = 0) -> ReputationRecord:
        if source_id in self._records:
            raise DuplicateSource(source_id)
        rec = ReputationRecord(source_id, updated_at=now)
        self._records[source_id] = rec
        return copy.copy(rec)

    def _get(self, source_id: str) -> ReputationRecord:
        try:
            return self._records[source_id]
        except KeyError:
            raise UnknownSource(source_id) from None

    def get_status(self, source_id: str) -> ReputationRecord:
        return copy.copy(self._get(source_id))

    def _decay(self, rec: ReputationRecord, now: int) -> None:
        if self.policy.half_life_ms is None or now <= rec.updated_at:
            return
        f = 0.5 ** ((now - rec.updated_at) / self.policy.half_life_ms)
        rec.alpha = 1.0 + (rec.alpha - 1.0) * f
        rec.beta = 1.0 + (rec.beta - 1.0) * f

    def update_rep(self, source_id: str, decision) -> ReputationUpdate:
        """Fold one detection decision (anything with verdict/severity/timestamp) into R."""
        rec = self._get(source_id)
        if getattr(decision, "malformed", False):
            raise ValueError("malformed frames carry no reputation evidence")
        verdict = Verdict(decision.verdict)
        level = float(decision.severity)
        if not (math.isfinite(level) and 0.0 <= level <= 100.0):
            raise ValueError("detection level must lie in [0, 100]")
        now = int(getattr(decision, "timestamp", rec.updated_at))
        old = rec.level
        self._decay(rec, now)
        rec.alpha, rec.beta = apply_evidence(rec.alpha, rec.beta, verdict, level, self.policy)
        rec.last_detection_level = level
        rec.status = verdict is Verdict.YES
        rec.updated_at = max(rec.updated_at, now)
        quarantine_check(rec, self.policy.floor, self.policy.hysteresis)
        return ReputationUpdate(source_id, old, rec.level, level, rec.status, verdict)

    def quarantine_check(self, source_id: str) -> bool:
        return quarantine_check(self._get(source_id), self.policy.floor, self.policy.hysteresis)

    def is_quarantined(self, source_id: str) -> bool:
        return source_id in self._records and self._records[source_id].quarantined

    def snapshot(self) -> list[dict]:
        return [self._records[k].to_json() for k in sorted(self._records)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"policy": asdict(self.policy), "records": self.snapshot()},
                                         indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ReputationStore":
        obj = json.loads(Path(path).read_text())
        store = cls(ReputationPolicy(**obj.get("policy", {})))
        for r in obj.get("records", []):
            rec = ReputationRecord.from_json(r)
            store._records[rec.id] = rec
        return store

    def replay(self, source_id: str, decisions: Iterable) -> ReputationRecord:
        """Fresh record for ``source_id`` built from a decision sequence."""
        other = ReputationStore(self.policy)
        other.init(source_id)
        for d in decisions:
            other.update_rep(source_id, d)
        return other.get_status(source_id)
