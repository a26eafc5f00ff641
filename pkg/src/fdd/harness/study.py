"""Detection study: per-case accuracy, ROC over severity cutoffs, accuracy versus injection rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..detection import Detector
from ..fuzzy import FuzzySystem, Verdict, default_system
from .scenario import InjectionScenario, generate_scenario

CUTOFFS = tuple(range(0, 101))
DEFAULT_RATES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class CaseResult:
    vehicle_id: str
    frames: int
    injected: int
    flagged: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.frames

    @property
    def deviation(self) -> float:
        """Percentage-point gap between flagged and injected share of frames."""
        return 100.0 * abs(self.flagged - self.injected) / self.frames


def _rate(num: int, den: int) -> float:
    return num / den if den else math.nan


@dataclass(frozen=True)
class RocCurve:
    points: tuple[tuple[int, float, float], ...]  # (cutoff, fpr, tpr), cutoff descending

    @classmethod
    def from_scores(cls, scores: list[float], labels: list[bool], cutoffs=CUTOFFS) -> "RocCurve":
        pos = sum(labels)
        neg = len(labels) - pos
        pts = []
        for c in sorted(cutoffs, reverse=True):
            tp = sum(1 for s, y in zip(scores, labels) if y and s >= c)
            fp = sum(1 for s, y in zip(scores, labels) if not y and s >= c)
            pts.append((c, _rate(fp, neg), _rate(tp, pos)))
        return cls(tuple(pts))

    def at(self, cutoff: int) -> tuple[float, float]:
        for c, fpr, tpr in self.points:
            if c == cutoff:
                return fpr, tpr
        raise KeyError(cutoff)

    @property
    def auc(self) -> float:
        xy = [(f, t) for _, f, t in self.points]
        if any(math.isnan(v) for p in xy for v in p):
            return math.nan
        xy = [(0.0, 0.0)] + xy + [(1.0, 1.0)]
        return sum((x1 - x0) * (y0 + y1) / 2.0 for (x0, y0), (x1, y1) in zip(xy, xy[1:]))


@dataclass(frozen=True)
class AccuracyRow:
    injection_rate: float
    accuracy: float
    deviation: float
    tpr: float
    fpr: float


@dataclass
class StudyResult:
    scenario: InjectionScenario
    cases: list[CaseResult]
    roc: RocCurve
    table: list[AccuracyRow] = field(default_factory=list)
    checksum_before: str = ""
    checksum_after: str = ""

    @property
    def accuracy(self) -> float:
        return sum(c.tp + c.tn for c in self.cases) / max(1, sum(c.frames for c in self.cases))

    @property
    def labels_intact(self) -> bool:
        return self.checksum_before == self.checksum_after


def _detect(scenario: InjectionScenario, system: FuzzySystem):
    """Severity and verdict per frame; baselines stay frozen after warm-up."""
    det = Detector(system)
    results = []
    for case in scenario.cases:
        det.warm_up(case.warmup)
        out = []
        for frame in case.frames:
            d = det.detect(frame, update_baseline=False)
            out.append((d.severity, d.verdict is not Verdict.NO))
        results.append(out)
    return results


def _score(scenario: InjectionScenario, system: FuzzySystem):
    cases, scores, labels = [], [], []
    for case, out in zip(scenario.cases, _detect(scenario, system)):
        tp = fp = tn = fn = 0
        for (sev, flagged), y in zip(out, case.labels):
            scores.append(sev)
            labels.append(y)
            if flagged and y:
                tp += 1
            elif flagged:
                fp += 1
            elif y:
                fn += 1
            else:
                tn += 1
        cases.append(CaseResult(case.vehicle_id, len(case.frames), case.injected, tp + fp, tp, fp, tn, fn))
    return cases, scores, labels


def _row(rate: float, cases: list[CaseResult]) -> AccuracyRow:
    frames = sum(c.frames for c in cases)
    return AccuracyRow(
        rate,
        sum(c.tp + c.tn for c in cases) / frames,
        sum(c.deviation for c in cases) / len(cases),
        _rate(sum(c.tp for c in cases), sum(c.tp + c.fn for c in cases)),
        _rate(sum(c.fp for c in cases), sum(c.fp + c.tn for c in cases)),
    )


def run_detection_study(scenario: InjectionScenario, system: FuzzySystem | None = None,
                        rates=DEFAULT_RATES) -> StudyResult:
    """Score ``scenario`` and repeat its generator settings at each of ``rates``."""
    system = system or default_system()
    before = scenario.checksum()
    cases, scores, labels = _score(scenario, system)
    result = StudyResult(scenario, cases, RocCurve.from_scores(scores, labels), checksum_before=before)
    for rate in rates:
        sc = generate_scenario(scenario.seed, scenario.n_cases, rate, scenario.error_band,
                               scenario.weight_band, scenario.clean_band, scenario.frames_per_case)
        rc, _, _ = _score(sc, system)
        if rc:
            result.table.append(_row(rate, rc))
    result.checksum_after = scenario.checksum()
    return result
