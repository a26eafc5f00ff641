"""Mamdani fuzzy inference over two deviation inputs.

Membership functions are vectorised over numpy arrays.  The aggregated output
curve is sampled on a uniform grid refined with every breakpoint of the
clipped/aggregated shape, so for piecewise-linear partitions the centroid is
exact rather than a grid approximation.
"""

from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Verdict",
    "MembershipFunction",
    "LinguisticVariable",
    "RuleMatrix",
    "FuzzyOutput",
    "FuzzySystem",
    "InconclusiveError",
    "evaluate_mf",
    "fuzzify",
    "infer",
    "defuzzify_centroid",
    "default_system",
    "gaussian_system",
    "spline_system",
    "load_config",
    "dump_config",
]

MF_KINDS = ("triangular", "trapezoidal", "gaussian", "spline")
DEFAULT_RESOLUTION = 1001


class Verdict(enum.IntEnum):
    NO = 0
    WARNING = 1
    YES = 2

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown verdict {text!r}") from None


class InconclusiveError(ValueError):
    """Raised when an aggregated output curve carries no mass."""


def _bspline_basis(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Cox-de Boor for the single basis element spanning all knots.
    k = len(knots) - 1
    x = np.asarray(x, dtype=float)
    last = knots[-1]
    basis = []
    for i in range(k):
        lo, hi = knots[i], knots[i + 1]
        if hi == last:
            b = ((x >= lo) & (x <= hi)).astype(float)
        else:
            b = ((x >= lo) & (x < hi)).astype(float)
        basis.append(b)
    for order in range(2, k + 1):
        nxt = []
        for i in range(k - order + 1):
            left_den = knots[i + order - 1] - knots[i]
            right_den = knots[i + order] - knots[i + 1]
            term = np.zeros_like(x)
            if left_den > 0:
                term = term + (x - knots[i]) / left_den * basis[i]
            if right_den > 0:
                term = term + (knots[i + order] - x) / right_den * basis[i + 1]
            nxt.append(term)
        basis = nxt
    return basis[0]


@dataclass(frozen=True)
class MembershipFunction:
    kind: str
    params: tuple[float, ...]
    label: str = ""
    _peak: float = field(default=1.0, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if self.kind not in MF_KINDS:
            raise ValueError(f"unknown membership function kind {self.kind!r}")
        if not all(math.isfinite(p) for p in params):
            raise ValueError("membership parameters must be finite")
        if self.kind == "triangular":
            if len(params) != 3:
                raise ValueError("triangular needs (a, b, c)")
            a, b, c = params
            if not a <= b <= c or a == c:
                raise ValueError(f"triangular requires a <= b <= c with a < c, got {params}")
        elif self.kind == "trapezoidal":
            if len(params) != 4:
                raise ValueError("trapezoidal needs (a, b, c, d)")
            a, b, c, d = params
            if not a <= b <= c <= d or a == d:
                raise ValueError(f"trapezoidal requires a <= b <= c <= d with a < d, got {params}")
        elif self.kind == "gaussian":
            if len(params) != 2:
                raise ValueError("gaussian needs (center, sigma)")
            if params[1] <= 0:
                raise ValueError("gaussian sigma must be positive")
        else:
            if len(params) < 3:
                raise ValueError("spline needs at least 3 knots")
            knots = np.array(params)
            if np.any(np.diff(knots) < 0) or knots[0] == knots[-1]:
                raise ValueError("spline knots must be non-decreasing with distinct ends")
            # multiplicity above the order collapses the element to zero
            _, counts = np.unique(knots, return_counts=True)
            if counts.max() >= len(knots) - 1:
                raise ValueError("spline knot multiplicity too high")
            object.__setattr__(self, "_peak", self._spline_peak(knots))

    @staticmethod
    def _spline_peak(knots: np.ndarray) -> float:
        xs = np.linspace(knots[0], knots[-1], 4001)
        ys = _bspline_basis(knots, xs)
        i = int(np.argmax(ys))
        lo = xs[max(i - 1, 0)]
        hi = xs[min(i + 1, len(xs) - 1)]
        # golden-section refinement around the sampled maximum
        g = (math.sqrt(5) - 1) / 2
        for _ in range(80):
            m1 = hi - g * (hi - lo)
            m2 = lo + g * (hi - lo)
            if _bspline_basis(knots, np.array([m1]))[0] < _bspline_basis(knots, np.array([m2]))[0]:
                lo = m1
            else:
                hi = m2
        return float(max(ys[i], _bspline_basis(knots, np.array([(lo + hi) / 2]))[0]))

    @property
    def order(self) -> int:
        """Spline order m (degree m - 1); only meaningful for splines."""
        return len(self.params) - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "gaussian":
            c, s = p
            out = np.exp(-((x - c) ** 2) / (2.0 * s * s))
        elif self.kind == "spline":
            out = _bspline_basis(np.array(p), x) / self._peak
        else:
            if self.kind == "triangular":
                a, b, c, d = p[0], p[1], p[1], p[2]
            else:
                a, b, c, d = p
            out = np.where((x >= b) & (x <= c), 1.0, 0.0)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                if b > a:
                    out = np.where((x > a) & (x < b), (x - a) / (b - a), out)
                if d > c:
                    out = np.where((x > c) & (x < d), (d - x) / (d - c), out)
        return np.clip(out, 0.0, 1.0)

    def breakpoints(self) -> list[float]:
        if self.kind == "gaussian":
            return [self.params[0]]
        return list(self.params)

    def level_crossings(self, level: float) -> list[float]:
        """Points where the curve equals ``level``; exact for linear kinds."""
        if not 0.0 < level < 1.0:
            return []
        p = self.params
        if self.kind == "gaussian":
            c, s = p
            w = s * math.sqrt(-2.0 * math.log(level))
            return [c - w, c + w]
        if self.kind == "spline":
            return []
        if self.kind == "triangular":
            a, b, c, d = p[0], p[1], p[1], p[2]
        else:
            a, b, c, d = p
        out = []
        if b > a:
            out.append(a + level * (b - a))
        if d > c:
            out.append(d - level * (d - c))
        return out

    @property
    def peak_location(self) -> float:
        p = self.params
        if self.kind == "gaussian":
            return p[0]
        if self.kind == "triangular":
            return p[1]
        if self.kind == "trapezoidal":
            return (p[1] + p[2]) / 2.0
        xs = np.linspace(p[0], p[-1], 4001)
        return float(xs[int(np.argmax(self(xs)))])

    def spec_string(self) -> str:
        return " ".join([self.kind] + [format(v, ".17g") for v in self.params])


def evaluate_mf(mf: MembershipFunction, x: float) -> float:
    if not math.isfinite(x):
        raise ValueError("membership input must be finite")
    return float(mf(np.array([x]))[0])


@dataclass(frozen=True)
class LinguisticVariable:
    name: str
    range: tuple[float, float]
    terms: tuple[MembershipFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "range", (float(self.range[0]), float(self.range[1])))
        object.__setattr__(self, "terms", tuple(self.terms))
        lo, hi = self.range
        if not lo < hi:
            raise ValueError(f"{self.name}: empty range {self.range}")
        if not self.terms:
            raise ValueError(f"{self.name}: no terms")
        labels = [t.label for t in self.terms]
        if len(set(labels)) != len(labels) or not all(labels):
            raise ValueError(f"{self.name}: term labels must be unique and non-empty")
        xs = np.linspace(lo, hi, 2001)
        cover = np.max(np.vstack([t(xs) for t in self.terms]), axis=0)
        if np.any(cover <= 0.0):
            gap = float(xs[np.argmax(cover <= 0.0)])
            raise ValueError(f"{self.name}: terms leave x={gap:g} uncovered")

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.terms]

    def term(self, label: str) -> MembershipFunction:
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(f"{self.name} has no term {label!r}")

    def clamp(self, x: float) -> tuple[float, bool]:
        lo, hi = self.range
        if x < lo:
            return lo, True
        if x > hi:
            return hi, True
        return float(x), False


def fuzzify(var: LinguisticVariable, x: float) -> tuple[dict[str, float], bool]:
    """Degree of ``x`` in every term of ``var``; also reports whether x was clamped."""
    if not math.isfinite(x):
        raise ValueError("fuzzify input must be finite")
    x, clamped = var.clamp(x)
    arr = np.array([x])
    return {t.label: float(t(arr)[0]) for t in var.terms}, clamped


@dataclass(frozen=True)
class RuleMatrix:
    error_terms: tuple[str, ...]
    weight_terms: tuple[str, ...]
    cells: tuple[tuple[Verdict, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "error_terms", tuple(self.error_terms))
        object.__setattr__(self, "weight_terms", tuple(self.weight_terms))
        cells = tuple(tuple(Verdict(c) for c in row) for row in self.cells)
        object.__setattr__(self, "cells", cells)
        if len(cells) != len(self.error_terms) or any(len(r) != len(self.weight_terms) for r in cells):
            raise ValueError("rule matrix must populate every (error, weight) cell")
        for i, row in enumerate(cells):
            for j, v in enumerate(row):
                if i > 0 and v < cells[i - 1][j]:
                    raise ValueError("rule matrix is not monotone along the error axis")
                if j > 0 and v < row[j - 1]:
                    raise ValueError("rule matrix is not monotone along the weight axis")
        if cells[0][0] != Verdict.NO:
            raise ValueError("the least severe cell must be NO")

    def cell(self, error_term: str, weight_term: str) -> Verdict:
        return self.cells[self.error_terms.index(error_term)][self.weight_terms.index(weight_term)]

    def rules(self) -> Iterable[tuple[str, str, Verdict]]:
        for i, e in enumerate(self.error_terms):
            for j, w in enumerate(self.weight_terms):
                yield e, w, self.cells[i][j]


DEFAULT_MATRIX = RuleMatrix(
    error_terms=("trivial", "fair", "vital"),
    weight_terms=("minor", "average", "major"),
    cells=(
        (Verdict.NO, Verdict.NO, Verdict.WARNING),
        (Verdict.NO, Verdict.WARNING, Verdict.YES),
        (Verdict.WARNING, Verdict.YES, Verdict.YES),
    ),
)


@dataclass(frozen=True)
class FuzzyOutput:
    verdict: Verdict
    severity: float
    firing_strengths: dict[tuple[str, str], float]
    inconclusive: bool = False
    clamped: tuple[bool, bool] = (False, False)

    @property
    def winning_strength(self) -> float:
        return max(self.firing_strengths.values(), default=0.0)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.name,
            "severity": round(self.severity, 6),
            "inconclusive": self.inconclusive,
            "clamped": list(self.clamped),
            "firing_strengths": {f"{e}.{w}": round(s, 6) for (e, w), s in self.firing_strengths.items()},
        }


def defuzzify_centroid(xs, mu) -> float:
    """Centroid of a sampled curve, exact for its piecewise-linear interpolant."""
    xs = np.asarray(xs, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if xs.shape != mu.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("curve needs matching 1-D sample arrays of length >= 2")
    h = np.diff(xs)
    m0, m1 = mu[:-1], mu[1:]
    area = float(np.sum(h * (m0 + m1)) / 2.0)
    if not area > 0.0:
        raise InconclusiveError("aggregated output has no mass")
    moment = float(np.sum(h * (xs[:-1] * (2 * m0 + m1) + xs[1:] * (m0 + 2 * m1))) / 6.0)
    return min(max(moment / area, xs[0]), xs[-1])


def _insert_pairwise_crossings(xs: np.ndarray, curves: np.ndarray) -> np.ndarray:
    extra = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            d = curves[i] - curves[j]
            idx = np.nonzero(d[:-1] * d[1:] < 0)[0]
            if len(idx):
                d0, d1 = d[idx], d[idx + 1]
                extra.append(xs[idx] - d0 * (xs[idx + 1] - xs[idx]) / (d1 - d0))
    if not extra:
        return xs
    return np.unique(np.concatenate([xs, *extra]))


@dataclass(frozen=True)
class FuzzySystem:
    error: LinguisticVariable
    weight: LinguisticVariable
    detection: LinguisticVariable
    matrix: RuleMatrix = DEFAULT_MATRIX
    implication: str = "min"
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.implication not in ("min", "product"):
            raise ValueError("implication must be 'min' or 'product'")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        missing = set(self.matrix.error_terms) ^ set(self.error.labels)
        missing |= set(self.matrix.weight_terms) ^ set(self.weight.labels)
        if missing:
            raise ValueError(f"rule matrix and variables disagree on terms: {sorted(missing)}")
        if set(self.detection.labels) != {v.name for v in Verdict}:
            raise ValueError("output variable must define NO, WARNING and YES terms")

    def output_term(self, verdict: Verdict) -> MembershipFunction:
        return self.detection.term(verdict.name)

    def aggregate(self, levels: Mapping[Verdict, float]) -> tuple[np.ndarray, np.ndarray]:
        """Sampled aggregated output curve for per-verdict activation levels."""
        lo, hi = self.detection.range
        active = [(self.output_term(v), float(s)) for v, s in sorted(levels.items()) if s > 0.0]
        xs = [np.linspace(lo, hi, self.resolution)]
        for mf, s in active:
            xs.append(np.array(mf.breakpoints(), dtype=float))
            if self.implication == "min":
                xs.append(np.array(mf.level_crossings(s), dtype=float))
        grid = np.unique(np.clip(np.concatenate(xs), lo, hi))
        if not active:
            return grid, np.zeros_like(grid)

        def curves(g):
            if self.implication == "min":
                return np.vstack([np.minimum(s, mf(g)) for mf, s in active])
            return np.vstack([s * mf(g) for mf, s in active])

        c = curves(grid)
        if len(active) > 1:
            refined = _insert_pairwise_crossings(grid, c)
            if len(refined) != len(grid):
                grid = refined
                c = curves(grid)
        return grid, c.max(axis=0)

    def classify(self, severity: float) -> Verdict:
        """Output region holding ``severity``; ties go to the more severe verdict."""
        x = np.array([severity])
        best, best_deg = Verdict.NO, -1.0
        for v in Verdict:
            deg = float(self.output_term(v)(x)[0])
            if deg >= best_deg:
                best, best_deg = v, deg
        if best_deg <= 0.0:
            best = min(Verdict, key=lambda v: (abs(self.output_term(v).peak_location - severity), -v))
        return best

    @cached_property
    def yes_floor(self) -> float:
        """Smallest severity (0.01 resolution) classified as YES."""
        lo, hi = self.detection.range
        xs = np.linspace(lo, hi, int(round((hi - lo) * 100)) + 1)
        degs = np.vstack([self.output_term(v)(xs) for v in Verdict])
        # reversed argmax picks the most severe label on ties
        winner = len(Verdict) - 1 - np.argmax(degs[::-1], axis=0)
        hits = np.nonzero((winner == Verdict.YES) & (degs.max(axis=0) > 0))[0]
        return round(float(xs[hits[0]]), 2) if len(hits) else hi

    def infer(self, error_x: float, weight_x: float) -> FuzzyOutput:
        if not (math.isfinite(error_x) and math.isfinite(weight_x)):
            raise ValueError("inference inputs must be finite")
        e_deg, e_clamped = fuzzify(self.error, error_x)
        w_deg, w_clamped = fuzzify(self.weight, weight_x)
        strengths: dict[tuple[str, str], float] = {}
        levels = {v: 0.0 for v in Verdict}
        for e, w, v in self.matrix.rules():
            s = min(e_deg[e], w_deg[w])
            strengths[(e, w)] = s
            levels[v] = max(levels[v], s)
        clamped = (e_clamped, w_clamped)
        if max(levels.values()) <= 0.0:
            return FuzzyOutput(Verdict.NO, 0.0, strengths, inconclusive=True, clamped=clamped)
        xs, mu = self.aggregate(levels)
        severity = defuzzify_centroid(xs, mu)
        return FuzzyOutput(self.classify(severity), severity, strengths, clamped=clamped)

    def with_implication(self, implication: str) -> "FuzzySystem":
        return FuzzySystem(self.error, self.weight, self.detection, self.matrix, implication, self.resolution)


def infer(matrix: RuleMatrix, error_x: float, weight_x: float,
          variables: Sequence[LinguisticVariable], implication: str = "min") -> FuzzyOutput:
    by_name = {v.name: v for v in variables}
    try:
        system = FuzzySystem(by_name["Error"], by_name["Weight"], by_name["Detection"], matrix, implication)
    except KeyError as exc:
        raise ValueError(f"missing linguistic variable {exc.args[0]}") from None
    return system.infer(error_x, weight_x)


def _var(name: str, terms: Sequence[tuple[str, str, Sequence[float]]], rng=(0.0, 100.0)) -> LinguisticVariable:
    return LinguisticVariable(name, rng, tuple(MembershipFunction(k, tuple(p), label) for label, k, p in terms))


def default_system() -> FuzzySystem:
    error = _var("Error", [
        ("trivial", "trapezoidal", (0, 0, 15, 30)),
        ("fair", "triangular", (20, 37.5, 55)),
        ("vital", "trapezoidal", (45, 60, 100, 100)),
    ])
    weight = _var("Weight", [
        ("minor", "trapezoidal", (0, 0, 15, 30)),
        ("average", "triangular", (20, 37.5, 55)),
        ("major", "trapezoidal", (45, 60, 100, 100)),
    ])
    detection = _var("Detection", [
        ("NO", "trapezoidal", (0, 0, 20, 40)),
        ("WARNING", "triangular", (30, 50, 70)),
        ("YES", "trapezoidal", (60, 80, 100, 100)),
    ])
    return FuzzySystem(error, weight, detection)


# Smooth presets sharing peak locations, used to compare MF families.
_SMOOTH_PEAKS = {
    "inputs": (("trivial", "minor", 0.0), ("fair", "average", 37.5), ("vital", "major", 100.0)),
    "output": (("NO", 10.0), ("WARNING", 50.0), ("YES", 90.0)),
}


def gaussian_system() -> FuzzySystem:
    e_terms, w_terms = [], []
    for e, w, c in _SMOOTH_PEAKS["inputs"]:
        sigma = 22.0 if c == 100.0 else 11.0
        e_terms.append((e, "gaussian", (c, sigma)))
        w_terms.append((w, "gaussian", (c, sigma)))
    out = [(v, "gaussian", (c, 12.0)) for v, c in _SMOOTH_PEAKS["output"]]
    return FuzzySystem(_var("Error", e_terms), _var("Weight", w_terms), _var("Detection", out))


def _cubic_knots(center: float, half_width: float) -> tuple[float, ...]:
    step = half_width / 2.0
    return tuple(center + step * k for k in (-2, -1, 0, 1, 2))


def spline_system() -> FuzzySystem:
    e_terms, w_terms = [], []
    for e, w, c in _SMOOTH_PEAKS["inputs"]:
        half = 64.0 if c == 100.0 else 32.0
        e_terms.append((e, "spline", _cubic_knots(c, half)))
        w_terms.append((w, "spline", _cubic_knots(c, half)))
    out = [(v, "spline", _cubic_knots(c, 34.0)) for v, c in _SMOOTH_PEAKS["output"]]
    return FuzzySystem(_var("Error", e_terms), _var("Weight", w_terms), _var("Detection", out))


# Config files are INI: one [variable:<Name>] section per linguistic variable
# with "range = lo, hi" and "<label> = <kind> <p1> <p2> ...", a [rules]
# section with "<error_term>.<weight_term> = NO|WARNING|YES", and an optional
# [fuzzy] section with implication/resolution.

def _parse_variable(name: str, section: configparser.SectionProxy) -> LinguisticVariable:
    rng = (0.0, 100.0)
    terms = []
    for key, value in section.items():
        if key == "range":
            lo, hi = (float(v) for v in value.replace(",", " ").split())
            rng = (lo, hi)
            continue
        parts = value.split()
        if not parts:
            raise ValueError(f"[variable:{name}] {key}: empty definition")
        try:
            params = tuple(float(p) for p in parts[1:])
        except ValueError:
            raise ValueError(f"[variable:{name}] {key}: non-numeric parameter in {value!r}") from None
        terms.append(MembershipFunction(parts[0].lower(), params, key))
    return LinguisticVariable(name, rng, tuple(terms))


def load_config(source: str | Path, base: FuzzySystem | None = None) -> FuzzySystem:
    """Build a system from an INI file path or INI text, overriding ``base``."""
    base = base or default_system()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep term labels as written
    text = str(source)
    if "\n" in text or "[" in text:
        parser.read_string(text)
    else:
        with open(source, encoding="utf-8") as fh:
            parser.read_file(fh)

    variables = {"Error": base.error, "Weight": base.weight, "Detection": base.detection}
    for section in parser.sections():
        if section.startswith("variable:"):
            name = section.split(":", 1)[1].strip()
            if name not in variables:
                raise ValueError(f"unknown linguistic variable {name!r}")
            variables[name] = _parse_variable(name, parser[section])
        elif section not in ("rules", "fuzzy"):
            raise ValueError(f"unknown config section [{section}]")

    matrix = base.matrix
    if parser.has_section("rules") or variables["Error"] is not base.error or variables["Weight"] is not base.weight:
        e_terms = tuple(variables["Error"].labels)
        w_terms = tuple(variables["Weight"].labels)
        cells = []
        for e in e_terms:
            row = []
            for w in w_terms:
                key = f"{e}.{w}"
                if parser.has_option("rules", key):
                    row.append(Verdict.parse(parser.get("rules", key)))
                elif e in matrix.error_terms and w in matrix.weight_terms:
                    row.append(matrix.cell(e, w))
                else:
                    raise ValueError(f"rule for ({e}, {w}) missing")
            cells.append(tuple(row))
        if parser.has_section("rules"):
            for key in parser["rules"]:
                e, _, w = key.partition(".")
                if e not in e_terms or w not in w_terms:
                    raise ValueError(f"rule {key!r} names unknown terms")
        matrix = RuleMatrix(e_terms, w_terms, tuple(cells))

    implication, resolution = base.implication, base.resolution
    if parser.has_section("fuzzy"):
        extra = set(parser["fuzzy"]) - {"implication", "resolution"}
        if extra:
            raise ValueError(f"unknown key(s) in [fuzzy]: {sorted(extra)}")
        implication = parser.get("fuzzy", "implication", fallback=implication)
        resolution = parser.getint("fuzzy", "resolution", fallback=resolution)
    return FuzzySystem(variables["Error"], variables["Weight"], variables["Detection"],
                       matrix, implication, resolution)


def dump_config(system: FuzzySystem) -> str:
    lines = ["[fuzzy]", f"implication = {system.implication}", f"resolution = {system.resolution}", ""]
    for var in (system.error, system.weight, system.detection):
        lines.append(f"[variable:{var.name}]")
        lines.append(f"range = {var.range[0]:.17g}, {var.range[1]:.17g}")
        lines.extend(f"{t.label} = {t.spec_string()}" for t in var.terms)
        lines.append("")
    lines.append("[rules]")
    lines.extend(f"{e}.{w} = {v.name}" for e, w, v in system.matrix.rules())
    return "\n".join(lines) + "\n"
