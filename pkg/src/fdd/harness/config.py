"""INI-style experiment configs.

    [study]                      [bench]
    seed = 1                     seed = 7
    cases = 30                   ops = READ, WRITE
    frames = 50                  workloads = 100..1000:100
    injection_rate = 0.3         duration = 3
    error = 20..100              peers = 4
    weight = 20..100             f = 1
    clean = 0..10                loss = 0.0
    rates = 0.1, 0.5, 0.9
                                 [costs]   submit = 2.5 ...
                                 [thrash]  knee = 24, per_job = 0.02

Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..ledger import PeerCosts
from .bench import OPS, BenchConfig, Thrash, parse_workloads
from .scenario import Band
from .study import DEFAULT_RATES

STUDY_KEYS = {"seed", "cases", "frames", "injection_rate", "error", "weight", "clean", "rates"}


class ConfigError(ValueError):
    pass


@dataclass
class StudyConfig:
    seed: int = 1
    n_cases: int = 30
    frames_per_case: int = 50
    injection_rate: float = 0.3
    error_band: Band = Band(20.0, 100.0)
    weight_band: Band = Band(20.0, 100.0)
    clean_band: Band = Band(0.0, 10.0)
    rates: tuple[float, ...] = DEFAULT_RATES


@dataclass
class BenchPlan:
    config: BenchConfig = field(default_factory=BenchConfig)
    ops: tuple[str, ...] = OPS
    workloads: tuple[int, ...] = tuple(range(100, 1001, 100))


def _read(source: str | Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(Path(source).read_text())
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return cp


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def load_study_config(source: str | Path) -> StudyConfig:
    cp = _read(source)
    extra = set(cp.sections()) - {"study"}
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    cfg = StudyConfig()
    if not cp.has_section("study"):
        return cfg
    sec = cp["study"]
    bad = set(sec) - STUDY_KEYS
    if bad:
        raise ConfigError(f"unknown key(s) in [study]: {sorted(bad)}")
    try:
        return StudyConfig(
            seed=sec.getint("seed", cfg.seed),
            n_cases=sec.getint("cases", cfg.n_cases),
            frames_per_case=sec.getint("frames", cfg.frames_per_case),
            injection_rate=sec.getfloat("injection_rate", cfg.injection_rate),
            error_band=Band.parse(sec["error"]) if "error" in sec else cfg.error_band,
            weight_band=Band.parse(sec["weight"]) if "weight" in sec else cfg.weight_band,
            clean_band=Band.parse(sec["clean"]) if "clean" in sec else cfg.clean_band,
            rates=_floats(sec["rates"]) if "rates" in sec else cfg.rates,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _typed(cls_fields, sec, section: str) -> dict:
    kinds = {f.name: f.type for f in cls_fields}
    out = {}
    for key, raw in sec.items():
        if key not in kinds:
            raise ConfigError(f"unknown key in [{section}]: {key!r}")
        kind = kinds[key]
        try:
            out[key] = int(raw) if kind == "int" else float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return out


def load_bench_config(source: str | Path) -> BenchPlan:
    cp = _read(source)
    extra = set(cp.sections()) - {"bench", "costs", "thrash"}
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    plan = BenchPlan()
    cfg = plan.config
    if cp.has_section("bench"):
        sec = dict(cp["bench"])
        if "ops" in sec:
            ops = tuple(o.strip().upper() for o in sec.pop("ops").split(",") if o.strip())
            if not ops or any(o not in OPS for o in ops):
                raise ConfigError(f"ops must be drawn from {OPS}")
            plan.ops = ops
        if "workloads" in sec:
            try:
                plan.workloads = tuple(parse_workloads(sec.pop("workloads")))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if "duration" in sec:
            sec["duration_s"] = sec.pop("duration")
        scalar = [f for f in fields(BenchConfig) if f.name not in ("costs", "thrash")]
        cfg = replace(cfg, **_typed(scalar, sec, "bench"))
    if cp.has_section("costs"):
        cfg = replace(cfg, costs=replace(cfg.costs, **_typed(fields(PeerCosts), cp["costs"], "costs")))
    if cp.has_section("thrash"):
        cfg = replace(cfg, thrash=replace(cfg.thrash, **_typed(fields(Thrash), cp["thrash"], "thrash")))
    plan.config = cfg
    return plan
