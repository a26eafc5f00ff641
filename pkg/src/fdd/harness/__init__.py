"""Experiment driver: synthetic FDI scenarios, the detection study and the ledger benchmark."""

from .scenario import Band, InjectionScenario, generate_scenario
from .study import AccuracyRow, CaseResult, RocCurve, StudyResult, run_detection_study
from .bench import BenchConfig, BenchmarkReport, BenchRow, Thrash, parse_workloads, run_benchmark
from .report import emit_report
from .config import BenchPlan, ConfigError, StudyConfig, load_bench_config, load_study_config

__all__ = [name for name in dir() if not name.startswith("_")]
