"""CSV and gnuplot output with a fixed column schema and fixed decimals."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .bench import OPS, BenchmarkReport, BenchRow
from .study import RocCurve, StudyResult

BENCH_COLUMNS = ["op", "WL", "TP", "SR", "DEL", "DEL_p50", "DEL_p95", "DEL_p99",
                 "generated", "refused", "submitted", "succeeded", "failed", "flag"]
CASE_COLUMNS = ["case", "vehicle_id", "frames", "injected", "flagged", "tp", "fp", "tn", "fn",
                "accuracy", "deviation"]
ROC_COLUMNS = ["cutoff", "fpr", "tpr"]
ACCURACY_COLUMNS = ["injection_rate", "accuracy", "deviation", "tpr", "fpr"]


def fmt(x: float, places: int = 6) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.{places}f}"


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_dat(path: Path, header: list[str], rows) -> Path:
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for r in rows:
            fh.write(" ".join(r) + "\n")
    return path


def bench_rows(report: BenchmarkReport) -> list[BenchRow]:
    return sorted(report.rows, key=lambda r: (OPS.index(r.op), r.workload))


def bench_table(report: BenchmarkReport) -> list[list[str]]:
    return [[r.op, str(r.workload), fmt(r.tp, 3), fmt(r.sr, 4), fmt(r.delay_s), fmt(r.p50_s), fmt(r.p95_s),
             fmt(r.p99_s), str(r.generated), str(r.refused), str(r.submitted), str(r.succeeded),
             str(r.failed), r.flag] for r in bench_rows(report)]


def emit_report(result, out_dir: str | Path) -> list[Path]:
    """Write every file for ``result`` into ``out_dir`` and return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result, BenchmarkReport):
        paths = [_write_csv(out / "benchmark.csv", BENCH_COLUMNS, bench_table(result))]
        for op in OPS:
            rows = [r for r in bench_rows(result) if r.op == op]
            if rows:
                paths.append(_write_dat(out / f"benchmark_{op.lower()}.dat", ["WL", "TP", "SR", "DEL"],
                                        [[str(r.workload), fmt(r.tp, 3), fmt(r.sr, 4), fmt(r.delay_s)] for r in rows]))
        return paths
    if isinstance(result, RocCurve):
        return _emit_roc(result, out)
    if isinstance(result, StudyResult):
        cases = [[str(i), c.vehicle_id, str(c.frames), str(c.injected), str(c.flagged), str(c.tp), str(c.fp),
                  str(c.tn), str(c.fn), fmt(c.accuracy), fmt(c.deviation)] for i, c in enumerate(result.cases)]
        acc = [[fmt(r.injection_rate, 2), fmt(r.accuracy), fmt(r.deviation), fmt(r.tpr), fmt(r.fpr)]
               for r in sorted(result.table, key=lambda r: r.injection_rate)]
        return [_write_csv(out / "detection_study.csv", CASE_COLUMNS, cases),
                _write_csv(out / "accuracy.csv", ACCURACY_COLUMNS, acc),
                *_emit_roc(result.roc, out)]
    raise TypeError(f"cannot emit {type(result).__name__}")


def _emit_roc(roc: RocCurve, out: Path) -> list[Path]:
    pts = sorted(roc.points, key=lambda p: -p[0])  # descending cutoff = ascending rates
    rows = [[str(c), fmt(f), fmt(t)] for c, f, t in pts]
    return [_write_csv(out / "roc.csv", ROC_COLUMNS, rows),
            _write_dat(out / "roc.dat", ["fpr", "tpr", "cutoff"], [[r[1], r[2], r[0]] for r in rows])]
