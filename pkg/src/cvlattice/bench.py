"""Repeated-run timing, speedup reports, and the stage-by-stage benchmark.

Each stage is timed twice: a naive record-at-a-time implementation (the
baseline) and the vectorized code the pipeline uses. Rows are named after the
ETL stages (Data Binning, Indexing, Reduction, Filter, Normalization, Data
Export).
"""
from __future__ import annotations

import csv
import io
import math
import os
import statistics
import struct
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import grid as G
from .aggregate import (
    FilterRules,
    PartialAggregate,
    _reduce_by_key,
    _unique_pairs,
    filter_mask,
    filter_records,
    finalize_all,
    pipeline_from_table,
    process_day,
    speed_units_array,
)
from .errors import TaskFailed
from .grid import GridSpec
from .ingest import discover_shards, load_records
from .lattice_store import write_container
from .normalize import NormalizationSpec, normalize_speed, normalize_volume
from .oracle import oracle_pipeline
from .synth import SynthConfig, generate_day
from .table import load_table


@dataclass(frozen=True)
class RunStats:
    n_runs: int
    avg: float
    min: float
    max: float
    std_dev: float
    durations: tuple[float, ...] = ()

    @classmethod
    def from_durations(cls, durations: Sequence[float]) -> "RunStats":
        d = tuple(float(x) for x in durations)
        if not d:
            raise ValueError("at least one duration is required")
        return cls(len(d), statistics.fmean(d), min(d), max(d), statistics.pstdev(d), d)


def time_repeated(task: Callable, n_runs: int = 25, discard_warmup: int = 0,
                  setup: Callable | None = None, clock: Callable[[], float] = time.perf_counter) -> RunStats:
    """Wall-clock ``task`` over ``n_runs`` timed runs.

    ``setup`` (untimed) runs before every call and its result is passed to
    ``task``, for tasks that need fresh inputs each run.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    if discard_warmup < 0:
        raise ValueError("discard_warmup must be >= 0")
    durations = []
    for i in range(discard_warmup + n_runs):
        arg = setup() if setup is not None else None
        t0 = clock()
        try:
            task(arg) if setup is not None else task()
        except Exception as exc:
            raise TaskFailed(i - discard_warmup, exc) from exc
        elapsed = clock() - t0
        if i >= discard_warmup:
            durations.append(elapsed)
    return RunStats.from_durations(durations)


def speedup(baseline, optimized) -> float:
    b = baseline.avg if isinstance(baseline, RunStats) else float(baseline)
    o = optimized.avg if isinstance(optimized, RunStats) else float(optimized)
    if not o > 0:
        raise ZeroDivisionError("optimized average must be > 0")
    return b / o


@dataclass(frozen=True)
class SpeedupRow:
    operation: str
    metric: str
    baseline: RunStats
    optimized: RunStats

    @property
    def speedup(self) -> float:
        return speedup(self.baseline, self.optimized)


@dataclass
class SpeedupReport:
    rows: list[SpeedupRow] = field(default_factory=list)
    baseline_label: str = "Baseline"
    optimized_label: str = "Optimized"


STAT_NAMES = ("Avg", "Min", "Max", "StdDev")


def report_header(report: SpeedupReport) -> list[str]:
    cols = ["Operation", "Metric"]
    for label in (report.baseline_label, report.optimized_label):
        cols += [f"{label} {s}" for s in STAT_NAMES]
    return cols + ["Speedup"]


def _g6(v: float) -> str:
    return f"{v:.6g}"


def _row_values(row: SpeedupRow) -> list[str]:
    out = [row.operation, row.metric]
    for s in (row.baseline, row.optimized):
        out += [_g6(s.avg), _g6(s.min), _g6(s.max), _g6(s.std_dev)]
    return out + [_g6(row.speedup)]


def emit_report(report: SpeedupReport, fmt: str = "md") -> str:
    if not report.rows:
        raise ValueError("report has no rows")
    header = report_header(report)
    body = [_row_values(r) for r in report.rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt != "md":
        raise ValueError(f"unknown report format {fmt!r}")
    esc = lambda s: s.replace("|", "\\|")
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" if i < 2 else "---:" for i in range(len(header))) + "|"]
    lines += ["| " + " | ".join(esc(v) for v in vals) + " |" for vals in body]
    return "\n".join(lines) + "\n"


def parse_markdown_report(text: str) -> list[dict[str, str]]:
    """Inverse of the Markdown form of :func:`emit_report` (values as printed)."""
    def cells(line):
        parts, cur, i = [], "", 1
        s = line.strip()
        while i < len(s) - 1:
            ch = s[i]
            if ch == "\\" and s[i + 1] == "|":
                cur += "|"
                i += 2
                continue
            if ch == "|":
                parts.append(cur.strip())
                cur = ""
            else:
                cur += ch
            i += 1
        parts.append(cur.strip())
        return parts

    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = cells(lines[0])
    return [dict(zip(header, cells(ln))) for ln in lines[2:]]


# ---------------------------------------------------------------- stage kernels
# Naive kernels loop over python records; fast kernels are what the pipeline runs.

def naive_lat_index(records, spec):
    return [G.lat_bin(r.latitude, spec) for r in records]


def naive_lon_index(records, spec):
    return [G.lon_bin(r.longitude, spec) for r in records]


def naive_binning(records, spec):
    out = []
    T, D, R, C = spec.shape
    for r in records:
        t = G.time_bin(r.timestamp, spec)
        d = G.dxn_bin(r.heading, spec)
        out.append(G.global_index((t, d, G.lat_bin(r.latitude, spec), G.lon_bin(r.longitude, spec)), spec))
    return out


def naive_sum(records, keys):
    sums: dict[int, list] = {}
    for r, g in zip(records, keys):
        acc = sums.setdefault(g, [0.0, 0])
        acc[0] += r.speed
        acc[1] += 1
    return sums


def naive_count_unique(records, keys):
    seen: dict[int, set] = {}
    for r, g in zip(records, keys):
        seen.setdefault(g, set()).add(r.journey_id)
    return {g: len(s) for g, s in seen.items()}


def naive_normalize_speed(frames, norm: NormalizationSpec):
    out = []
    for fr in frames:
        for plane in fr.speed:
            rows = []
            for row in plane.tolist():
                q = []
                for v in row:
                    v = min(max(v, 0.0), norm.speed_max)
                    q.append(int(math.floor(v * 255.0 / norm.speed_max + 0.5)))
                rows.append(q)
            out.append(rows)
    return out


def naive_normalize_volume(frames, norm: NormalizationSpec):
    out = []
    for fr in frames:
        for plane in fr.volume:
            vals = plane.tolist()
            lo = min(min(r) for r in vals)
            hi = max(max(r) for r in vals)
            rows = []
            for row in vals:
                if norm.volume_mode == "fixed_cap":
                    rows.append([int(math.floor(min(v, norm.volume_cap) * 255.0 / norm.volume_cap + 0.5)) for v in row])
                elif norm.volume_mode == "log1p":
                    rows.append([0 if hi == 0 else int(math.floor(math.log1p(v) * 255.0 / math.log1p(hi) + 0.5))
                                 for v in row])
                else:
                    rows.append([0 if hi == lo else int(math.floor((v - lo) * 255.0 / (hi - lo) + 0.5)) for v in row])
            out.append(rows)
    return out


def naive_export(frames, path, kind: str):
    fmt = "<f" if kind == "speed" else "<I"
    with open(path, "wb") as fh:
        for fr in frames:
            fh.write(struct.pack("<I", fr.t))
            planes = fr.speed if kind == "speed" else fr.volume
            for plane in planes:
                for row in plane.tolist():
                    for v in row:
                        fh.write(struct.pack(fmt, v))


def fast_export(frames, path, kind: str):
    with open(path, "wb") as fh:
        for fr in frames:
            fh.write(struct.pack("<I", fr.t))
            planes = fr.speed if kind == "speed" else fr.volume
            fh.write(np.ascontiguousarray(planes, dtype="<f4" if kind == "speed" else "<u4").tobytes())


# ---------------------------------------------------------------- benchmark

@dataclass
class BenchConfig:
    grid: GridSpec
    synth: SynthConfig
    rules: FilterRules = FilterRules()
    norm: NormalizationSpec = NormalizationSpec()
    n_runs: int = 25
    discard_warmup: int = 0
    n_partitions: int = 4
    threads: int = 1
    reread_inputs: bool = True
    workdir: str | None = None


def run_benchmark(cfg: BenchConfig, progress: Callable[[str], None] | None = None) -> SpeedupReport:
    progress = progress or (lambda msg: None)
    with tempfile.TemporaryDirectory(dir=cfg.workdir) as tmp:
        data_dir = Path(tmp) / "shards"
        generate_day(cfg.synth, data_dir, threads=cfg.threads)
        spec, rules, norm = cfg.grid, cfg.rules, cfg.norm

        table = load_table(discover_shards(data_dir))
        records = load_records(discover_shards(data_dir))
        kept, _ = filter_records(records, spec, rules)
        keep, _ = filter_mask(table, spec, rules)
        f = table.frame
        lat = f["latitude"].to_numpy()[keep]
        lon = f["longitude"].to_numpy()[keep]
        heading = f["heading"].to_numpy()[keep]
        speed = f["speed"].to_numpy()[keep]
        minute = table.minute_of_day[keep]
        jids = np.asarray(f["journey_id"].cat.categories, dtype=object)[f["journey_id"].cat.codes.to_numpy()[keep]]
        g = G.global_indices(G.time_bins(minute, spec), G.dxn_bins(heading, spec),
                             G.lat_bins(lat, spec), G.lon_bins(lon, spec), spec)
        keys = naive_binning(kept, spec)
        partial = PartialAggregate.from_arrays(spec, g, speed_units_array(speed), jids)
        frames = finalize_all(partial)
        out_a = str(Path(tmp) / "a.bin")
        out_b = str(Path(tmp) / "b.bin")

        stages = [
            ("Data Binning", "Speed",
             lambda: naive_binning(kept, spec),
             lambda: G.global_indices(G.time_bins(minute, spec), G.dxn_bins(heading, spec),
                                      G.lat_bins(lat, spec), G.lon_bins(lon, spec), spec)),
            ("Indexing - Latitude", "Speed", lambda: naive_lat_index(kept, spec), lambda: G.lat_bins(lat, spec)),
            ("Indexing - Longitude", "Speed", lambda: naive_lon_index(kept, spec), lambda: G.lon_bins(lon, spec)),
            ("Normalization", "Speed", lambda: naive_normalize_speed(frames, norm),
             lambda: [normalize_speed(p, norm) for fr in frames for p in fr.speed]),
            ("Data Export", "Speed", lambda: naive_export(frames, out_a, "speed"),
             lambda: fast_export(frames, out_b, "speed")),
            ("Reduction - Count", "Volume", lambda: naive_count_unique(kept, keys),
             lambda: _unique_pairs(g, jids)),
            ("Reduction - Sum", "Volume", lambda: naive_sum(kept, keys),
             lambda: _reduce_by_key(g, speed_units_array(speed), np.ones(len(g), np.int64))),
            ("Filter", "Volume", lambda: filter_records(records, spec, rules),
             lambda: filter_mask(table, spec, rules)),
            ("Normalization", "Volume", lambda: naive_normalize_volume(frames, norm),
             lambda: [normalize_volume(p, norm) for fr in frames for p in fr.volume]),
            ("Data Export", "Volume", lambda: naive_export(frames, out_a, "volume"),
             lambda: fast_export(frames, out_b, "volume")),
        ]

        report = SpeedupReport(baseline_label="Naive", optimized_label="Parallel")
        for op, metric, slow, fast in stages:
            progress(f"{op} ({metric})")
            b = time_repeated(slow, cfg.n_runs, cfg.discard_warmup)
            o = time_repeated(fast, cfg.n_runs, cfg.discard_warmup)
            report.rows.append(SpeedupRow(op, metric, b, o))

        progress("Overall")
        container = str(Path(tmp) / "day.cvl1")
        if cfg.reread_inputs:
            def slow_overall():
                recs = load_records(discover_shards(data_dir))
                naive_export(oracle_pipeline(recs, spec, rules), out_a, "speed")

            def fast_overall():
                run = process_day(discover_shards(data_dir), spec, rules, cfg.n_partitions, cfg.threads)
                write_container(run.frames, spec, run.day, container)
        else:
            def slow_overall():
                naive_export(oracle_pipeline(records, spec, rules), out_a, "speed")

            def fast_overall():
                fr = pipeline_from_table(table, spec, rules, cfg.n_partitions, cfg.threads)
                write_container(fr, spec, 0, container)
        b = time_repeated(slow_overall, cfg.n_runs, cfg.discard_warmup)
        o = time_repeated(fast_overall, cfg.n_runs, cfg.discard_warmup)
        report.rows.append(SpeedupRow("Overall", "End-to-end", b, o))
    return report


def overall_speedup(table, spec: GridSpec, rules: FilterRules = FilterRules(), n_runs: int = 5,
                    n_partitions: int = 4, threads: int | None = None) -> SpeedupRow:
    """Oracle vs parallel pipeline on an in-memory table (ingest excluded from both)."""
    threads = threads or os.cpu_count() or 1
    b = time_repeated(lambda: oracle_pipeline(table.iter_records(), spec, rules), n_runs)
    o = time_repeated(lambda: pipeline_from_table(table, spec, rules, n_partitions, threads), n_runs)
    return SpeedupRow("Overall", "In-memory", b, o)
