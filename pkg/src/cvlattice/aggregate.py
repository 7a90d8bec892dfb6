"""Filtering, mergeable per-cell accumulation and batch finalization.

Speed sums are carried as exact integers in micro-units (``SPEED_SCALE``), so
partial aggregates add associatively and the finalized planes are bit-identical
however the input was partitioned or merged. Journey sets are exact.
"""
from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import grid as G
from .errors import GridMismatch, OutOfBounds, ZeroPartitions
from .grid import GridSpec
from .ingest import CvRecord, SourceManifest
from .table import RecordTable, load_table

log = logging.getLogger(__name__)

SPEED_SCALE = 1_000_000

STAGE_FILTER = "Filter"
STAGE_LAT = "Indexing - Latitude"
STAGE_LON = "Indexing - Longitude"
STAGE_BINNING = "Data Binning"
STAGE_SUM = "Reduction - Sum"
STAGE_COUNT = "Reduction - Count"


class FilterReason:
    OUT_OF_GRID = "OutOfGrid"
    SPEED_CEILING = "SpeedCeiling"
    MISSING_FIELD = "MissingField"
    OFF_DAY = "OffDay"


@dataclass(frozen=True)
class FilterRules:
    require_in_grid: bool = True
    speed_ceiling: float = 250.0
    # drops records with an empty postal code (the only optional column)
    drop_missing: bool = False
    # when set, records dated on any other day are dropped
    day: date | None = None

    def __post_init__(self):
        if not (self.speed_ceiling > 0):
            raise ValueError(f"speed_ceiling must be > 0, got {self.speed_ceiling}")


def speed_units(speed: float) -> int:
    return round(speed * SPEED_SCALE)


def speed_units_array(speed: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(speed, np.float64) * SPEED_SCALE).astype(np.int64)


def _in_grid(rec: CvRecord, spec: GridSpec) -> bool:
    return spec.lat_min <= rec.latitude <= spec.lat_max and spec.lon_min <= rec.longitude <= spec.lon_max


def filter_records(records: Iterable[CvRecord], spec: GridSpec, rules: FilterRules):
    kept = []
    dropped = Counter()
    for rec in records:
        if rules.day is not None and rec.timestamp.date() != rules.day:
            dropped[FilterReason.OFF_DAY] += 1
        elif rules.drop_missing and rec.postal_code == "":
            dropped[FilterReason.MISSING_FIELD] += 1
        elif rules.require_in_grid and not _in_grid(rec, spec):
            dropped[FilterReason.OUT_OF_GRID] += 1
        elif rec.speed > rules.speed_ceiling:
            dropped[FilterReason.SPEED_CEILING] += 1
        else:
            kept.append(rec)
    return kept, dropped


def filter_mask(table: RecordTable, spec: GridSpec, rules: FilterRules):
    """Vectorized :func:`filter_records`: boolean keep-mask plus drop counts."""
    f = table.frame
    n = len(f)
    keep = np.ones(n, dtype=bool)
    dropped = Counter()

    def drop(mask, reason):
        hit = keep & mask
        c = int(hit.sum())
        if c:
            dropped[reason] += c
            keep[hit] = False

    if rules.day is not None:
        day_no = (rules.day - date(1970, 1, 1)).days
        drop(table.day_number != day_no, FilterReason.OFF_DAY)
    if rules.drop_missing:
        drop((f["postal_code"].astype(object) == "").to_numpy(), FilterReason.MISSING_FIELD)
    if rules.require_in_grid:
        lat = f["latitude"].to_numpy()
        lon = f["longitude"].to_numpy()
        inside = (lat >= spec.lat_min) & (lat <= spec.lat_max) & (lon >= spec.lon_min) & (lon <= spec.lon_max)
        drop(~inside, FilterReason.OUT_OF_GRID)
    drop(f["speed"].to_numpy() > rules.speed_ceiling, FilterReason.SPEED_CEILING)
    return keep, dropped


@dataclass(frozen=True)
class CellStats:
    speed_units: int
    record_count: int
    journey_ids: frozenset

    @property
    def speed_sum(self) -> float:
        return self.speed_units / SPEED_SCALE


def _reduce_by_key(keys: np.ndarray, *values: np.ndarray):
    """Sorted unique keys and exact int64 per-key sums of each value array."""
    if len(keys) == 0:
        return (np.zeros(0, np.int64),) + tuple(np.zeros(0, np.int64) for _ in values)
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    starts = np.flatnonzero(np.concatenate(([True], ks[1:] != ks[:-1])))
    sums = tuple(np.add.reduceat(np.asarray(v, np.int64)[order], starts) for v in values)
    return (ks[starts],) + sums


def _unique_pairs(g: np.ndarray, jid: np.ndarray):
    if len(g) == 0:
        return np.zeros(0, np.int64), np.zeros(0, dtype=object)
    df = pd.DataFrame({"g": g, "j": jid}).drop_duplicates(ignore_index=True)
    return df["g"].to_numpy(np.int64), df["j"].to_numpy(object)


class PartialAggregate:
    """Per-cell statistics keyed by global index, mergeable in any order.

    Stored columnar: ``keys`` (sorted unique global indices) with parallel
    ``speed_units`` and ``counts``, plus the set of distinct
    ``(global index, journey id)`` pairs backing the unique-volume count.
    """

    __slots__ = ("grid", "keys", "speed_units", "counts", "pair_keys", "pair_journeys", "records_seen")

    def __init__(self, grid: GridSpec, keys=None, speed_units=None, counts=None,
                 pair_keys=None, pair_journeys=None, records_seen: int = 0):
        self.grid = grid
        self.keys = np.zeros(0, np.int64) if keys is None else keys
        self.speed_units = np.zeros(0, np.int64) if speed_units is None else speed_units
        self.counts = np.zeros(0, np.int64) if counts is None else counts
        self.pair_keys = np.zeros(0, np.int64) if pair_keys is None else pair_keys
        self.pair_journeys = np.zeros(0, dtype=object) if pair_journeys is None else pair_journeys
        self.records_seen = int(records_seen)

    @classmethod
    def empty(cls, grid: GridSpec) -> "PartialAggregate":
        return cls(grid)

    @classmethod
    def from_arrays(cls, grid: GridSpec, g: np.ndarray, units: np.ndarray, journeys: np.ndarray):
        """Accumulate records given as parallel arrays of global index, speed units, journey id."""
        g = np.asarray(g, np.int64)
        if len(g) and (g.min() < 0 or g.max() >= grid.n_cells):
            raise OutOfBounds("global index outside the grid")
        keys, su, cnt = _reduce_by_key(g, units, np.ones(len(g), np.int64))
        pk, pj = _unique_pairs(g, journeys)
        return cls(grid, keys, su, cnt, pk, pj, records_seen=len(g))

    def __len__(self) -> int:
        return len(self.keys)

    def cell(self, g: int) -> CellStats:
        i = np.searchsorted(self.keys, g)
        if i == len(self.keys) or self.keys[i] != g:
            return CellStats(0, 0, frozenset())
        return CellStats(int(self.speed_units[i]), int(self.counts[i]),
                         frozenset(self.pair_journeys[self.pair_keys == g].tolist()))

    def cells(self) -> dict[int, CellStats]:
        by_key: dict[int, set] = {}
        for k, j in zip(self.pair_keys.tolist(), self.pair_journeys.tolist()):
            by_key.setdefault(k, set()).add(j)
        return {int(k): CellStats(int(s), int(c), frozenset(by_key.get(int(k), ())))
                for k, s, c in zip(self.keys, self.speed_units, self.counts)}

    def volumes(self) -> np.ndarray:
        """Distinct-journey count per entry of ``keys``."""
        if len(self.keys) == 0:
            return np.zeros(0, np.int64)
        pos = np.searchsorted(self.keys, self.pair_keys)
        return np.bincount(pos, minlength=len(self.keys)).astype(np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PartialAggregate):
            return NotImplemented
        return (self.grid == other.grid and self.records_seen == other.records_seen
                and self.cells() == other.cells())

    def __repr__(self) -> str:
        return f"PartialAggregate(cells={len(self.keys)}, records_seen={self.records_seen})"


def accumulate(partial: PartialAggregate, record: CvRecord) -> PartialAggregate:
    spec = partial.grid
    cell = G.CellIndex(
        G.time_bin(record.timestamp, spec),
        G.dxn_bin(record.heading, spec),
        G.lat_bin(record.latitude, spec),
        G.lon_bin(record.longitude, spec),
    )
    g = G.global_index(cell, spec)
    one = PartialAggregate(
        spec,
        np.array([g], np.int64), np.array([speed_units(record.speed)], np.int64),
        np.array([1], np.int64), np.array([g], np.int64),
        np.array([record.journey_id], dtype=object), records_seen=1)
    return merge(partial, one)


def merge(a: PartialAggregate, b: PartialAggregate) -> PartialAggregate:
    if a.grid != b.grid:
        raise GridMismatch("cannot merge partial aggregates built on different grids")
    if len(b.keys) == 0 and b.records_seen == 0:
        return a
    if len(a.keys) == 0 and a.records_seen == 0:
        return b
    keys, su, cnt = _reduce_by_key(
        np.concatenate([a.keys, b.keys]),
        np.concatenate([a.speed_units, b.speed_units]),
        np.concatenate([a.counts, b.counts]))
    pk, pj = _unique_pairs(np.concatenate([a.pair_keys, b.pair_keys]),
                           np.concatenate([a.pair_journeys, b.pair_journeys]))
    return PartialAggregate(a.grid, keys, su, cnt, pk, pj, a.records_seen + b.records_seen)


def merge_all(partials: Sequence[PartialAggregate], grid: GridSpec) -> PartialAggregate:
    out = PartialAggregate.empty(grid)
    for p in partials:
        out = merge(out, p)
    return out


@dataclass
class BatchFrame:
    """All planes of one temporal batch. Plane arrays are (D, R, C)."""

    t: int
    speed: np.ndarray
    volume: np.ndarray
    counts: np.ndarray | None = None

    @property
    def speed_planes(self) -> list[np.ndarray]:
        return list(self.speed)

    @property
    def volume_planes(self) -> list[np.ndarray]:
        return list(self.volume)

    def channel(self, k: int) -> np.ndarray:
        """Channel k in container order: speed d=0..D-1, then volume d=0..D-1."""
        d = self.speed.shape[0]
        return self.speed[k] if k < d else self.volume[k - d]

    def same_bits(self, other: "BatchFrame") -> bool:
        return (self.t == other.t
                and self.speed.shape == other.speed.shape
                and np.array_equal(self.speed.view(np.uint32), other.speed.view(np.uint32))
                and np.array_equal(self.volume, other.volume))


def _dense(partial: PartialAggregate):
    T, D, R, C = partial.grid.shape
    n = T * D * R * C
    units = np.zeros(n, np.int64)
    counts = np.zeros(n, np.int64)
    vol = np.zeros(n, np.int64)
    units[partial.keys] = partial.speed_units
    counts[partial.keys] = partial.counts
    vol[partial.keys] = partial.volumes()
    return units, counts, vol


def dense_lattice(partial: PartialAggregate):
    """Dense (mean speed f64, record count, unique volume) arrays of shape (T, D, R, C)."""
    shape = partial.grid.shape
    units, counts, vol = _dense(partial)
    mean = np.zeros(units.shape, np.float64)
    nz = counts > 0
    mean[nz] = (units[nz] / SPEED_SCALE) / counts[nz]
    return mean.reshape(shape), counts.reshape(shape), vol.reshape(shape)


def _mean_speed(units: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = np.zeros(units.shape, np.float64)
    nz = counts > 0
    out[nz] = (units[nz] / SPEED_SCALE) / counts[nz]
    return out.astype(np.float32)


def finalize_batch(partial: PartialAggregate, t: int, with_counts: bool = False) -> BatchFrame:
    T, D, R, C = partial.grid.shape
    if not (0 <= t < T):
        raise G.ComponentOutOfRange(f"batch {t} outside [0, {T})")
    lo, hi = t * D * R * C, (t + 1) * D * R * C
    sel = (partial.keys >= lo) & (partial.keys < hi)
    units = np.zeros(D * R * C, np.int64)
    counts = np.zeros(D * R * C, np.int64)
    vol = np.zeros(D * R * C, np.int64)
    local = partial.keys[sel] - lo
    units[local] = partial.speed_units[sel]
    counts[local] = partial.counts[sel]
    vol[local] = partial.volumes()[sel]
    shape = (D, R, C)
    return BatchFrame(
        t,
        _mean_speed(units, counts).reshape(shape),
        vol.astype(np.uint32).reshape(shape),
        counts.astype(np.uint32).reshape(shape) if with_counts else None,
    )


def finalize_all(partial: PartialAggregate, with_counts: bool = False) -> list[BatchFrame]:
    T, D, R, C = partial.grid.shape
    units, counts, vol = _dense(partial)
    speed = _mean_speed(units, counts).reshape(T, D, R, C)
    vol = vol.astype(np.uint32).reshape(T, D, R, C)
    cnt = counts.astype(np.uint32).reshape(T, D, R, C) if with_counts else None
    return [BatchFrame(t, speed[t], vol[t], None if cnt is None else cnt[t]) for t in range(T)]


class StageTimer:
    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t0


def accumulate_columns(spec: GridSpec, minute, heading, lat, lon, speed, journeys,
                       timer: StageTimer | None = None) -> PartialAggregate:
    """Vectorized accumulation of one partition's records."""
    timer = timer or StageTimer()
    with timer.stage(STAGE_LAT):
        r = G.lat_bins(lat, spec)
    with timer.stage(STAGE_LON):
        c = G.lon_bins(lon, spec)
    with timer.stage(STAGE_BINNING):
        g = G.global_indices(G.time_bins(minute, spec), G.dxn_bins(heading, spec), r, c, spec)
    with timer.stage(STAGE_SUM):
        keys, su, cnt = _reduce_by_key(g, speed_units_array(speed), np.ones(len(g), np.int64))
    with timer.stage(STAGE_COUNT):
        pk, pj = _unique_pairs(g, journeys)
    return PartialAggregate(spec, keys, su, cnt, pk, pj, records_seen=len(g))


def _partition_job(args):
    spec, cols = args
    timer = StageTimer()
    p = accumulate_columns(spec, *cols, timer=timer)
    return p, timer.seconds


def _check_in_grid(table_slice_lat, table_slice_lon, spec):
    if len(table_slice_lat) and not (
        (table_slice_lat >= spec.lat_min).all() and (table_slice_lat <= spec.lat_max).all()
        and (table_slice_lon >= spec.lon_min).all() and (table_slice_lon <= spec.lon_max).all()
    ):
        raise OutOfBounds("records outside the grid reached accumulation (require_in_grid is off)")


def aggregate_table(table: RecordTable, spec: GridSpec, rules: FilterRules,
                    n_partitions: int = 1, threads: int = 1, timer: StageTimer | None = None):
    """Filter, partition, accumulate and merge. Returns (partial, drop counts)."""
    if n_partitions < 1:
        raise ZeroPartitions(f"n_partitions must be >= 1, got {n_partitions}")
    timer = timer or StageTimer()
    with timer.stage(STAGE_FILTER):
        keep, dropped = filter_mask(table, spec, rules)
    f = table.frame
    lat = f["latitude"].to_numpy()[keep]
    lon = f["longitude"].to_numpy()[keep]
    _check_in_grid(lat, lon, spec)
    minute = table.minute_of_day[keep]
    heading = f["heading"].to_numpy()[keep]
    speed = f["speed"].to_numpy()[keep]
    jcat = f["journey_id"].cat
    codes = jcat.codes.to_numpy()[keep]
    categories = np.asarray(jcat.categories, dtype=object)

    with timer.stage("Partition"):
        if n_partitions == 1:
            parts = [np.arange(len(lat))]
        else:
            pid = table.partition_ids(n_partitions)[keep]
            order = np.argsort(pid, kind="stable")
            bounds = np.searchsorted(pid[order], np.arange(n_partitions + 1))
            parts = [order[bounds[i]:bounds[i + 1]] for i in range(n_partitions)]

    jobs = [(spec, (minute[ix], heading[ix], lat[ix], lon[ix], speed[ix], categories[codes[ix]]))
            for ix in parts]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_partition_job, jobs))
    else:
        results = [_partition_job(j) for j in jobs]
    for _, secs in results:
        for k, v in secs.items():
            timer.seconds[k] = timer.seconds.get(k, 0.0) + v
    with timer.stage("Merge"):
        merged = merge_all([p for p, _ in results], spec)
    return merged, dropped


@dataclass
class PipelineRun:
    frames: list[BatchFrame]
    manifest: SourceManifest
    dropped: Counter
    day: date
    records_deduplicated: int
    records_aggregated: int
    timings: dict[str, float] = field(default_factory=dict)


def _infer_day(table: RecordTable, rules: FilterRules) -> date:
    if rules.day is not None:
        return rules.day
    if len(table) == 0:
        return date(1970, 1, 1)
    return date.fromordinal(date(1970, 1, 1).toordinal() + int(table.day_number.min()))


def process_day(manifest: SourceManifest, spec: GridSpec, rules: FilterRules = FilterRules(),
                n_partitions: int = 1, threads: int = 1, with_counts: bool = False,
                shard_order=None) -> PipelineRun:
    timer = StageTimer()
    with timer.stage("Ingest"):
        table = load_table(manifest, threads=threads, shard_order=shard_order)
    partial, dropped = aggregate_table(table, spec, rules, n_partitions, threads, timer)
    with timer.stage("Finalize"):
        frames = finalize_all(partial, with_counts=with_counts)
    return PipelineRun(frames, manifest, dropped, _infer_day(table, rules),
                       len(table), partial.records_seen, timer.seconds)


def run_pipeline(manifest: SourceManifest, spec: GridSpec, rules: FilterRules = FilterRules(),
                 n_partitions: int = 1, threads: int = 1, with_counts: bool = False) -> list[BatchFrame]:
    return process_day(manifest, spec, rules, n_partitions, threads, with_counts).frames


def pipeline_from_table(table: RecordTable, spec: GridSpec, rules: FilterRules = FilterRules(),
                        n_partitions: int = 1, threads: int = 1, with_counts: bool = False) -> list[BatchFrame]:
    partial, _ = aggregate_table(table, spec, rules, n_partitions, threads)
    return finalize_all(partial, with_counts=with_counts)
