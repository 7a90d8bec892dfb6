"""Naive single-threaded reference pipeline.

Written without any of the aggregation code in :mod:`cvlattice.aggregate` or
the binning helpers in :mod:`cvlattice.grid`: bins come from a search over
explicit edge lists, sums are plain float adds in record order, and the lattice
is a dense T x D x R x C array. It is the correctness reference for the
parallel pipeline and the slow side of the benchmark.
"""
from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .aggregate import BatchFrame, FilterRules
from .grid import GridSpec


def _edges(origin: float, step: float, n: int) -> list[float]:
    return [origin + k * step for k in range(n + 1)]


def _locate(edges: list[float], x: float) -> int:
    k = bisect_right(edges, x) - 1
    last = len(edges) - 2
    return 0 if k < 0 else (last if k > last else k)


def oracle_lattice(records, spec: GridSpec, rules: FilterRules = FilterRules()):
    """Dense (mean speed f64, record count, unique volume) arrays of shape (T, D, R, C)."""
    T, D, R, C = spec.n_batches, spec.n_directions, spec.rows, spec.cols
    lat_edges = _edges(spec.lat_min, spec.lat_step, R)
    lon_edges = _edges(spec.lon_min, spec.lon_step, C)
    dxn_edges = _edges(0.0, float(spec.dxn_step), D)

    speed_sum = np.zeros((T, D, R, C), dtype=np.float64)
    count = np.zeros((T, D, R, C), dtype=np.int64)
    journeys: dict[tuple[int, int, int, int], set] = {}

    for rec in records:
        if rules.day is not None and rec.timestamp.date() != rules.day:
            continue
        if rules.drop_missing and not rec.postal_code:
            continue
        inside = spec.lat_min <= rec.latitude <= spec.lat_max and spec.lon_min <= rec.longitude <= spec.lon_max
        if rules.require_in_grid and not inside:
            continue
        if rec.speed > rules.speed_ceiling:
            continue
        if not inside:
            raise ValueError(f"record outside grid: {rec}")

        t = (rec.timestamp.hour * 60 + rec.timestamp.minute) // spec.min_step
        h = rec.heading + spec.dxn_offset
        if h >= 360.0:
            h -= 360.0
        d = _locate(dxn_edges, h)
        r = _locate(lat_edges, rec.latitude)
        c = _locate(lon_edges, rec.longitude)

        speed_sum[t, d, r, c] += rec.speed
        count[t, d, r, c] += 1
        journeys.setdefault((t, d, r, c), set()).add(rec.journey_id)

    volume = np.zeros((T, D, R, C), dtype=np.int64)
    for cell, ids in journeys.items():
        volume[cell] = len(ids)
    mean = np.zeros((T, D, R, C), dtype=np.float64)
    occupied = count > 0
    mean[occupied] = speed_sum[occupied] / count[occupied]
    return mean, count, volume


def oracle_pipeline(records, spec: GridSpec, rules: FilterRules = FilterRules(),
                    with_counts: bool = False) -> list[BatchFrame]:
    mean, count, volume = oracle_lattice(records, spec, rules)
    mean32 = mean.astype(np.float32)
    vol32 = volume.astype(np.uint32)
    return [BatchFrame(t, mean32[t], vol32[t], count[t].astype(np.uint32) if with_counts else None)
            for t in range(spec.n_batches)]
