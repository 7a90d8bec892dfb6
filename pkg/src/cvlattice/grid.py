"""Spatial, temporal and directional discretization.

A cell is addressed by ``(t, d, r, c)``: temporal batch, direction bin, row
(latitude) and column (longitude). Cells are unrolled into one integer key

    g = ((t * D + d) * R + r) * C + c

which is the aggregation key used everywhere downstream. Row 0 is the
southern edge (``lat_min``); flipping for display happens at render time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from typing import NamedTuple

import numpy as np

from .errors import ComponentOutOfRange, IndexOverflow, InvalidGrid, OutOfBounds

MINUTES_PER_DAY = 1440
MIN_STEP_VALUE = 1e-9

DIRECTION_LABELS = ("N", "E", "S", "W")


def _count_bins(span: float, step: float) -> int:
    # ceil(span / step), snapping quotients that are an integer up to float noise
    q = span / step
    n = round(q)
    if abs(q - n) <= 1e-9 * max(1.0, abs(n)):
        return max(int(n), 1)
    return max(math.ceil(q), 1)


@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    lat_step: float
    lon_step: float
    min_step: int = 5
    dxn_step: int = 90
    dxn_offset: float = 0.0

    def __post_init__(self):
        if not (self.lat_min < self.lat_max):
            raise InvalidGrid(f"lat_min {self.lat_min} must be < lat_max {self.lat_max}")
        if not (self.lon_min < self.lon_max):
            raise InvalidGrid(f"lon_min {self.lon_min} must be < lon_max {self.lon_max}")
        for name in ("lat_step", "lon_step"):
            v = getattr(self, name)
            if not (v > MIN_STEP_VALUE) or not math.isfinite(v):
                raise InvalidGrid(f"{name} must be > {MIN_STEP_VALUE}, got {v}")
        if int(self.min_step) != self.min_step or self.min_step <= 0 or MINUTES_PER_DAY % int(self.min_step):
            raise InvalidGrid(f"min_step must be a positive divisor of 1440, got {self.min_step}")
        if int(self.dxn_step) != self.dxn_step or self.dxn_step <= 0 or 360 % int(self.dxn_step):
            raise InvalidGrid(f"dxn_step must be a positive divisor of 360, got {self.dxn_step}")
        if not (0.0 <= self.dxn_offset < 360.0):
            raise InvalidGrid(f"dxn_offset must be in [0, 360), got {self.dxn_offset}")
        object.__setattr__(self, "min_step", int(self.min_step))
        object.__setattr__(self, "dxn_step", int(self.dxn_step))

    @property
    def rows(self) -> int:
        return _count_bins(self.lat_max - self.lat_min, self.lat_step)

    @property
    def cols(self) -> int:
        return _count_bins(self.lon_max - self.lon_min, self.lon_step)

    @property
    def n_batches(self) -> int:
        return MINUTES_PER_DAY // self.min_step

    @property
    def n_directions(self) -> int:
        return 360 // self.dxn_step

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """(T, D, R, C)"""
        return (self.n_batches, self.n_directions, self.rows, self.cols)

    @property
    def n_cells(self) -> int:
        t, d, r, c = self.shape
        return t * d * r * c

    def direction_label(self, d: int) -> str:
        if self.n_directions == 4:
            return DIRECTION_LABELS[d]
        return f"D{d}"


class CellIndex(NamedTuple):
    t: int
    d: int
    r: int
    c: int


def _edge_bin(x: float, origin: float, step: float, n: int) -> int:
    k = math.floor((x - origin) / step)
    # the quotient can land one bin off near an edge; align with the float edges
    if origin + k * step > x:
        k -= 1
    elif origin + (k + 1) * step <= x:
        k += 1
    return min(max(k, 0), n - 1)


def _edge_bin_array(x: np.ndarray, origin: float, step: float, n: int) -> np.ndarray:
    k = np.floor((x - origin) / step)
    k -= (origin + k * step) > x
    k += (origin + (k + 1) * step) <= x
    return np.clip(k, 0, n - 1).astype(np.int64)


def lat_bin(latitude: float, spec: GridSpec) -> int:
    if not (spec.lat_min <= latitude <= spec.lat_max):
        raise OutOfBounds(f"latitude {latitude} outside [{spec.lat_min}, {spec.lat_max}]")
    return _edge_bin(latitude, spec.lat_min, spec.lat_step, spec.rows)


def lon_bin(longitude: float, spec: GridSpec) -> int:
    if not (spec.lon_min <= longitude <= spec.lon_max):
        raise OutOfBounds(f"longitude {longitude} outside [{spec.lon_min}, {spec.lon_max}]")
    return _edge_bin(longitude, spec.lon_min, spec.lon_step, spec.cols)


def time_bin(timestamp: datetime, spec: GridSpec) -> int:
    """Minute-of-day divided by ``min_step``; seconds are discarded."""
    return (timestamp.hour * 60 + timestamp.minute) // spec.min_step


def dxn_bin(heading: float, spec: GridSpec) -> int:
    h = heading + spec.dxn_offset if spec.dxn_offset else heading
    if h >= 360.0:
        h -= 360.0
    return _edge_bin(h, 0.0, float(spec.dxn_step), spec.n_directions)


def global_index(cell: CellIndex | tuple, spec: GridSpec) -> int:
    t, d, r, c = cell
    T, D, R, C = spec.shape
    for name, v, n in (("t", t, T), ("d", d, D), ("r", r, R), ("c", c, C)):
        if not (0 <= v < n):
            raise ComponentOutOfRange(f"{name}={v} outside [0, {n})")
    return ((t * D + d) * R + r) * C + c


def decompose(g: int, spec: GridSpec) -> CellIndex:
    T, D, R, C = spec.shape
    if not (0 <= g < T * D * R * C):
        raise IndexOverflow(f"global index {g} outside [0, {T * D * R * C})")
    g, c = divmod(g, C)
    g, r = divmod(g, R)
    t, d = divmod(g, D)
    return CellIndex(t, d, r, c)


# vectorized forms; callers are responsible for bounds (see aggregate.filter)

def lat_bins(lat: np.ndarray, spec: GridSpec) -> np.ndarray:
    return _edge_bin_array(np.asarray(lat, dtype=np.float64), spec.lat_min, spec.lat_step, spec.rows)


def lon_bins(lon: np.ndarray, spec: GridSpec) -> np.ndarray:
    return _edge_bin_array(np.asarray(lon, dtype=np.float64), spec.lon_min, spec.lon_step, spec.cols)


def time_bins(minute_of_day: np.ndarray, spec: GridSpec) -> np.ndarray:
    return np.asarray(minute_of_day, dtype=np.int64) // spec.min_step


def dxn_bins(heading: np.ndarray, spec: GridSpec) -> np.ndarray:
    h = np.asarray(heading, dtype=np.float64)
    if spec.dxn_offset:
        h = h + spec.dxn_offset
        h = np.where(h >= 360.0, h - 360.0, h)
    return _edge_bin_array(h, 0.0, float(spec.dxn_step), spec.n_directions)


def global_indices(t, d, r, c, spec: GridSpec) -> np.ndarray:
    _, D, R, C = spec.shape
    return ((np.asarray(t, np.int64) * D + d) * R + r) * C + c


def decompose_array(g: np.ndarray, spec: GridSpec):
    _, D, R, C = spec.shape
    g = np.asarray(g, dtype=np.int64)
    g, c = np.divmod(g, C)
    g, r = np.divmod(g, R)
    t, d = np.divmod(g, D)
    return t, d, r, c
