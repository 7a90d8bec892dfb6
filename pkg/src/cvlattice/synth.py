"""Deterministic synthetic connected-vehicle day.

Each journey draws from its own RNG substream (seed, journey index), so the
generated rows do not depend on how journeys are spread over shards or
workers. Speeds are integrated as km/h for movement purposes only.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np

from .ingest import HEADER, TIMESTAMP_FORMAT, CvRecord, SourceManifest

KM_PER_DEG = 111.32
SECONDS_PER_DAY = 86400
POSTAL_CODES = ("65536", "65201", "65101", "64106", "63101", "65801", "63701", "64801")
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_journeys: int = 100
    lat_min: float = 36.0
    lat_max: float = 40.6
    lon_min: float = -95.8
    lon_max: float = -89.1
    sample_period: float = 1.0
    mean_duration: float = 900.0
    speed_min: float = 0.0
    speed_max: float = 120.0
    speed_sigma: float = 2.0
    heading_sigma: float = 5.0
    n_shards: int = 4
    day: date = date(2021, 5, 9)

    def __post_init__(self):
        if self.n_journeys < 0:
            raise ValueError("n_journeys must be >= 0")
        if not (self.sample_period > 0):
            raise ValueError("sample_period must be > 0")
        if self.n_shards < 1:
            raise ValueError("n_shards must be >= 1")
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("empty bounding box")
        if not (0 <= self.speed_min <= self.speed_max):
            raise ValueError("speed range must satisfy 0 <= min <= max")
        if self.mean_duration <= 0 or self.heading_sigma < 0 or self.speed_sigma < 0:
            raise ValueError("durations and sigmas must be non-negative")

    @property
    def period_fraction(self) -> Fraction:
        return Fraction(str(self.sample_period)).limit_denominator(10**6)


@dataclass
class JourneyState:
    journey_id: str
    postal_code: str
    start_second: int
    k: int
    lat: float
    lon: float
    speed: float
    heading: float

    def second_of_day(self, period: Fraction) -> int:
        return self.start_second + (self.k * period.numerator) // period.denominator


class NoiseStream:
    """Standard normal draws from a Generator, fetched in blocks."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buf = np.empty(0)
        self._i = 0

    def normal(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self.rng.standard_normal(self.block)
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return float(v)


def journey_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _reflect(x: float, lo: float, hi: float) -> tuple[float, bool]:
    if x > hi:
        return max(2 * hi - x, lo), True
    if x < lo:
        return min(2 * lo - x, hi), True
    return x, False


def step_journey(state: JourneyState, config: SynthConfig, noise: NoiseStream):
    """Emit the record for the current sample and advance one sample period."""
    day0 = datetime(config.day.year, config.day.month, config.day.day)
    ts = day0 + timedelta(seconds=state.second_of_day(config.period_fraction))
    record = CvRecord(state.journey_id, ts, state.lat, state.lon, state.postal_code,
                      state.speed, state.heading)

    dt = config.sample_period
    heading = (state.heading + config.heading_sigma * noise.normal()) % 360.0
    mid = 0.5 * (config.speed_min + config.speed_max)
    speed = state.speed + 0.02 * dt * (mid - state.speed) + config.speed_sigma * math.sqrt(dt) * noise.normal()
    speed = min(max(speed, config.speed_min), config.speed_max)

    dist_km = speed * dt / 3600.0
    rad = math.radians(heading)
    lat = state.lat + dist_km * math.cos(rad) / KM_PER_DEG
    lon = state.lon + dist_km * math.sin(rad) / (KM_PER_DEG * max(math.cos(math.radians(state.lat)), 1e-6))
    lat, flipped = _reflect(lat, config.lat_min, config.lat_max)
    if flipped:
        heading = (180.0 - heading) % 360.0
    lon, flipped = _reflect(lon, config.lon_min, config.lon_max)
    if flipped:
        heading = (360.0 - heading) % 360.0

    nxt = replace(state, k=state.k + 1, lat=lat, lon=lon, speed=speed, heading=heading)
    return nxt, record


def start_journey(index: int, config: SynthConfig, rng: np.random.Generator):
    """Initial state and sample count for journey ``index``."""
    letters = rng.integers(0, 26, size=2)
    jid = f"{index:05d}{_LETTERS[letters[0]]}{_LETTERS[letters[1]]}"
    start = int(rng.integers(0, SECONDS_PER_DAY))
    duration = rng.exponential(config.mean_duration)
    n_samples = max(1, int(round(duration / config.sample_period)))
    # journeys stop at midnight
    period = config.period_fraction
    max_samples = ((SECONDS_PER_DAY - start) * period.denominator + period.numerator - 1) // period.numerator
    n_samples = min(n_samples, max_samples)
    state = JourneyState(
        journey_id=jid,
        postal_code=POSTAL_CODES[int(rng.integers(0, len(POSTAL_CODES)))],
        start_second=start,
        k=0,
        lat=float(rng.uniform(config.lat_min, config.lat_max)),
        lon=float(rng.uniform(config.lon_min, config.lon_max)),
        speed=float(rng.uniform(config.speed_min, config.speed_max)),
        heading=float(rng.uniform(0.0, 360.0)),
    )
    return state, n_samples


def journey_records(index: int, config: SynthConfig) -> Iterator[CvRecord]:
    rng = journey_rng(config.seed, index)
    state, n = start_journey(index, config, rng)
    noise = NoiseStream(rng)
    for _ in range(n):
        state, rec = step_journey(state, config, noise)
        yield rec


def _coord_text(x: float, lo: float, hi: float) -> str:
    text = f"{x:.6f}"
    v = float(text)
    if v < lo:
        return repr(lo)
    if v > hi:
        return repr(hi)
    return text


def format_row(rec: CvRecord, config: SynthConfig) -> str:
    heading = round(rec.heading, 2)
    if heading >= 360.0:
        heading = 0.0
    return ",".join((
        rec.journey_id,
        rec.timestamp.strftime(TIMESTAMP_FORMAT),
        _coord_text(rec.latitude, config.lat_min, config.lat_max),
        _coord_text(rec.longitude, config.lon_min, config.lon_max),
        rec.postal_code,
        f"{rec.speed:.2f}",
        f"{heading:.2f}",
    ))


def shard_name(config: SynthConfig, k: int) -> str:
    return f"cv_{config.day.isoformat()}_{k:04d}.csv"


def write_shard(config: SynthConfig, out_dir, k: int) -> tuple[str, int]:
    path = Path(out_dir) / shard_name(config, k)
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(HEADER) + "\n")
        for j in range(k, config.n_journeys, config.n_shards):
            lines = [format_row(r, config) for r in journey_records(j, config)]
            rows += len(lines)
            if lines:
                fh.write("\n".join(lines))
                fh.write("\n")
    return str(path), rows


def _write_shard_star(args):
    return write_shard(*args)


def generate_day(config: SynthConfig, out_dir, threads: int = 1) -> SourceManifest:
    """Write ``config.n_shards`` CSV shards (journeys dealt round-robin)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, str(out), k) for k in range(config.n_shards)]
    if threads > 1 and config.n_shards > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_write_shard_star, jobs))
    else:
        results = [write_shard(*j) for j in jobs]
    return SourceManifest(shard_paths=sorted(p for p, _ in results))


def count_rows(manifest: SourceManifest) -> int:
    total = 0
    for p in manifest.shard_paths:
        with open(p, "rb") as fh:
            total += sum(1 for _ in fh) - 1
    return total
