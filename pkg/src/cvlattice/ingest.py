"""Shard discovery, row parsing, deduplication and partitioning.

This is the record-at-a-time path. ``table.py`` holds the columnar loader the
pipeline uses; both apply the same validation rules and are cross-checked in
the test suite.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
import re
import warnings
import zlib
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import EmptyManifest, MissingRoot, ZeroPartitions

log = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

# canonical column order, identical to the source snapshot layout
COLUMNS = ("journey_id", "timestamp", "latitude", "longitude", "postal_code", "speed", "heading")
HEADER = ("Journey Id", "Timestamp", "Latitude", "Longitude", "Postal Code", "Speed", "Heading")
REQUIRED = ("journey_id", "timestamp", "latitude", "longitude", "speed", "heading")
NUMERIC = ("latitude", "longitude", "speed", "heading")

NUMBER_RE = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
TIMESTAMP_RE = re.compile(r"[0-9]{4}-[0-9]{2}-[0-9]{2} [0-9]{2}:[0-9]{2}:[0-9]{2}")


class RejectReason(str, enum.Enum):
    MISSING_FIELD = "MissingField"
    BAD_TIMESTAMP = "BadTimestamp"
    BAD_NUMERIC = "BadNumeric"
    RANGE_VIOLATION = "RangeViolation"


@dataclass(frozen=True, slots=True)
class CvRecord:
    journey_id: str
    timestamp: datetime
    latitude: float
    longitude: float
    postal_code: str
    speed: float
    heading: float

    @property
    def minute_of_day(self) -> int:
        return self.timestamp.hour * 60 + self.timestamp.minute


class RecordProvenance(NamedTuple):
    """Where a row came from. Tuple order is the dedup total order."""

    shard_path: str
    line_number: int


@dataclass(frozen=True)
class ParseRejection:
    reason: RejectReason
    provenance: RecordProvenance
    detail: str = ""


@dataclass
class SourceManifest:
    shard_paths: list[str]
    total_rows: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def rejected_rows(self) -> int:
        return sum(self.rejected.values())

    @property
    def accepted_rows(self) -> int:
        return self.total_rows - self.rejected_rows


def discover_shards(root_dir, glob: str = "*.csv") -> SourceManifest:
    root = Path(root_dir)
    if not root.is_dir():
        raise MissingRoot(f"input directory not found: {root}")
    paths = sorted(str(p) for p in root.glob(glob) if p.is_file())
    if not paths:
        warnings.warn(f"no shards matching {glob!r} under {root}", EmptyManifest, stacklevel=2)
    return SourceManifest(shard_paths=paths)


def normalize_column_name(name: str) -> str:
    return re.sub(r"[\s_]+", "", name.strip().lower())


_CANONICAL_KEYS = {normalize_column_name(h): c for h, c in zip(HEADER, COLUMNS)}


def header_positions(header_fields: Sequence[str]) -> dict[str, int]:
    """Map canonical column names to positions. Unknown columns are dropped."""
    positions = {}
    for i, name in enumerate(header_fields):
        key = _CANONICAL_KEYS.get(normalize_column_name(name))
        if key is not None and key not in positions:
            positions[key] = i
    return positions


DEFAULT_POSITIONS = {c: i for i, c in enumerate(COLUMNS)}


def parse_fields(fields: Sequence[str], provenance: RecordProvenance,
                 positions: dict[str, int] = DEFAULT_POSITIONS) -> CvRecord | ParseRejection:
    values = {}
    for col in COLUMNS:
        i = positions.get(col)
        v = fields[i] if i is not None and i < len(fields) else ""
        if col in REQUIRED and v == "":
            return ParseRejection(RejectReason.MISSING_FIELD, provenance, col)
        values[col] = v

    ts_text = values["timestamp"]
    if not TIMESTAMP_RE.fullmatch(ts_text):
        return ParseRejection(RejectReason.BAD_TIMESTAMP, provenance, ts_text)
    try:
        ts = datetime.strptime(ts_text, TIMESTAMP_FORMAT)
    except ValueError:
        return ParseRejection(RejectReason.BAD_TIMESTAMP, provenance, ts_text)

    nums = {}
    for col in NUMERIC:
        if not NUMBER_RE.fullmatch(values[col]):
            return ParseRejection(RejectReason.BAD_NUMERIC, provenance, col)
        nums[col] = float(values[col])

    lat, lon, speed, heading = nums["latitude"], nums["longitude"], nums["speed"], nums["heading"]
    if not (-90.0 <= lat <= 90.0):
        return ParseRejection(RejectReason.RANGE_VIOLATION, provenance, "latitude")
    if not (-180.0 <= lon <= 180.0):
        return ParseRejection(RejectReason.RANGE_VIOLATION, provenance, "longitude")
    if not (0.0 <= speed < float("inf")):
        return ParseRejection(RejectReason.RANGE_VIOLATION, provenance, "speed")
    if not (0.0 <= heading <= 360.0):
        return ParseRejection(RejectReason.RANGE_VIOLATION, provenance, "heading")
    if heading == 360.0:
        heading = 0.0

    return CvRecord(values["journey_id"], ts, lat, lon, values["postal_code"], speed, heading)


def parse_record(line: str, provenance: RecordProvenance,
                 positions: dict[str, int] = DEFAULT_POSITIONS) -> CvRecord | ParseRejection:
    rows = list(csv.reader(io.StringIO(line)))
    return parse_fields(rows[0] if rows else [], provenance, positions)


def _format_float(v: float) -> str:
    return repr(float(v))


def serialize_record(record: CvRecord) -> str:
    """CSV row text in canonical column order (no trailing newline)."""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([
        record.journey_id,
        record.timestamp.strftime(TIMESTAMP_FORMAT),
        _format_float(record.latitude),
        _format_float(record.longitude),
        record.postal_code,
        _format_float(record.speed),
        _format_float(record.heading),
    ])
    return buf.getvalue()


def iter_shard(path) -> Iterator[tuple[CvRecord | ParseRejection, RecordProvenance]]:
    path = str(path)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        positions = header_positions(header)
        missing = [c for c in REQUIRED if c not in positions]
        if missing:
            log.warning("shard %s lacks columns %s; all rows rejected", path, missing)
        for line_number, fields in enumerate(reader, start=1):
            prov = RecordProvenance(path, line_number)
            yield parse_fields(fields, prov, positions), prov


def read_records(manifest: SourceManifest) -> list[tuple[CvRecord, RecordProvenance]]:
    """Parse every shard, updating the manifest's row and rejection counts."""
    out = []
    for path in manifest.shard_paths:
        for item, prov in iter_shard(path):
            manifest.total_rows += 1
            if isinstance(item, ParseRejection):
                manifest.rejected[item.reason.value] += 1
            else:
                out.append((item, prov))
    return out


def deduplicate(records: Iterable[tuple[CvRecord, RecordProvenance]]) -> list[CvRecord]:
    """Keep one record per (journey_id, timestamp): the one with minimum provenance.

    Output is ordered by survivor provenance, so it does not depend on the
    order the input arrives in.
    """
    best: dict[tuple[str, datetime], tuple[RecordProvenance, CvRecord]] = {}
    conflicts = 0
    for rec, prov in records:
        key = (rec.journey_id, rec.timestamp)
        held = best.get(key)
        if held is None:
            best[key] = (prov, rec)
            continue
        if held[1] != rec:
            conflicts += 1
        if prov < held[0]:
            best[key] = (prov, rec)
    if conflicts:
        log.warning("%d duplicate keys carried conflicting payloads", conflicts)
    return [rec for _, rec in sorted(best.values(), key=lambda pr: pr[0])]


def load_records(manifest: SourceManifest) -> list[CvRecord]:
    return deduplicate(read_records(manifest))


def partition_of(journey_id: str, n_partitions: int) -> int:
    return zlib.crc32(journey_id.encode("utf-8")) % n_partitions


def partition(records: Iterable[CvRecord], n_partitions: int) -> list[list[CvRecord]]:
    """Split by a stable hash of journey id, so a journey never straddles partitions."""
    if n_partitions < 1:
        raise ZeroPartitions(f"n_partitions must be >= 1, got {n_partitions}")
    parts: list[list[CvRecord]] = [[] for _ in range(n_partitions)]
    for rec in records:
        parts[partition_of(rec.journey_id, n_partitions)].append(rec)
    return parts
