"""Columnar record loading for the parallel pipeline.

Applies the same validation and dedup rules as :mod:`cvlattice.ingest`, but
over whole shards at once with pandas. Shards the C parser cannot handle
(ragged rows with extra fields, odd headers) fall back to the row parser.
"""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import Iterator

import numpy as np
import pandas as pd

from .ingest import (
    NUMBER_RE,
    NUMERIC,
    REQUIRED,
    TIMESTAMP_FORMAT,
    TIMESTAMP_RE,
    CvRecord,
    ParseRejection,
    RecordProvenance,
    RejectReason,
    SourceManifest,
    header_positions,
    iter_shard,
    partition_of,
)
from .errors import ZeroPartitions

log = logging.getLogger(__name__)

EPOCH = np.datetime64("1970-01-01T00:00:00", "s")

TABLE_COLUMNS = ("journey_id", "ts", "latitude", "longitude", "postal_code", "speed", "heading",
                 "shard", "line")


@dataclass
class RecordTable:
    """Deduplicated records in provenance order.

    ``frame`` columns: journey_id (categorical), ts (int64 seconds since
    1970-01-01, naive), latitude, longitude, postal_code, speed, heading,
    shard (rank of the shard path), line.
    """

    frame: pd.DataFrame
    shard_paths: list[str]

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def minute_of_day(self) -> np.ndarray:
        return (self.frame["ts"].to_numpy() % 86400) // 60

    @property
    def day_number(self) -> np.ndarray:
        return self.frame["ts"].to_numpy() // 86400

    def iter_records(self) -> Iterator[CvRecord]:
        f = self.frame
        ts = f["ts"].to_numpy().astype("datetime64[s]").astype(datetime)
        jid = f["journey_id"].astype(object).to_numpy()
        postal = f["postal_code"].astype(object).to_numpy()
        cols = [f[c].to_numpy() for c in ("latitude", "longitude", "speed", "heading")]
        for j, t, la, lo, pc, sp, hd in zip(jid, ts, cols[0], cols[1], postal, cols[2], cols[3]):
            yield CvRecord(j, t, float(la), float(lo), pc, float(sp), float(hd))

    def partition_ids(self, n_partitions: int) -> np.ndarray:
        if n_partitions < 1:
            raise ZeroPartitions(f"n_partitions must be >= 1, got {n_partitions}")
        cat = self.frame["journey_id"].cat
        per_category = np.fromiter(
            (partition_of(j, n_partitions) for j in cat.categories),
            dtype=np.int64, count=len(cat.categories))
        return per_category[cat.codes.to_numpy()] if len(per_category) else np.zeros(0, np.int64)


def _empty_frame() -> pd.DataFrame:
    return pd.DataFrame({
        "journey_id": pd.Categorical([], categories=pd.Index([], dtype=object)),
        "ts": np.zeros(0, np.int64),
        "latitude": np.zeros(0), "longitude": np.zeros(0),
        "postal_code": pd.Categorical([], categories=pd.Index([], dtype=object)),
        "speed": np.zeros(0), "heading": np.zeros(0),
        "shard": np.zeros(0, np.int32), "line": np.zeros(0, np.int64),
    })


def _frame_from_records(records, shard_rank: int) -> pd.DataFrame:
    if not records:
        return _empty_frame()
    recs, provs = zip(*records)
    ts = np.array([r.timestamp for r in recs], dtype="datetime64[s]")
    return pd.DataFrame({
        "journey_id": pd.Categorical([r.journey_id for r in recs]),
        "ts": (ts - EPOCH).astype(np.int64),
        "latitude": np.array([r.latitude for r in recs]),
        "longitude": np.array([r.longitude for r in recs]),
        "postal_code": pd.Categorical([r.postal_code for r in recs]),
        "speed": np.array([r.speed for r in recs]),
        "heading": np.array([r.heading for r in recs]),
        "shard": np.full(len(recs), shard_rank, np.int32),
        "line": np.array([p.line_number for p in provs], dtype=np.int64),
    })


def _parse_rows_fallback(path: str, shard_rank: int):
    total = 0
    rejected = Counter()
    good = []
    for item, prov in iter_shard(path):
        total += 1
        if isinstance(item, ParseRejection):
            rejected[item.reason.value] += 1
        else:
            good.append((item, prov))
    return _frame_from_records(good, shard_rank), total, rejected


def _missing(s: pd.Series) -> np.ndarray:
    return (s.isna() | (s == "")).to_numpy()


def parse_shard(path: str, shard_rank: int):
    """Parse one shard into (frame, total_rows, rejection Counter)."""
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False,
                          skip_blank_lines=False, encoding="utf-8-sig", engine="c")
    except pd.errors.EmptyDataError:
        return _empty_frame(), 0, Counter()
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError):
        return _parse_rows_fallback(path, shard_rank)

    positions = header_positions([str(c) for c in raw.columns])
    if any(c not in positions for c in REQUIRED) or raw.columns.duplicated().any():
        return _parse_rows_fallback(path, shard_rank)

    n = len(raw)
    cols = {c: raw.iloc[:, i] for c, i in positions.items()}
    if "postal_code" not in cols:
        cols["postal_code"] = pd.Series([""] * n, dtype=object)

    reason = np.full(n, "", dtype=object)
    undecided = np.ones(n, dtype=bool)

    def mark(mask, r):
        hit = undecided & mask
        reason[hit] = r.value
        undecided[hit] = False

    missing = np.zeros(n, dtype=bool)
    for c in REQUIRED:
        missing |= _missing(cols[c])
    mark(missing, RejectReason.MISSING_FIELD)

    ts_text = cols["timestamp"].fillna("").astype(str)
    ts_ok = ts_text.str.fullmatch(TIMESTAMP_RE.pattern).to_numpy(dtype=bool)
    ts_parsed = pd.to_datetime(ts_text.where(ts_ok, None), format=TIMESTAMP_FORMAT, errors="coerce")
    ts_ok &= ts_parsed.notna().to_numpy()
    mark(~ts_ok, RejectReason.BAD_TIMESTAMP)

    nums = {}
    for c in NUMERIC:
        text = cols[c].fillna("").astype(str)
        ok = text.str.fullmatch(NUMBER_RE.pattern).to_numpy(dtype=bool)
        mark(~ok, RejectReason.BAD_NUMERIC)
        vals = np.full(n, np.nan)
        if ok.any():
            vals[ok] = text[ok].to_numpy().astype(np.float64)
        nums[c] = vals

    with np.errstate(invalid="ignore"):
        lat, lon, speed, heading = (nums[c] for c in NUMERIC)
        mark(~((lat >= -90.0) & (lat <= 90.0)), RejectReason.RANGE_VIOLATION)
        mark(~((lon >= -180.0) & (lon <= 180.0)), RejectReason.RANGE_VIOLATION)
        mark(~((speed >= 0.0) & np.isfinite(speed)), RejectReason.RANGE_VIOLATION)
        mark(~((heading >= 0.0) & (heading <= 360.0)), RejectReason.RANGE_VIOLATION)

    keep = undecided
    rejected = Counter(reason[~keep].tolist())
    heading = np.where(heading == 360.0, 0.0, heading)
    ts_sec = (ts_parsed[keep].to_numpy().astype("datetime64[s]") - EPOCH).astype(np.int64)
    frame = pd.DataFrame({
        "journey_id": pd.Categorical(cols["journey_id"][keep].to_numpy()),
        "ts": ts_sec,
        "latitude": lat[keep], "longitude": lon[keep],
        "postal_code": pd.Categorical(cols["postal_code"][keep].fillna("").to_numpy()),
        "speed": speed[keep], "heading": heading[keep],
        "shard": np.full(int(keep.sum()), shard_rank, np.int32),
        "line": np.arange(1, n + 1, dtype=np.int64)[keep],
    })
    return frame, n, rejected


def _parse_shard_star(args):
    return parse_shard(*args)


def _concat_categorical(frames: list[pd.DataFrame], col: str) -> pd.Categorical:
    return pd.api.types.union_categoricals([f[col].astype("category") for f in frames], ignore_order=True)


def deduplicate_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Minimum-provenance survivor per (journey_id, ts); result in provenance order."""
    frame = frame.sort_values(["shard", "line"], kind="stable", ignore_index=True)
    key = ["journey_id", "ts"]
    dup = frame.duplicated(subset=key, keep="first")
    if dup.any():
        payload = key + ["latitude", "longitude", "postal_code", "speed", "heading"]
        n_conflict = (~frame.duplicated(subset=payload)).sum() - (~dup).sum()
        if n_conflict:
            log.warning("%d duplicate rows carried conflicting payloads", int(n_conflict))
        frame = frame[~dup.to_numpy()].reset_index(drop=True)
    return frame


def load_table(manifest: SourceManifest, threads: int = 1, shard_order=None) -> RecordTable:
    """Parse, validate and deduplicate all shards of ``manifest``.

    ``shard_order`` optionally permutes the order shards are processed in;
    the result does not depend on it.
    """
    paths = list(manifest.shard_paths)
    rank = {p: i for i, p in enumerate(sorted(paths))}
    order = list(shard_order) if shard_order is not None else paths
    jobs = [(p, rank[p]) for p in order]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_parse_shard_star, jobs))
    else:
        results = [parse_shard(*j) for j in jobs]

    frames = []
    for frame, total, rejected in results:
        manifest.total_rows += total
        manifest.rejected.update(rejected)
        frames.append(frame)
    frames = [f for f in frames if len(f)]
    if not frames:
        return RecordTable(_empty_frame(), sorted(paths))
    jid = _concat_categorical(frames, "journey_id")
    postal = _concat_categorical(frames, "postal_code")
    frame = pd.concat([f.drop(columns=["journey_id", "postal_code"]) for f in frames], ignore_index=True)
    frame.insert(0, "journey_id", jid)
    frame.insert(4, "postal_code", postal)
    frame = deduplicate_frame(frame)
    # category order must not depend on shard processing order
    used = frame["journey_id"].cat.remove_unused_categories()
    frame["journey_id"] = used.cat.reorder_categories(sorted(used.cat.categories))
    return RecordTable(frame, sorted(paths))


def table_from_records(records) -> RecordTable:
    """Build a table from already-deduplicated CvRecords (provenance synthesized)."""
    recs = list(records)
    return RecordTable(
        _frame_from_records([(r, RecordProvenance("", i + 1)) for i, r in enumerate(recs)], 0), [])
