"""Partition-parallel ETL from connected-vehicle telemetry to a spatio-temporal lattice."""

from .aggregate import BatchFrame, FilterRules, PartialAggregate, run_pipeline
from .grid import CellIndex, GridSpec
from .ingest import CvRecord, RecordProvenance, SourceManifest
from .normalize import NormalizationSpec

__version__ = "0.1.0"

__all__ = [
    "BatchFrame", "CellIndex", "CvRecord", "FilterRules", "GridSpec", "NormalizationSpec",
    "PartialAggregate", "RecordProvenance", "SourceManifest", "run_pipeline",
]
