"""Resolved run configuration and its key=value text form.

The same format serves as the ``--config`` input and as the metadata sidecar
written next to every container, so a sidecar fed back as ``--config``
reproduces the run. Lines starting with ``#`` are ignored.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path

from .aggregate import FilterRules
from .grid import GridSpec
from .normalize import NormalizationSpec


@dataclass
class PipelineConfig:
    lat_min: float = 36.0
    lat_max: float = 40.6
    lon_min: float = -95.8
    lon_max: float = -89.1
    lat_step: float = 0.1
    lon_step: float = 0.1
    min_step: int = 5
    dxn_step: int = 90
    dxn_offset: float = 0.0
    require_in_grid: bool = True
    speed_ceiling: float = 250.0
    drop_missing: bool = False
    day: str = ""
    speed_max: float = 128.0
    volume_mode: str = "per_frame_minmax"
    volume_cap: float = 10.0
    n_partitions: int = 4
    threads: int = 1
    input: str = ""
    glob: str = "*.csv"
    output: str = ""

    def grid(self) -> GridSpec:
        return GridSpec(self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.lat_step,
                        self.lon_step, self.min_step, self.dxn_step, self.dxn_offset)

    def day_date(self) -> date | None:
        return date.fromisoformat(self.day) if self.day else None

    def filter_rules(self) -> FilterRules:
        return FilterRules(self.require_in_grid, self.speed_ceiling, self.drop_missing, self.day_date())

    def normalization(self) -> NormalizationSpec:
        return NormalizationSpec(self.speed_max, self.volume_mode, self.volume_cap)

    def validate(self) -> "PipelineConfig":
        self.grid()
        self.filter_rules()
        self.normalization()
        if self.n_partitions < 1:
            raise ValueError("n_partitions must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        return self

    def updated(self, **overrides) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(kind, text: str):
    if kind is bool or kind == "bool":
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in types:
            raise ValueError(f"config line {n}: unknown key {key!r}")
        values[key] = _coerce(types[key], val.strip())
    return dataclasses.replace(base or PipelineConfig(), **values)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def write_sidecar(path, config: PipelineConfig, notes: dict | None = None) -> Path:
    lines = [config.to_text()]
    for k, v in (notes or {}).items():
        lines.append(f"# {k}: {v}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
    return Path(path)
