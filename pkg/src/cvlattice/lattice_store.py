"""Day-level lattice container (CVL1) and PNG rendering.

Layout, all little-endian::

    header (58 bytes)
        magic      4s   b"CVL1"
        version    u16  1
        lat_min    f64
        lat_step   f64
        lon_min    f64
        lon_step   f64
        rows       u32
        cols       u32
        min_step   u16
        dxn_step   u16
        n_batches  u32
        day        i32  days since 1970-01-01
    n_batches blocks, each
        batch_index u32
        D speed planes (f32), then D volume planes (u32), each R x C row-major,
        row 0 = lat_min

With the default 90 degree direction step D = 4 and each block holds 8 planes,
so the file size is exactly ``58 + n_batches * (4 + 8 * R * C * 4)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from PIL import Image

from .aggregate import BatchFrame
from .errors import BadChannel, BadMagic, DimsMismatch, NonFiniteValue, TruncatedFile, VersionUnsupported
from .grid import DIRECTION_LABELS, GridSpec
from .normalize import NormalizationSpec, normalize_speed, normalize_volume

MAGIC = b"CVL1"
VERSION = 1
HEADER_STRUCT = struct.Struct("<4sH4dIIHHIi")
HEADER_SIZE = HEADER_STRUCT.size
assert HEADER_SIZE == 58

EPOCH_DAY = date(1970, 1, 1)


@dataclass(frozen=True)
class ContainerHeader:
    lat_min: float
    lat_step: float
    lon_min: float
    lon_step: float
    rows: int
    cols: int
    min_step: int
    dxn_step: int
    n_batches: int
    day: int
    version: int = VERSION

    @classmethod
    def for_grid(cls, spec: GridSpec, day: date | int) -> "ContainerHeader":
        day_no = day if isinstance(day, int) else (day - EPOCH_DAY).days
        return cls(spec.lat_min, spec.lat_step, spec.lon_min, spec.lon_step, spec.rows, spec.cols,
                   spec.min_step, spec.dxn_step, spec.n_batches, day_no)

    @property
    def n_directions(self) -> int:
        return 360 // self.dxn_step

    @property
    def date(self) -> date:
        return EPOCH_DAY + timedelta(days=self.day)

    @property
    def block_size(self) -> int:
        return 4 + 2 * self.n_directions * self.rows * self.cols * 4

    @property
    def file_size(self) -> int:
        return HEADER_SIZE + self.n_batches * self.block_size

    def grid(self) -> GridSpec:
        """Grid implied by the header (upper bounds are the last bin edges)."""
        return GridSpec(self.lat_min, self.lat_min + self.rows * self.lat_step,
                        self.lon_min, self.lon_min + self.cols * self.lon_step,
                        self.lat_step, self.lon_step, self.min_step, self.dxn_step)

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(MAGIC, self.version, self.lat_min, self.lat_step, self.lon_min,
                                  self.lon_step, self.rows, self.cols, self.min_step, self.dxn_step,
                                  self.n_batches, self.day)

    @classmethod
    def unpack(cls, buf: bytes) -> "ContainerHeader":
        if buf[:4] != MAGIC:
            raise BadMagic(f"bad magic {buf[:4]!r}")
        if len(buf) < HEADER_SIZE:
            raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
        (magic, version, lat_min, lat_step, lon_min, lon_step, rows, cols,
         min_step, dxn_step, n_batches, day) = HEADER_STRUCT.unpack(buf[:HEADER_SIZE])
        if version != VERSION:
            raise VersionUnsupported(f"container version {version} not supported")
        if dxn_step == 0 or 360 % dxn_step or min_step == 0 or n_batches != 1440 // min_step:
            raise DimsMismatch("inconsistent header dimensions")
        return cls(lat_min, lat_step, lon_min, lon_step, rows, cols, min_step, dxn_step,
                   n_batches, day, version)


def _check_frame(frame: BatchFrame, shape):
    if frame.speed.shape != shape or frame.volume.shape != shape:
        raise DimsMismatch(f"frame {frame.t} planes {frame.speed.shape}/{frame.volume.shape}, expected {shape}")
    if not np.isfinite(frame.speed).all():
        raise NonFiniteValue(f"frame {frame.t} has NaN/Inf speed values")


def encode_block(frame: BatchFrame) -> bytes:
    return b"".join((
        struct.pack("<I", frame.t),
        np.ascontiguousarray(frame.speed, dtype="<f4").tobytes(),
        np.ascontiguousarray(frame.volume, dtype="<u4").tobytes(),
    ))


def write_container(frames, spec: GridSpec, day, path) -> int:
    header = ContainerHeader.for_grid(spec, day)
    shape = (header.n_directions, header.rows, header.cols)
    if len(frames) != header.n_batches:
        raise DimsMismatch(f"expected {header.n_batches} frames, got {len(frames)}")
    for i, fr in enumerate(frames):
        if fr.t != i:
            raise DimsMismatch(f"frame {i} carries batch index {fr.t}")
        _check_frame(fr, shape)
    written = 0
    with open(path, "wb") as fh:
        written += fh.write(header.pack())
        for fr in frames:
            written += fh.write(encode_block(fr))
    assert written == header.file_size
    return written


def read_header(path) -> ContainerHeader:
    with open(path, "rb") as fh:
        return ContainerHeader.unpack(fh.read(HEADER_SIZE))


def read_container(path):
    data = Path(path).read_bytes()
    header = ContainerHeader.unpack(data[:HEADER_SIZE])
    if len(data) != header.file_size:
        raise TruncatedFile(f"{path}: size {len(data)} != expected {header.file_size}")
    D, R, C = header.n_directions, header.rows, header.cols
    plane_bytes = D * R * C * 4
    frames = []
    off = HEADER_SIZE
    for i in range(header.n_batches):
        (t,) = struct.unpack_from("<I", data, off)
        if t != i:
            raise DimsMismatch(f"block {i} carries batch index {t}")
        off += 4
        speed = np.frombuffer(data, "<f4", D * R * C, off).reshape(D, R, C).astype(np.float32)
        off += plane_bytes
        volume = np.frombuffer(data, "<u4", D * R * C, off).reshape(D, R, C).astype(np.uint32)
        off += plane_bytes
        frames.append(BatchFrame(t, speed, volume))
    return header, frames


def channel_name(k: int, n_directions: int = 4) -> str:
    kind = "speed" if k < n_directions else "volume"
    d = k % n_directions
    label = DIRECTION_LABELS[d] if n_directions == 4 else f"D{d}"
    return f"{kind}_{label}"


def channel_image(frame: BatchFrame, channel: int, norm: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Quantized channel, flipped so the northern edge is the top image row."""
    d = frame.speed.shape[0]
    if not (0 <= channel < 2 * d):
        raise BadChannel(f"channel {channel} outside [0, {2 * d})")
    if channel < d:
        q = normalize_speed(frame.speed[channel], norm)
    else:
        q = normalize_volume(frame.volume[channel - d], norm)
    return np.ascontiguousarray(q[::-1])


def render_channel(frame: BatchFrame, channel: int, norm: NormalizationSpec, path) -> Path:
    img = channel_image(frame, channel, norm)
    Image.fromarray(img).save(path, format="PNG")
    return Path(path)


def composite_image(frame: BatchFrame, norm: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """RGB composite: R = volume-weighted mean speed, G = total volume, B = dominant direction."""
    vol = frame.volume.astype(np.float64)
    total = vol.sum(axis=0)
    occupied = total > 0
    weighted = np.zeros(total.shape)
    np.divide((frame.speed.astype(np.float64) * vol).sum(axis=0), total, out=weighted, where=occupied)
    rgb = np.zeros(total.shape + (3,), np.uint8)
    rgb[..., 0] = normalize_speed(weighted, norm)
    rgb[..., 1] = normalize_volume(total, norm)
    rgb[..., 2] = (np.argmax(frame.volume, axis=0) * 85).clip(0, 255).astype(np.uint8)
    rgb[~occupied] = 0
    return np.ascontiguousarray(rgb[::-1])


def render_composite(frame: BatchFrame, norm: NormalizationSpec, path) -> Path:
    Image.fromarray(composite_image(frame, norm)).save(path, format="PNG")
    return Path(path)
