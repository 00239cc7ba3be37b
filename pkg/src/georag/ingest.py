"""Loaders for embedding blobs, gallery metadata and benchmark manifests."""

from __future__ import annotations

import enum
import json
import logging
import os
import struct
from dataclasses import dataclass
from os import PathLike
from typing import Sequence

import numpy as np

from .geodesy import CoordinateError, GeoCoord
from .vecstore import DimensionMismatch, DuplicateIdError, GalleryRecord, Source

log = logging.getLogger(__name__)

VEC_MAGIC = b"GVEC"
VEC_VERSION = 1
_VEC_HEADER = struct.Struct("<4sIIQ")


class IngestError(ValueError):
    pass


class VectorFormatError(IngestError):
    pass


class BadVectorMagicError(VectorFormatError):
    pass


class TruncatedVectorsError(VectorFormatError):
    pass


class MetadataError(IngestError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class CountMismatchError(IngestError):
    pass


@dataclass(frozen=True)
class VectorBlob:
    dimension: int
    data: np.ndarray  # (count, dimension) float32

    @property
    def count(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True, slots=True)
class MetadataRow:
    id: int
    lat: float
    lon: float
    source: str


class ItemStatus(enum.Enum):
    AVAILABLE = "AVAILABLE"
    MISSING = "MISSING"


@dataclass(frozen=True, slots=True)
class BenchmarkItem:
    id: str
    image_path: str
    ground_truth: GeoCoord
    status: ItemStatus


@dataclass(frozen=True)
class Manifest:
    items: tuple[BenchmarkItem, ...]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def n_available(self) -> int:
        return sum(it.status is ItemStatus.AVAILABLE for it in self.items)

    @property
    def n_missing(self) -> int:
        return len(self.items) - self.n_available

    @property
    def coverage(self) -> float | None:
        return self.n_available / len(self.items) if self.items else None


def encode_vectors(data: np.ndarray) -> bytes:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("expected a (count, dimension) array")
    count, dim = data.shape
    return _VEC_HEADER.pack(VEC_MAGIC, VEC_VERSION, dim, count) + data.astype("<f4").tobytes()


def write_vectors(path: str | PathLike, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_vectors(data))


def decode_vectors(raw: bytes) -> VectorBlob:
    if raw[:4] != VEC_MAGIC:
        raise BadVectorMagicError(f"bad magic {raw[:4]!r}, expected {VEC_MAGIC!r}")
    if len(raw) < _VEC_HEADER.size:
        raise TruncatedVectorsError("file shorter than header")
    _, version, dim, count = _VEC_HEADER.unpack_from(raw)
    if version != VEC_VERSION:
        raise VectorFormatError(f"unsupported version {version}")
    if dim == 0:
        raise VectorFormatError("zero dimension")
    expected = _VEC_HEADER.size + count * dim * 4
    if len(raw) < expected:
        have = (len(raw) - _VEC_HEADER.size) // (dim * 4)
        raise TruncatedVectorsError(f"header promises {count} rows, {have} present")
    if len(raw) > expected:
        raise VectorFormatError(f"{len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=_VEC_HEADER.size)
    data = data.astype(np.float32).reshape(count, dim)
    data.flags.writeable = False
    return VectorBlob(dim, data)


def load_vectors(path: str | PathLike) -> VectorBlob:
    with open(path, "rb") as fh:
        return decode_vectors(fh.read())


def _read_jsonl(path: str | PathLike):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetadataError(f"malformed record ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise MetadataError("record is not an object", lineno)
            yield lineno, obj


def _coord(obj: dict, lineno: int) -> GeoCoord:
    try:
        lat, lon = float(obj["lat"]), float(obj["lon"])
    except KeyError as exc:
        raise MetadataError(f"missing field {exc.args[0]!r}", lineno) from None
    except (TypeError, ValueError):
        raise MetadataError("lat/lon must be numbers", lineno) from None
    try:
        return GeoCoord(lat, lon)
    except CoordinateError as exc:
        raise MetadataError(f"coordinate out of range: {exc}", lineno) from None


def load_metadata(path: str | PathLike) -> list[MetadataRow]:
    rows: list[MetadataRow] = []
    seen: dict[int, int] = {}
    for lineno, obj in _read_jsonl(path):
        try:
            rid = obj["id"]
        except KeyError:
            raise MetadataError("missing field 'id'", lineno) from None
        if not isinstance(rid, int) or isinstance(rid, bool) or not 0 <= rid < 2**64:
            raise MetadataError(f"id must be an unsigned 64-bit integer, got {rid!r}", lineno)
        c = _coord(obj, lineno)
        if rid in seen:
            raise MetadataError(f"duplicate id {rid} (first seen on line {seen[rid]})", lineno)
        seen[rid] = lineno
        rows.append(MetadataRow(rid, c.lat, c.lon, str(obj.get("source", "OTHER"))))
    return rows


def assemble_gallery(blob: VectorBlob, rows: Sequence[MetadataRow], normalize: bool = False) -> list[GalleryRecord]:
    """Pair vector row i with metadata row i.

    With ``normalize`` each embedding is scaled to unit L2 norm (zero vectors
    are left as-is).
    """
    if blob.count != len(rows):
        raise CountMismatchError(f"count mismatch: {blob.count} vectors vs {len(rows)} metadata rows")
    data = blob.data
    if normalize:
        norms = np.sqrt(np.einsum("ij,ij->i", data.astype(np.float64), data.astype(np.float64)))
        norms[norms == 0] = 1.0
        data = (data / norms[:, None]).astype(np.float32)
    ids = set()
    out = []
    for i, row in enumerate(rows):
        if row.id in ids:
            raise DuplicateIdError(f"duplicate id {row.id}")
        ids.add(row.id)
        out.append(GalleryRecord(row.id, data[i], GeoCoord(row.lat, row.lon), Source.parse(row.source)))
    return out


def _readable(path: str) -> bool:
    return os.path.isfile(path) and os.access(path, os.R_OK)


def load_benchmark_manifest(path: str | PathLike) -> Manifest:
    """Load a manifest; items whose image is absent or unreadable become MISSING.

    Relative image paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    items = []
    for lineno, obj in _read_jsonl(path):
        try:
            item_id = str(obj["id"])
            image_path = str(obj["image_path"])
        except KeyError as exc:
            raise MetadataError(f"missing field {exc.args[0]!r}", lineno) from None
        gt = _coord(obj, lineno)
        full = image_path if os.path.isabs(image_path) else os.path.join(base, image_path)
        status = ItemStatus.AVAILABLE if _readable(full) else ItemStatus.MISSING
        items.append(BenchmarkItem(item_id, full, gt, status))
    m = Manifest(tuple(items))
    if m.n_missing:
        log.warning("%d of %d manifest images missing; coverage %.1f%%",
                    m.n_missing, len(m), 100 * m.coverage)
    return m


def check_dimension(blob: VectorBlob, dimension: int) -> None:
    if blob.dimension != dimension:
        raise DimensionMismatch(dimension, blob.dimension)
