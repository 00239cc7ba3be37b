"""Exact / IVF L2 vector index over geo-tagged gallery embeddings.

Distances use a fixed arithmetic so results are reproducible bit-for-bit:
per-component squared differences are formed in float32 and accumulated in
float32 in ascending component order; the square root is taken in float64.
Vectors are held dimension-major, which lets that accumulation run as one
contiguous pass per component.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Sequence

import numpy as np

from .geodesy import GeoCoord

MAGIC = b"GRAG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBIQI")


class VecStoreError(Exception):
    """Base class for index construction and search errors."""


class DimensionMismatch(VecStoreError, ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class DuplicateIdError(VecStoreError, ValueError):
    pass


class IndexFormatError(VecStoreError):
    """Base for on-disk format problems."""


class BadMagicError(IndexFormatError):
    pass


class UnsupportedVersionError(IndexFormatError):
    pass


class TruncatedFileError(IndexFormatError):
    pass


class ChecksumMismatchError(IndexFormatError):
    pass


class Source(enum.Enum):
    EMP16 = "EMP16"
    OSV5M = "OSV5M"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, tag: str) -> "Source":
        try:
            return cls(tag.upper().replace("-", ""))
        except ValueError:
            return cls.OTHER


class IndexMode(enum.IntEnum):
    FLAT_EXACT = 0
    IVF = 1


@dataclass(frozen=True)
class GalleryRecord:
    id: int
    embedding: np.ndarray
    coord: GeoCoord
    source: Source = Source.OTHER


@dataclass(frozen=True)
class IndexConfig:
    dimension: int
    mode: IndexMode = IndexMode.FLAT_EXACT
    ivf_nlist: int = 64
    ivf_nprobe: int = 8
    kmeans_iterations: int = 20
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.kmeans_iterations < 1:
            raise ValueError("kmeans_iterations must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")
        if self.mode is IndexMode.IVF:
            if self.ivf_nlist < 1 or self.ivf_nprobe < 1:
                raise ValueError("IVF requires nlist >= 1 and nprobe >= 1")
            if self.ivf_nprobe > self.ivf_nlist:
                raise ValueError(f"nprobe {self.ivf_nprobe} exceeds nlist {self.ivf_nlist}")


@dataclass(frozen=True, slots=True)
class Neighbor:
    id: int
    coord: GeoCoord
    distance: float


def _as_vector(x, dimension: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float32)
    if v.ndim != 1:
        raise ValueError(f"embedding must be 1-D, got shape {v.shape}")
    if dimension is not None and v.shape[0] != dimension:
        raise DimensionMismatch(dimension, v.shape[0])
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite components")
    return v


def squared_distances(cols: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared L2 distance from ``query`` to every column of ``cols`` (d x n), float32."""
    d, n = cols.shape
    acc = np.zeros(n, dtype=np.float32)
    tmp = np.empty(n, dtype=np.float32)
    for j in range(d):
        np.subtract(cols[j], query[j], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        acc += tmp
    return acc


def l2_distance(a, b) -> float:
    va = np.asarray(a, dtype=np.float32).ravel()
    vb = np.asarray(b, dtype=np.float32).ravel()
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatch(va.shape[0], vb.shape[0])
    _as_vector(va)
    _as_vector(vb)
    sq = squared_distances(va.reshape(-1, 1), vb)[0]
    return float(np.sqrt(np.float64(sq)))


def _assign(cols: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index per column; ties go to the lowest centroid index."""
    n = cols.shape[1]
    best = np.full(n, np.inf, dtype=np.float32)
    arg = np.zeros(n, dtype=np.uint32)
    for c in range(centroids.shape[0]):
        d = squared_distances(cols, centroids[c])
        better = d < best
        best[better] = d[better]
        arg[better] = c
    return arg


def train_kmeans(cols: np.ndarray, k: int, iterations: int, seed: int) -> np.ndarray:
    """Lloyd's k-means over the columns of ``cols``; returns (k, d) float32 centroids.

    Initial centroids are ``k`` distinct records drawn with ``seed``. A cluster
    that empties keeps its previous centroid.
    """
    d, n = cols.shape
    rng = np.random.default_rng(seed)
    init = np.sort(rng.choice(n, size=k, replace=False))
    centroids = np.ascontiguousarray(cols[:, init].T)
    for _ in range(iterations):
        assign = _assign(cols, centroids)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros((k, d), dtype=np.float64)
        for j in range(d):
            sums[:, j] = np.bincount(assign, weights=cols[j], minlength=k)
        nonempty = counts > 0
        updated = centroids.copy()
        updated[nonempty] = (sums[nonempty] / counts[nonempty, None]).astype(np.float32)
        if np.array_equal(updated, centroids):
            break
        centroids = updated
    return centroids


def _top_k(dist: np.ndarray, ids: np.ndarray, k: int, largest: bool) -> np.ndarray:
    """Positions of the k smallest (or largest) distances, ties by ascending id."""
    n = dist.shape[0]
    k = min(k, n)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k < n:
        if largest:
            part = np.argpartition(dist, n - k)[n - k:]
            cand = np.flatnonzero(dist >= dist[part].min())
        else:
            part = np.argpartition(dist, k - 1)[:k]
            cand = np.flatnonzero(dist <= dist[part].max())
    else:
        cand = np.arange(n)
    key = -dist[cand] if largest else dist[cand]
    order = np.lexsort((ids[cand], key))
    return cand[order[:k]]


@dataclass(frozen=True, eq=False)
class Index:
    """Immutable gallery index. Build with :func:`build_index`."""

    dimension: int
    mode: IndexMode
    ids: np.ndarray  # (n,) uint64
    coords: np.ndarray  # (n, 2) float64, lat then lon
    cols: np.ndarray  # (d, n) float32, dimension-major
    centroids: np.ndarray | None = None  # (nlist, d) float32
    assignments: np.ndarray | None = None  # (n,) uint32
    nprobe: int = 8
    sources: tuple[Source, ...] | None = None
    _lists: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        for arr in (self.ids, self.coords, self.cols, self.centroids, self.assignments):
            if arr is not None:
                arr.flags.writeable = False
        if self.mode is IndexMode.IVF and self._lists is None:
            order = np.argsort(self.assignments, kind="stable")
            bounds = np.searchsorted(self.assignments[order], np.arange(self.nlist + 1))
            lists = tuple(order[bounds[i]:bounds[i + 1]] for i in range(self.nlist))
            object.__setattr__(self, "_lists", lists)

    @property
    def count(self) -> int:
        return int(self.ids.shape[0])

    def __len__(self) -> int:
        return self.count

    @property
    def nlist(self) -> int:
        return 0 if self.centroids is None else int(self.centroids.shape[0])

    @property
    def vectors(self) -> np.ndarray:
        """Row-major (n, d) view of the stored embeddings."""
        return self.cols.T

    def list_sizes(self) -> np.ndarray:
        if self._lists is None:
            return np.empty(0, dtype=np.int64)
        return np.array([len(lst) for lst in self._lists], dtype=np.int64)

    def with_nprobe(self, nprobe: int) -> "Index":
        if self.mode is IndexMode.IVF and not 1 <= nprobe <= self.nlist:
            raise ValueError(f"nprobe must be in [1, {self.nlist}]")
        return Index(
            self.dimension, self.mode, self.ids, self.coords, self.cols,
            self.centroids, self.assignments, nprobe, self.sources, self._lists,
        )

    def _neighbors(self, positions: np.ndarray, dist_sq: np.ndarray) -> list[Neighbor]:
        out = []
        for p, d2 in zip(positions.tolist(), dist_sq.tolist()):
            lat, lon = self.coords[p]
            out.append(Neighbor(int(self.ids[p]), GeoCoord(float(lat), float(lon)),
                                float(np.sqrt(np.float64(d2)))))
        return out

    def _query(self, query) -> np.ndarray:
        return _as_vector(query, self.dimension)

    def search_similar(self, query, k: int) -> list[Neighbor]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._query(query)
        if self.count == 0:
            return []
        if self.mode is IndexMode.IVF:
            return self._ivf_similar(q, k)
        dist = squared_distances(self.cols, q)
        pos = _top_k(dist, self.ids, k, largest=False)
        return self._neighbors(pos, dist[pos])

    def _ivf_similar(self, q: np.ndarray, k: int) -> list[Neighbor]:
        cdist = squared_distances(np.ascontiguousarray(self.centroids.T), q)
        probe = np.lexsort((np.arange(self.nlist), cdist))[: self.nprobe]
        members = np.concatenate([self._lists[c] for c in probe])
        if members.size == 0:
            return []
        dist = squared_distances(self.cols[:, members], q)
        sel = _top_k(dist, self.ids[members], k, largest=False)
        return self._neighbors(members[sel], dist[sel])

    def search_dissimilar(self, query, k: int) -> list[Neighbor]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = self._query(query)
        if self.count == 0:
            return []
        dist = squared_distances(self.cols, q)
        pos = _top_k(dist, self.ids, k, largest=True)
        return self._neighbors(pos, dist[pos])

    def search_both(self, query, k_similar: int, k_dissimilar: int) -> tuple[list[Neighbor], list[Neighbor]]:
        """Similar and dissimilar neighbours; FLAT indexes share one distance scan."""
        if k_similar < 1 or k_dissimilar < 1:
            raise ValueError("k must be >= 1")
        q = self._query(query)
        if self.count == 0:
            return [], []
        dist = squared_distances(self.cols, q)
        far = _top_k(dist, self.ids, k_dissimilar, largest=True)
        if self.mode is IndexMode.IVF:
            near = self._ivf_similar(q, k_similar)
        else:
            pos = _top_k(dist, self.ids, k_similar, largest=False)
            near = self._neighbors(pos, dist[pos])
        return near, self._neighbors(far, dist[far])

    def record(self, position: int) -> GalleryRecord:
        lat, lon = self.coords[position]
        src = self.sources[position] if self.sources is not None else Source.OTHER
        return GalleryRecord(int(self.ids[position]), self.cols[:, position].copy(),
                             GeoCoord(float(lat), float(lon)), src)


def build_index(records: Sequence[GalleryRecord] | Iterable[GalleryRecord], config: IndexConfig) -> Index:
    records = list(records)
    d = config.dimension
    n = len(records)
    ids = np.empty(n, dtype=np.uint64)
    coords = np.empty((n, 2), dtype=np.float64)
    vectors = np.empty((n, d), dtype=np.float32)
    for i, r in enumerate(records):
        if not 0 <= r.id < 2**64:
            raise ValueError(f"id {r.id} does not fit in 64 unsigned bits")
        ids[i] = r.id
        coords[i] = (r.coord.lat, r.coord.lon)
        vectors[i] = _as_vector(r.embedding, d)
    return build_index_from_arrays(ids, coords, vectors, config, tuple(r.source for r in records))


def build_index_from_arrays(ids, coords, vectors, config: IndexConfig,
                            sources: tuple[Source, ...] | None = None) -> Index:
    """Columnar variant of :func:`build_index` for large galleries."""
    d = config.dimension
    ids = np.asarray(ids, dtype=np.uint64)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise ValueError("vectors must be (count, dimension)")
    if vectors.shape[1] != d:
        raise DimensionMismatch(d, vectors.shape[1])
    n = vectors.shape[0]
    if ids.shape[0] != n or coords.shape[0] != n:
        raise ValueError(f"{ids.shape[0]} ids, {coords.shape[0]} coords, {n} vectors")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("embeddings have non-finite components")
    lat, lon = coords[:, 0], coords[:, 1]
    if not (np.all(np.abs(lat) <= 90) and np.all(np.abs(lon) <= 180)):
        raise ValueError("coordinate out of range")
    uniq, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise DuplicateIdError(f"duplicate id {int(uniq[counts > 1][0])}")
    cols = np.ascontiguousarray(vectors.T)

    if config.mode is IndexMode.FLAT_EXACT:
        return Index(d, config.mode, ids.copy(), coords.copy(), cols, sources=sources, nprobe=config.ivf_nprobe)

    if n < config.ivf_nlist:
        raise ValueError(f"IVF needs at least nlist={config.ivf_nlist} records, got {n}")
    centroids = train_kmeans(cols, config.ivf_nlist, config.kmeans_iterations, config.rng_seed)
    assignments = _assign(cols, centroids)
    return Index(d, config.mode, ids.copy(), coords.copy(), cols, centroids, assignments,
                 nprobe=config.ivf_nprobe, sources=sources)


def serialize_index(index: Index) -> bytes:
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, int(index.mode), index.dimension, index.count, index.nlist),
        index.ids.astype("<u8", copy=False).tobytes(),
        index.coords.astype("<f8", copy=False).tobytes(),
        np.ascontiguousarray(index.cols.T).astype("<f4", copy=False).tobytes(),
    ]
    if index.mode is IndexMode.IVF:
        parts.append(index.centroids.astype("<f4", copy=False).tobytes())
        parts.append(index.assignments.astype("<u4", copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_index(data: bytes, nprobe: int | None = None) -> Index:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size + 4:
        raise TruncatedFileError("file shorter than header")
    _, version, mode, dim, count, nlist = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    try:
        mode = IndexMode(mode)
    except ValueError:
        raise IndexFormatError(f"unknown mode byte {mode}") from None
    expected = _HEADER.size + count * (8 + 16 + 4 * dim) + 4
    if mode is IndexMode.IVF:
        expected += nlist * dim * 4 + count * 4
    if len(data) < expected:
        raise TruncatedFileError(f"expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise IndexFormatError(f"{len(data) - expected} trailing bytes")
    (stored_crc,) = struct.unpack_from("<I", data, expected - 4)
    if zlib.crc32(data[: expected - 4]) != stored_crc:
        raise ChecksumMismatchError("CRC32 mismatch")

    off = _HEADER.size

    def take(dtype: str, n: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=off)
        off += arr.nbytes
        return arr.astype(dtype[1:], copy=True)

    ids = take("<u8", count)
    coords = take("<f8", count * 2).reshape(count, 2)
    cols = np.ascontiguousarray(take("<f4", count * dim).reshape(count, dim).T)
    if mode is IndexMode.FLAT_EXACT:
        return Index(dim, mode, ids, coords, cols, nprobe=nprobe or 8)
    centroids = take("<f4", nlist * dim).reshape(nlist, dim)
    assignments = take("<u4", count)
    if nprobe is None:
        nprobe = min(8, nlist)
    return Index(dim, mode, ids, coords, cols, centroids, assignments, nprobe=nprobe)


def save_index(index: Index, path: str | PathLike) -> int:
    """Write ``index`` to ``path``; returns the CRC32 trailer."""
    data = serialize_index(index)
    with open(path, "wb") as fh:
        fh.write(data)
    return struct.unpack("<I", data[-4:])[0]


def load_index(path: str | PathLike, nprobe: int | None = None) -> Index:
    with open(path, "rb") as fh:
        data = fh.read()
    return deserialize_index(data, nprobe=nprobe)


def file_checksum(path: str | PathLike) -> str:
    """CRC32 trailer of an index file, as 8 hex digits."""
    with open(path, "rb") as fh:
        fh.seek(-4, 2)
        return f"{struct.unpack('<I', fh.read(4))[0]:08x}"
