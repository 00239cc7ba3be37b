"""Seeded synthetic galleries and benchmarks for tests, demos and benchmarks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import write_vectors


def clustered_vectors(n: int, dim: int, n_clusters: int, seed: int, spread: float = 4.0) -> np.ndarray:
    """``n`` float32 vectors drawn from ``n_clusters`` unit-variance Gaussians."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, dim)) * spread
    labels = rng.integers(0, n_clusters, n)
    return (centers[labels] + rng.standard_normal((n, dim))).astype(np.float32)


def random_coords(n: int, rng: np.random.Generator) -> np.ndarray:
    lat = np.round(rng.uniform(-70, 70, n), 6)
    lon = np.round(rng.uniform(-179, 179, n), 6)
    return np.column_stack([lat, lon])


@dataclass(frozen=True)
class BenchmarkFiles:
    root: Path
    gallery_vectors: Path
    gallery_metadata: Path
    manifest: Path
    query_vectors: Path
    n_items: int
    n_missing: int


# ground-truth offsets (degrees) spanning every accuracy level
_OFFSETS = (0.002, 0.1, 0.8, 4.0, 15.0, 60.0)


def write_benchmark(root: str | Path, n_gallery: int = 2000, n_items: int = 100, dim: int = 32,
                    n_missing: int = 0, seed: int = 0) -> BenchmarkFiles:
    """Write a gallery (GVEC + JSONL) and a benchmark (manifest + query GVEC + images).

    Each query is a noisy copy of one gallery vector; its ground truth is that
    record's coordinate displaced by a seeded offset, so a model echoing the
    nearest neighbour lands at a spread of distance errors.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    gallery = clustered_vectors(n_gallery, dim, max(1, n_gallery // 50), seed)
    coords = random_coords(n_gallery, rng)
    ids = np.arange(1000, 1000 + n_gallery, dtype=np.uint64)

    paths = BenchmarkFiles(root, root / "gallery.gvec", root / "gallery.jsonl", root / "manifest.jsonl",
                           root / "queries.gvec", n_items, n_missing)
    write_vectors(paths.gallery_vectors, gallery)
    sources = ("EMP16", "OSV5M")
    with open(paths.gallery_metadata, "w", encoding="utf-8") as fh:
        for i in range(n_gallery):
            fh.write(json.dumps({"id": int(ids[i]), "lat": float(coords[i, 0]), "lon": float(coords[i, 1]),
                                 "source": sources[i % 2]}) + "\n")

    picks = rng.integers(0, n_gallery, n_items)
    queries = gallery[picks] + rng.normal(0, 0.05, (n_items, dim)).astype(np.float32)
    missing = set(rng.choice(n_items, size=n_missing, replace=False).tolist()) if n_missing else set()
    with open(paths.manifest, "w", encoding="utf-8") as fh:
        for i, j in enumerate(picks):
            off = _OFFSETS[i % len(_OFFSETS)]
            lat = float(np.clip(np.round(coords[j, 0] + rng.uniform(-off, off), 6), -89.9, 89.9))
            lon = float(np.round((coords[j, 1] + rng.uniform(-off, off) + 180) % 360 - 180, 6))
            name = f"images/q{i:05d}.jpg"
            if i not in missing:
                (root / name).write_bytes(b"\xff\xd8\xff\xe0" + f"synthetic image {i}".encode())
            fh.write(json.dumps({"id": f"q{i:05d}", "image_path": name, "lat": lat, "lon": lon}) + "\n")
    write_vectors(paths.query_vectors, queries.astype(np.float32))
    return paths
