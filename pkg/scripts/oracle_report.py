"""Standalone oracle for an "echo nearest gallery neighbour" evaluation.

Reads the raw files directly, finds each query's nearest gallery record by
brute force, and scores that record's coordinate against ground truth. No
index, prompt, client or harness code is involved; only the geodesic
distance function is shared.

    python scripts/oracle_report.py GALLERY.gvec GALLERY.jsonl MANIFEST.jsonl QUERIES.gvec
"""

import json
import os
import struct
import sys

import numpy as np

from georag.geodesy import GeoCoord, geodesic_km

THRESHOLDS_KM = (1.0, 25.0, 200.0, 750.0, 2500.0)


def read_gvec(path):
    raw = open(path, "rb").read()
    assert raw[:4] == b"GVEC"
    _, dim, count = struct.unpack_from("<IIQ", raw, 4)
    return np.frombuffer(raw, "<f4", count * dim, 20).reshape(count, dim).astype(np.float32)


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def nearest(gallery, ids, q):
    sq = (gallery - q) * (gallery - q)
    dist = np.cumsum(sq, axis=1, dtype=np.float32)[:, -1]
    return min(range(len(ids)), key=lambda i: (float(dist[i]), ids[i]))


def oracle_report(gallery_vec, gallery_meta, manifest, queries):
    gallery = read_gvec(gallery_vec)
    meta = read_jsonl(gallery_meta)
    ids = [m["id"] for m in meta]
    items = read_jsonl(manifest)
    qs = read_gvec(queries)
    base = os.path.dirname(os.path.abspath(manifest))

    hits = [0] * len(THRESHOLDS_KM)
    n_scored = n_missing = 0
    for item, q in zip(items, qs):
        if not os.path.isfile(os.path.join(base, item["image_path"])):
            n_missing += 1
            continue
        n_scored += 1
        m = meta[nearest(gallery, ids, q)]
        err = geodesic_km(GeoCoord(m["lat"], m["lon"]), GeoCoord(item["lat"], item["lon"]))
        for t, thr in enumerate(THRESHOLDS_KM):
            if err <= thr:
                hits[t] += 1
    pct = [round(100.0 * h / n_scored, 1) if n_scored else None for h in hits]
    return {"n_scored": n_scored, "n_missing": n_missing, "pct": pct}


if __name__ == "__main__":
    if len(sys.argv) != 5:
        sys.exit(__doc__)
    print(json.dumps(oracle_report(*sys.argv[1:])))
