import base64
import json

import numpy as np
import pytest

from georag.client import MockStep, MockTransport, ModelClient, ModelConfig
from georag.geodesy import GeoCoord
from georag.vecstore import GalleryRecord, IndexConfig, build_index

_ACCEPTANCE_LINES: list[str] = []


def brute_force_order(vectors, ids, query, largest=False):
    """Independent exact ranking: row-major float32 sequential sums via cumsum, full Python sort."""
    x = np.asarray(vectors, dtype=np.float32)
    q = np.asarray(query, dtype=np.float32)
    sq = (x - q) * (x - q)
    dist = np.cumsum(sq, axis=1, dtype=np.float32)[:, -1] if x.shape[1] else np.zeros(len(x), np.float32)
    pairs = [(float(d), int(i)) for d, i in zip(dist, ids)]
    if largest:
        pairs.sort(key=lambda p: (-p[0], p[1]))
    else:
        pairs.sort()
    return [i for _, i in pairs], [d for d, _ in pairs]


def make_records(vectors, coords=None, ids=None):
    n = len(vectors)
    ids = list(range(n)) if ids is None else ids
    coords = coords if coords is not None else [(0.0, 0.0)] * n
    return [GalleryRecord(int(i), np.asarray(v, dtype=np.float32), GeoCoord(*c))
            for i, v, c in zip(ids, vectors, coords)]


def image_keyed_responder(table, default="no idea"):
    """Mock responder answering by the attached image's bytes, independent of arrival order."""
    def respond(request):
        for part in request["messages"][0]["content"]:
            if part.get("type") == "image_url":
                data = base64.b64decode(part["image_url"]["url"].split(",", 1)[1])
                return MockStep.reply(table.get(data, default))
        return MockStep.reply(default)
    return respond


@pytest.fixture
def tiny_gallery():
    return make_records(
        [(0.0, 0.0), (1.0, 0.0), (5.0, 5.0)],
        coords=[(48.8566, 2.3522), (51.5074, -0.1278), (-33.8688, 151.2093)],
        ids=[1, 2, 3],
    )


@pytest.fixture
def tiny_index(tiny_gallery):
    return build_index(tiny_gallery, IndexConfig(dimension=2))


@pytest.fixture
def fast_config():
    return ModelConfig(base_url="http://mock.invalid/v1", model_name="mock-model", retry_backoff_s=0.0)


@pytest.fixture
def mock_client(fast_config):
    def make(**kw):
        return ModelClient(fast_config, MockTransport(**kw), sleep=lambda s: None)
    return make


@pytest.fixture
def write_jsonl(tmp_path):
    def write(name, rows):
        p = tmp_path / name
        p.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        return p
    return write


@pytest.fixture
def criterion():
    """Record a one-line acceptance verdict, printed in the terminal summary."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
