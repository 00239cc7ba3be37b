import json
import random

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from conftest import image_keyed_responder, make_records
from georag.client import MockStep, MockTransport, ModelClient, echo_nearest_responder
from georag.evalharness import (
    AccuracyReport,
    EvalConfig,
    EvalOutcome,
    OutcomeStatus,
    aggregate,
    evaluate_dataset,
    evaluate_item,
    parse_report_json,
    read_outcomes,
    render_report,
)
from georag.geodesy import LEVELS, AccuracyLevel, GeoCoord, bucket, geodesic_km
from georag.ingest import BenchmarkItem, ItemStatus, Manifest
from georag.promptgen import format_coord
from georag.vecstore import IndexConfig, build_index


@pytest.fixture
def item(tmp_path):
    p = tmp_path / "q.jpg"
    p.write_bytes(b"\xff\xd8 query")
    return BenchmarkItem("q", str(p), GeoCoord(51.5074, -0.1278), ItemStatus.AVAILABLE)


def test_truth_echo_hits_everything(item, tiny_index, mock_client):
    client = mock_client(default=MockStep.reply(format_coord(item.ground_truth)))
    out = evaluate_item(item, tiny_index, (0.9, 0.0), client)
    assert out.error_km == 0.0
    assert out.levels_hit == set(AccuracyLevel)
    assert not out.parse_failed
    assert out.trace["similar_ids"] == [2, 1, 3]
    assert out.trace["dissimilar_ids"] == [3, 1, 2]


def test_unparseable_is_a_miss(item, tiny_index, mock_client):
    out = evaluate_item(item, tiny_index, (0.9, 0.0), mock_client(default=MockStep.reply("somewhere in Europe")))
    assert out.parse_failed
    assert out.predicted is None and out.error_km is None
    assert out.levels_hit == frozenset()
    assert out.status is OutcomeStatus.SCORED


def test_nearest_neighbour_echo(item, tiny_index, mock_client):
    out = evaluate_item(item, tiny_index, (0.1, 0.0), mock_client(responder=echo_nearest_responder))
    nearest = GeoCoord(48.8566, 2.3522)  # id 1 at (0, 0)
    assert out.predicted == nearest
    assert out.error_km == geodesic_km(nearest, item.ground_truth)
    assert out.levels_hit == bucket(out.error_km)


def test_missing_item_rejected(item, tiny_index, mock_client):
    missing = BenchmarkItem("m", "/nope.jpg", item.ground_truth, ItemStatus.MISSING)
    with pytest.raises(ValueError, match="MISSING"):
        evaluate_item(missing, tiny_index, (0, 0), mock_client(default=MockStep.reply("0, 0")))


def test_transport_failure_marks_errored(item, tiny_index, mock_client):
    out = evaluate_item(item, tiny_index, (0, 0), mock_client(default=MockStep.error(503)))
    assert out.status is OutcomeStatus.ERRORED
    assert "4 attempts" in out.error


def _equator_items(tmp_path, errors_km):
    """One item per error; the mock answers each image with a point ~error km east of the truth."""
    items, table = [], {}
    for i, err in enumerate(errors_km):
        img = f"img-{i}".encode()
        p = tmp_path / f"{i}.jpg"
        p.write_bytes(img)
        items.append(BenchmarkItem(f"i{i}", str(p), GeoCoord(0.0, 0.0), ItemStatus.AVAILABLE))
        table[img] = f"{0.0:.6f}, {err / 111.32:.6f}"
    return items, table


def _client(fast_config, responder, **kw):
    return ModelClient(fast_config, MockTransport(responder=responder, **kw), sleep=lambda s: None)


def _run_errors(tmp_path, index, fast_config, errors):
    items, table = _equator_items(tmp_path, errors)
    client = _client(fast_config, image_keyed_responder(table))
    return evaluate_dataset(Manifest(tuple(items)), index, np.zeros((len(items), 2), np.float32), client)


def test_four_item_dataset_hand_checked(tmp_path, tiny_index, fast_config):
    # 0.5 <= 1; 30 > 25 but <= 200; 500 <= 750; 3000 > 2500
    r = _run_errors(tmp_path, tiny_index, fast_config, [0.5, 30, 500, 3000]).report
    assert [r.pct_at[lvl] for lvl in LEVELS] == [25.0, 25.0, 50.0, 75.0, 75.0]
    assert r.n_scored == 4 and r.n_missing == 0 and r.n_parse_failed == 0


def test_four_item_dataset_csv_row(tmp_path, tiny_index, fast_config):
    # one error inside each successive band: street, city, region, continent
    r = _run_errors(tmp_path, tiny_index, fast_config, [0.5, 20, 150, 1000]).report
    assert [r.pct_at[lvl] for lvl in LEVELS] == [25.0, 50.0, 75.0, 75.0, 100.0]
    csv = render_report(r, "csv").decode()
    assert csv.splitlines()[1].endswith(",25.0,50.0,75.0,75.0,100.0")


def test_empty_manifest(tiny_index, mock_client):
    run = evaluate_dataset(Manifest(()), tiny_index, np.zeros((0, 2)), mock_client())
    assert run.report.n_scored == 0
    assert all(v is None for v in run.report.pct_at.values())
    md = render_report(run.report, "markdown").decode()
    assert md.splitlines()[2].count("—") == 5


def test_order_and_denominators_with_concurrency(tmp_path, tiny_index, fast_config):
    items, table = _equator_items(tmp_path, [random.Random(i).uniform(0, 4000) for i in range(20)])
    items[3] = BenchmarkItem("gone", "/nope", GeoCoord(0, 0), ItemStatus.MISSING)
    rng = random.Random(0)

    def slow(request):
        step = image_keyed_responder(table)(request)
        return MockStep(rng.uniform(0, 0.01), step.status, step.body, step.text)

    client = ModelClient(fast_config, MockTransport(responder=slow))
    cfg = EvalConfig(concurrency=8)
    run = evaluate_dataset(items, tiny_index, np.zeros((20, 2), np.float32), client, cfg)
    assert [o.item_id for o in run.outcomes] == [it.id for it in items]
    r = run.report
    assert r.n_missing == 1 and r.n_scored == 19
    assert r.n_scored + r.n_missing + r.n_errored == len(items)


def test_embedding_count_mismatch(tiny_index, mock_client, item):
    with pytest.raises(ValueError, match="embeddings"):
        evaluate_dataset([item], tiny_index, np.zeros((2, 2)), mock_client())


def test_embeddings_by_id(tiny_index, mock_client, item):
    run = evaluate_dataset([item], tiny_index, {"q": np.array([5, 5], np.float32)},
                           mock_client(responder=echo_nearest_responder))
    assert run.outcomes[0].trace["similar_ids"][0] == 3


def test_outcome_file_round_trip_and_determinism(tmp_path, item, tiny_index, fast_config):
    paths = []
    for k in range(2):
        client = ModelClient(fast_config, MockTransport(responder=echo_nearest_responder))
        p = tmp_path / f"out{k}.jsonl"
        run = evaluate_dataset([item], tiny_index, np.zeros((1, 2), np.float32), client, outcome_path=p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = read_outcomes(paths[0])
    assert back == list(run.outcomes)
    rec = json.loads(paths[0].read_text())
    assert "raw_response" in rec["trace"] and "prompt_sha256" in rec["trace"]


def test_raw_responses_can_be_dropped(tiny_index, item, mock_client):
    run = evaluate_dataset([item], tiny_index, np.zeros((1, 2), np.float32),
                           mock_client(default=MockStep.reply("1, 1")), EvalConfig(keep_raw_responses=False))
    assert "raw_response" not in run.outcomes[0].trace


def test_provenance_block(tiny_index, item, mock_client):
    run = evaluate_dataset([item], tiny_index, np.zeros((1, 2), np.float32),
                           mock_client(default=MockStep.reply("1, 1")))
    prov = run.report.provenance
    assert prov["template_id"] == "contrastive-v1"
    assert (prov["k_similar"], prov["k_dissimilar"]) == (16, 16)
    assert prov["model_name"] == "mock-model"
    assert len(prov["index_checksum"]) == 8 and len(prov["config_hash"]) == 64


def _report(pcts, model="model-x"):
    return AccuracyReport("bench-a", 237, 0, 0, 0, dict(zip(LEVELS, pcts)), {"model_name": model})


def test_markdown_matches_table_layout():
    md = render_report(_report([12.5, 40.1, 55.0, 70.3, 88.8]), "markdown").decode()
    header, _, row = md.splitlines()[:3]
    assert header == "| Dataset | Model | 1 km | 25 km | 200 km | 750 km | 2,500 km |"
    assert row.endswith("| 12.5 | 40.1 | 55.0 | 70.3 | 88.8 |")


def test_all_hundred():
    md = render_report(_report([100.0] * 5), "markdown").decode()
    assert md.splitlines()[2].count("100.0") == 5


def test_json_round_trip():
    r = _report([12.5, 40.1, 55.0, 70.3, 88.8])
    assert parse_report_json(render_report(r, "json")) == r


def test_coverage():
    r = AccuracyReport("bench-b", 4367, 169, 0)
    assert r.coverage_pct == 96.3
    assert r.n_items == 4536


def _outcome(rng):
    status = rng.choice(list(OutcomeStatus))
    gt = GeoCoord(0, 0)
    if status is not OutcomeStatus.SCORED:
        return EvalOutcome("x", gt, status)
    if rng.random() < 0.15:
        return EvalOutcome("x", gt, parse_failed=True)
    d = rng.choice([rng.uniform(0, 3), rng.uniform(0, 3000), rng.uniform(0, 20000)])
    return EvalOutcome("x", gt, predicted=gt, error_km=d, levels_hit=bucket(d))


@given(st.integers(0, 2**32 - 1), st.integers(0, 60))
def test_monotone_and_denominators(seed, n):
    rng = random.Random(seed)
    outs = [_outcome(rng) for _ in range(n)]
    r = aggregate(outs, "fuzz")
    vals = [r.pct_at[lvl] for lvl in LEVELS]
    if r.n_scored:
        assert all(a <= b for a, b in zip(vals, vals[1:]))
    else:
        assert vals == [None] * 5
    assert r.n_scored + r.n_missing + r.n_errored == n


def test_echo_nearest_over_real_index(tmp_path, fast_config):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 4)).astype(np.float32)
    coords = [(float(a), float(b)) for a, b in np.round(rng.uniform(-60, 60, (50, 2)), 6)]
    idx = build_index(make_records(x, coords), IndexConfig(4))
    items = []
    for i in range(5):
        p = tmp_path / f"{i}.jpg"
        p.write_bytes(b"x%d" % i)
        items.append(BenchmarkItem(str(i), str(p), GeoCoord(*coords[i]), ItemStatus.AVAILABLE))
    client = ModelClient(fast_config, MockTransport(responder=echo_nearest_responder))
    run = evaluate_dataset(items, idx, x[:5], client)
    assert all(o.error_km == 0.0 for o in run.outcomes)
    assert run.report.pct_at[AccuracyLevel.STREET] == 100.0
