"""Benchmark orchestration: retrieve, prompt, invoke, parse, score, report."""

from __future__ import annotations

import csv
import datetime as _dt
import enum
import hashlib
import io
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Any, Mapping, Sequence

import numpy as np

from .client import ClientError, ModelClient, ModelConfig
from .coordparse import parse_coordinates
from .geodesy import LEVELS, AccuracyLevel, GeoCoord, bucket, geodesic
from .ingest import BenchmarkItem, ItemStatus, Manifest
from .promptgen import (
    DEFAULT_K_DISSIMILAR,
    DEFAULT_K_SIMILAR,
    DEFAULT_TEMPLATE_ID,
    ImageAttachment,
    RetrievalResult,
    TemplateRegistry,
    build_prompt,
)
from .vecstore import Index, serialize_index

log = logging.getLogger(__name__)

UNDEFINED = "—"
PARSE_RULE = "last-valid-pair"


@dataclass(frozen=True)
class EvalConfig:
    k_similar: int = DEFAULT_K_SIMILAR
    k_dissimilar: int = DEFAULT_K_DISSIMILAR
    template_id: str = DEFAULT_TEMPLATE_ID
    concurrency: int = 4
    keep_raw_responses: bool = True
    dataset_name: str = "benchmark"

    def __post_init__(self) -> None:
        if self.k_similar < 1 or self.k_dissimilar < 1:
            raise ValueError("k_similar and k_dissimilar must be positive")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


class OutcomeStatus(enum.Enum):
    SCORED = "scored"
    MISSING = "missing"
    ERRORED = "errored"


@dataclass(frozen=True)
class EvalOutcome:
    item_id: str
    ground_truth: GeoCoord
    status: OutcomeStatus = OutcomeStatus.SCORED
    predicted: GeoCoord | None = None
    error_km: float | None = None
    levels_hit: frozenset[AccuracyLevel] = frozenset()
    parse_failed: bool = False
    fallback_used: bool = False
    error: str | None = None
    trace: dict[str, Any] = field(default_factory=dict, compare=False)

    def to_record(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "status": self.status.value,
            "ground_truth": [self.ground_truth.lat, self.ground_truth.lon],
            "predicted": None if self.predicted is None else [self.predicted.lat, self.predicted.lon],
            "error_km": self.error_km,
            "levels_hit": [lvl.name for lvl in LEVELS if lvl in self.levels_hit],
            "parse_failed": self.parse_failed,
            "fallback_used": self.fallback_used,
            "error": self.error,
            "trace": self.trace,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "EvalOutcome":
        pred = rec.get("predicted")
        return cls(
            item_id=rec["item_id"],
            ground_truth=GeoCoord(*rec["ground_truth"]),
            status=OutcomeStatus(rec["status"]),
            predicted=None if pred is None else GeoCoord(*pred),
            error_km=rec.get("error_km"),
            levels_hit=frozenset(AccuracyLevel[n] for n in rec.get("levels_hit", [])),
            parse_failed=rec.get("parse_failed", False),
            fallback_used=rec.get("fallback_used", False),
            error=rec.get("error"),
            trace=rec.get("trace", {}),
        )


@dataclass(frozen=True)
class AccuracyReport:
    dataset_name: str
    n_scored: int
    n_missing: int
    n_parse_failed: int
    n_errored: int = 0
    pct_at: dict[AccuracyLevel, float | None] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return self.n_scored + self.n_missing + self.n_errored

    @property
    def coverage_pct(self) -> float | None:
        if self.n_items == 0:
            return None
        return round(100 * (self.n_items - self.n_missing) / self.n_items, 1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_name": self.dataset_name,
            "n_scored": self.n_scored,
            "n_missing": self.n_missing,
            "n_parse_failed": self.n_parse_failed,
            "n_errored": self.n_errored,
            "coverage_pct": self.coverage_pct,
            "pct_at": {lvl.name: self.pct_at.get(lvl) for lvl in LEVELS},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "AccuracyReport":
        return cls(
            dataset_name=obj["dataset_name"],
            n_scored=obj["n_scored"],
            n_missing=obj["n_missing"],
            n_parse_failed=obj["n_parse_failed"],
            n_errored=obj.get("n_errored", 0),
            pct_at={AccuracyLevel[k]: v for k, v in obj["pct_at"].items()},
            provenance=dict(obj.get("provenance", {})),
        )


@dataclass(frozen=True)
class EvalRun:
    report: AccuracyReport
    outcomes: tuple[EvalOutcome, ...]


def evaluate_item(item: BenchmarkItem, index: Index, query_embedding, client: ModelClient,
                  config: EvalConfig = EvalConfig(), registry: TemplateRegistry | None = None,
                  image: ImageAttachment | None = None) -> EvalOutcome:
    if item.status is not ItemStatus.AVAILABLE:
        raise ValueError(f"item {item.id!r} is {item.status.value}; only AVAILABLE items are evaluated")

    similar, dissimilar = index.search_both(query_embedding, config.k_similar, config.k_dissimilar)
    retrieval = RetrievalResult(tuple(similar), tuple(dissimilar), config.k_similar, config.k_dissimilar)
    trace: dict[str, Any] = {
        "similar_ids": [n.id for n in similar],
        "dissimilar_ids": [n.id for n in dissimilar],
        "template_id": config.template_id,
    }
    try:
        if image is None:
            image = ImageAttachment.from_path(item.image_path)
        bundle = build_prompt(image, retrieval, config.template_id, item.id, registry)
        trace["prompt_sha256"] = bundle.text_sha256
        response = client.complete(bundle)
    except (ClientError, OSError) as exc:
        log.warning("item %s errored: %s", item.id, exc)
        trace["error_type"] = type(exc).__name__
        return EvalOutcome(item.id, item.ground_truth, OutcomeStatus.ERRORED, error=str(exc), trace=trace)

    trace["attempt_count"] = response.attempt_count
    if config.keep_raw_responses:
        trace["raw_response"] = response.raw_text
    parsed = parse_coordinates(response.raw_text)
    trace["candidates_seen"] = parsed.candidates_seen
    if parsed.coord is None:
        return EvalOutcome(item.id, item.ground_truth, parse_failed=True, trace=trace)
    trace["matched_span"] = list(parsed.matched_span)
    g = geodesic(parsed.coord, item.ground_truth)
    return EvalOutcome(item.id, item.ground_truth, predicted=parsed.coord, error_km=g.km,
                       levels_hit=bucket(g.km), fallback_used=g.fallback_used, trace=trace)


def _pct(hits: int, n: int) -> float | None:
    return None if n == 0 else round(100.0 * hits / n, 1)


def aggregate(outcomes: Sequence[EvalOutcome], dataset_name: str,
              provenance: Mapping[str, Any] | None = None) -> AccuracyReport:
    scored = [o for o in outcomes if o.status is OutcomeStatus.SCORED]
    n = len(scored)
    pct = {lvl: _pct(sum(lvl in o.levels_hit for o in scored), n) for lvl in LEVELS}
    return AccuracyReport(
        dataset_name=dataset_name,
        n_scored=n,
        n_missing=sum(o.status is OutcomeStatus.MISSING for o in outcomes),
        n_parse_failed=sum(o.parse_failed for o in scored),
        n_errored=sum(o.status is OutcomeStatus.ERRORED for o in outcomes),
        pct_at=pct,
        provenance=dict(provenance or {}),
    )


def config_hash(model: ModelConfig, config: EvalConfig) -> str:
    blob = json.dumps({"model": asdict(model), "eval": asdict(config)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def index_checksum(index: Index) -> str:
    data = serialize_index(index)
    return f"{zlib.crc32(data[:-4]):08x}"


def _embedding_for(embeddings, i: int, item: BenchmarkItem):
    if isinstance(embeddings, Mapping):
        return embeddings[item.id]
    return embeddings[i]


def evaluate_dataset(manifest: Manifest | Sequence[BenchmarkItem], index: Index, embeddings,
                     client: ModelClient, config: EvalConfig = EvalConfig(),
                     registry: TemplateRegistry | None = None,
                     outcome_path: str | PathLike | None = None,
                     index_crc: str | None = None) -> EvalRun:
    """Evaluate every AVAILABLE item with at most ``config.concurrency`` calls in flight.

    ``embeddings`` is either a mapping item id -> vector or a row-indexable
    array aligned with the manifest. Outcomes come back in manifest order.
    """
    items = list(manifest)
    if not isinstance(embeddings, Mapping) and len(embeddings) != len(items):
        raise ValueError(f"{len(embeddings)} query embeddings for {len(items)} manifest items")

    outcomes: list[EvalOutcome | None] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        futures = {}
        for i, item in enumerate(items):
            if item.status is ItemStatus.MISSING:
                outcomes[i] = EvalOutcome(item.id, item.ground_truth, OutcomeStatus.MISSING)
                continue
            emb = np.asarray(_embedding_for(embeddings, i, item), dtype=np.float32)
            futures[i] = pool.submit(evaluate_item, item, index, emb, client, config, registry)
        for i, fut in futures.items():
            outcomes[i] = fut.result()

    provenance = {
        "template_id": config.template_id,
        "model_name": client.config.model_name,
        "k_similar": config.k_similar,
        "k_dissimilar": config.k_dissimilar,
        "temperature": client.config.temperature,
        "top_p": client.config.top_p,
        "max_tokens": client.config.max_tokens,
        "max_model_len": client.config.max_model_len,
        "parse_rule": PARSE_RULE,
        "transport": client.transport.kind.value,
        "index_checksum": index_crc if index_crc is not None else index_checksum(index),
        "config_hash": config_hash(client.config, config),
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    report = aggregate(outcomes, config.dataset_name, provenance)
    if outcome_path is not None:
        write_outcomes(outcomes, outcome_path)
    return EvalRun(report, tuple(outcomes))


def write_outcomes(outcomes: Sequence[EvalOutcome], path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_record(), sort_keys=True, ensure_ascii=False) + "\n")


def read_outcomes(path: str | PathLike) -> list[EvalOutcome]:
    with open(path, encoding="utf-8") as fh:
        return [EvalOutcome.from_record(json.loads(line)) for line in fh if line.strip()]


class ReportFormat(enum.Enum):
    MARKDOWN = "markdown"
    CSV = "csv"
    JSON = "json"

    @property
    def suffix(self) -> str:
        return {"markdown": ".md", "csv": ".csv", "json": ".json"}[self.value]


def _cell(v: float | None) -> str:
    return UNDEFINED if v is None else f"{v:.1f}"


def _markdown(reports: Sequence[AccuracyReport]) -> str:
    heads = ["Dataset", "Model"] + [lvl.label for lvl in LEVELS]
    lines = [
        "| " + " | ".join(heads) + " |",
        "|" + "|".join(["---", "---"] + ["---:"] * len(LEVELS)) + "|",
    ]
    for r in reports:
        cells = [r.dataset_name, str(r.provenance.get("model_name", ""))]
        cells += [_cell(r.pct_at.get(lvl)) for lvl in LEVELS]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    for r in reports:
        cov = r.coverage_pct
        lines.append(
            f"{r.dataset_name}: {r.n_scored} scored, {r.n_missing} missing "
            f"(coverage {_cell(cov)}%), {r.n_parse_failed} parse failures, {r.n_errored} errored"
        )
    return "\n".join(lines) + "\n"


CSV_COLUMNS = [
    "dataset", "model", "n_scored", "n_missing", "n_parse_failed", "n_errored",
    "street_1km", "city_25km", "region_200km", "country_750km", "continent_2500km",
]


def _csv(reports: Sequence[AccuracyReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([r.dataset_name, r.provenance.get("model_name", ""), r.n_scored, r.n_missing,
                    r.n_parse_failed, r.n_errored] + [_cell(r.pct_at.get(lvl)) for lvl in LEVELS])
    return buf.getvalue()


def render_reports(reports: Sequence[AccuracyReport], fmt: ReportFormat | str) -> bytes:
    fmt = ReportFormat(fmt.lower()) if isinstance(fmt, str) else fmt
    if fmt is ReportFormat.MARKDOWN:
        return _markdown(reports).encode("utf-8")
    if fmt is ReportFormat.CSV:
        return _csv(reports).encode("utf-8")
    payload = [r.to_dict() for r in reports]
    return (json.dumps(payload[0] if len(payload) == 1 else payload, indent=2,
                       ensure_ascii=False) + "\n").encode("utf-8")


def render_report(report: AccuracyReport, fmt: ReportFormat | str) -> bytes:
    return render_reports([report], fmt)


def parse_report_json(data: bytes | str) -> AccuracyReport:
    return AccuracyReport.from_dict(json.loads(data))
