"""``georag`` command-line entry point.

Every option exists both as a ``--flag`` and as a config-file key (dashes
become underscores) and can also be set through ``GEORAG_<KEY>`` in the
environment. Precedence: defaults < config file < environment < flags.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import client as mc
from .coordparse import parse_coordinates
from .evalharness import EvalConfig, ReportFormat, evaluate_dataset, parse_report_json, render_reports
from .ingest import IngestError, assemble_gallery, load_benchmark_manifest, load_metadata, load_vectors
from .promptgen import (
    DEFAULT_K_DISSIMILAR,
    DEFAULT_K_SIMILAR,
    DEFAULT_TEMPLATE_ID,
    ImageAttachment,
    PromptError,
    RetrievalResult,
    TemplateRegistry,
    build_prompt,
    format_coord,
)
from .vecstore import IndexConfig, IndexMode, VecStoreError, build_index, file_checksum, load_index, save_index

log = logging.getLogger("georag")

ENV_PREFIX = "GEORAG_"

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_USAGE = 2
EXIT_TRANSPORT = 3
EXIT_REQUEST = 4
EXIT_PARSE_MISS = 5

_BUILD, _QUERY, _EVAL, _REPORT, _HEALTH = "build-index", "query", "evaluate", "report", "healthcheck"
_MODEL_CMDS = (_QUERY, _EVAL, _HEALTH)


def opt(default, help: str, *cmds: str):
    return field(default=default, metadata={"help": help, "cmds": cmds})


@dataclass
class RunConfig:
    # inputs / outputs
    vectors: str | None = opt(None, "embedding blob (GVEC) for the gallery", _BUILD)
    metadata: str | None = opt(None, "gallery metadata, one JSON record per line", _BUILD)
    out: str | None = opt(None, "output index file", _BUILD)
    index: str | None = opt(None, "index file", _QUERY, _EVAL)
    image: str | None = opt(None, "query image file", _QUERY)
    embedding: str | None = opt(None, "query embedding blob (GVEC)", _QUERY)
    embedding_row: int = opt(0, "row of the query embedding blob to use", _QUERY)
    manifest: str | None = opt(None, "benchmark manifest, one JSON record per line", _EVAL)
    embeddings: str | None = opt(None, "query embeddings (GVEC), one row per manifest line", _EVAL)
    out_dir: str = opt(".", "directory for outcome and report files", _EVAL, _REPORT)
    input: str | None = opt(None, "report JSON to render", _REPORT)
    format: str = opt("markdown", "comma-separated report formats: markdown,csv,json", _EVAL, _REPORT)
    dataset_name: str | None = opt(None, "dataset label in reports (default: manifest file stem)", _EVAL)
    # index
    ivf: bool = opt(False, "build an IVF index instead of flat exact", _BUILD)
    nlist: int = opt(64, "IVF list count", _BUILD)
    nprobe: int = opt(8, "IVF lists scanned per nearest-neighbour query", _BUILD, _QUERY, _EVAL)
    kmeans_iterations: int = opt(20, "Lloyd iterations for IVF training", _BUILD)
    seed: int = opt(0, "k-means initialisation seed", _BUILD)
    normalize: bool = opt(False, "L2-normalise gallery embeddings at ingest", _BUILD)
    # retrieval / prompt
    k_similar: int = opt(DEFAULT_K_SIMILAR, "similar neighbours in the prompt", _QUERY, _EVAL)
    k_dissimilar: int = opt(DEFAULT_K_DISSIMILAR, "dissimilar neighbours in the prompt", _QUERY, _EVAL)
    template_id: str = opt(DEFAULT_TEMPLATE_ID, "prompt template id", _QUERY, _EVAL)
    template_dir: str | None = opt(None, "directory of <id>.txt templates overriding built-ins", _QUERY, _EVAL)
    # model endpoint
    base_url: str = opt(mc.ModelConfig.base_url, "chat-completions base URL", *_MODEL_CMDS)
    model_name: str = opt(mc.ModelConfig.model_name, "model name sent to the endpoint", *_MODEL_CMDS)
    temperature: float = opt(mc.ModelConfig.temperature, "sampling temperature", *_MODEL_CMDS)
    top_p: float = opt(mc.ModelConfig.top_p, "nucleus sampling top-p", *_MODEL_CMDS)
    max_tokens: int = opt(mc.ModelConfig.max_tokens, "maximum generated tokens", *_MODEL_CMDS)
    request_timeout_s: int = opt(mc.ModelConfig.request_timeout_s, "per-request timeout (s)", *_MODEL_CMDS)
    max_retries: int = opt(mc.ModelConfig.max_retries, "retries on timeout / 5xx", *_MODEL_CMDS)
    retry_backoff_s: float = opt(mc.ModelConfig.retry_backoff_s, "initial retry backoff (s), doubling", *_MODEL_CMDS)
    mock_script: str | None = opt(None, "JSON mock script; replaces the HTTP transport", *_MODEL_CMDS)
    # evaluation
    concurrency: int = opt(4, "model calls in flight", _EVAL)
    keep_raw_responses: bool = opt(True, "store raw model text in the outcome file", _EVAL)
    # output verbosity
    verbose: bool = opt(False, "print retrieved neighbours", _QUERY)
    show_prompt: bool = opt(False, "print the prompt text", _QUERY)

    def model_config(self) -> mc.ModelConfig:
        return mc.ModelConfig(
            base_url=self.base_url, model_name=self.model_name, temperature=self.temperature,
            top_p=self.top_p, max_tokens=self.max_tokens, request_timeout_s=self.request_timeout_s,
            max_retries=self.max_retries, retry_backoff_s=self.retry_backoff_s,
        )

    def formats(self) -> list[ReportFormat]:
        return [ReportFormat(f.strip().lower()) for f in self.format.split(",") if f.strip()]


class ConfigError(ValueError):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _field_type(name: str) -> type:
    t = str(_FIELDS[name].type)
    for cand, py in (("bool", bool), ("int", int), ("float", float)):
        if t.startswith(cand):
            return py
    return str


def _convert(name: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    t = _field_type(name)
    try:
        if t is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return t(raw.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot interpret {raw!r} as {t.__name__}") from None


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """``key = value`` lines (an optional ``[section]`` header is ignored)."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[georag]\n" + text
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: dict[str, Any] = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            name = key.strip().replace("-", "_")
            if name not in _FIELDS:
                raise ConfigError(f"{path}: unknown key {key!r}")
            out[name] = _convert(name, value)
    return out


def resolve_config(cmd: str, flags: dict[str, Any], config_path: str | None,
                   environ: dict[str, str] | None = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}
    if config_path:
        values.update(read_config_file(config_path))
    for name in _FIELDS:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _convert(name, env)
    values.update({k: v for k, v in flags.items() if v is not None})
    cfg = RunConfig(**values)
    validate(cmd, cfg)
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def validate(cmd: str, cfg: RunConfig) -> None:
    if cmd in _MODEL_CMDS:
        try:
            cfg.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if cmd in (_EVAL, _REPORT):
        try:
            cfg.formats()
        except ValueError:
            raise ConfigError(f"unknown report format in {cfg.format!r}") from None
    for name in ("k_similar", "k_dissimilar", "nlist", "nprobe", "kmeans_iterations", "concurrency"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cmd == _BUILD:
        _require(cfg, "vectors", "metadata", "out")
        if cfg.ivf and cfg.nprobe > cfg.nlist:
            raise ConfigError(f"nprobe {cfg.nprobe} exceeds nlist {cfg.nlist}")
    elif cmd == _QUERY:
        _require(cfg, "index", "image", "embedding")
    elif cmd == _EVAL:
        _require(cfg, "manifest", "index", "embeddings")
    elif cmd == _REPORT:
        _require(cfg, "input")


def _make_client(cfg: RunConfig) -> mc.ModelClient:
    transport = mc.load_mock_script(cfg.mock_script) if cfg.mock_script else None
    return mc.ModelClient(cfg.model_config(), transport)


def _registry(cfg: RunConfig) -> TemplateRegistry:
    return TemplateRegistry(cfg.template_dir)


def cmd_build_index(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    blob = load_vectors(cfg.vectors)
    rows = load_metadata(cfg.metadata)
    records = assemble_gallery(blob, rows, normalize=cfg.normalize)
    mode = IndexMode.IVF if cfg.ivf else IndexMode.FLAT_EXACT
    icfg = IndexConfig(blob.dimension, mode, cfg.nlist, cfg.nprobe, cfg.kmeans_iterations, cfg.seed)
    index = build_index(records, icfg)
    crc = save_index(index, cfg.out)
    elapsed = time.perf_counter() - t0
    extra = f" nlist={index.nlist} nprobe={cfg.nprobe}" if mode is IndexMode.IVF else ""
    print(f"count={index.count} dimension={index.dimension} mode={mode.name}{extra} "
          f"build_time={elapsed:.3f}s crc32={crc:08x} out={cfg.out}")
    return EXIT_OK


def cmd_query(cfg: RunConfig) -> int:
    index = load_index(cfg.index)
    if index.mode is IndexMode.IVF:
        index = index.with_nprobe(min(cfg.nprobe, index.nlist))
    blob = load_vectors(cfg.embedding)
    if not 0 <= cfg.embedding_row < blob.count:
        raise ConfigError(f"embedding row {cfg.embedding_row} not in blob of {blob.count} rows")
    query = blob.data[cfg.embedding_row]
    similar, dissimilar = index.search_both(query, cfg.k_similar, cfg.k_dissimilar)
    if cfg.verbose:
        for label, group in (("similar", similar), ("dissimilar", dissimilar)):
            for rank, n in enumerate(group, 1):
                print(f"{label:>10} {rank:3d} id={n.id} distance={n.distance:.6f} coord={format_coord(n.coord)}")
    retrieval = RetrievalResult(tuple(similar), tuple(dissimilar), cfg.k_similar, cfg.k_dissimilar)
    bundle = build_prompt(ImageAttachment.from_path(cfg.image), retrieval, cfg.template_id,
                          Path(cfg.image).name, _registry(cfg))
    if cfg.show_prompt:
        print("--- prompt ---")
        print(bundle.text, end="" if bundle.text.endswith("\n") else "\n")
    response = _make_client(cfg).complete(bundle)
    print("--- response ---")
    print(response.raw_text)
    parsed = parse_coordinates(response.raw_text)
    if parsed.coord is None:
        print("parsed: none")
        return EXIT_PARSE_MISS
    print(f"parsed: {format_coord(parsed.coord)}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    manifest = load_benchmark_manifest(cfg.manifest)
    index = load_index(cfg.index)
    if index.mode is IndexMode.IVF:
        index = index.with_nprobe(min(cfg.nprobe, index.nlist))
    blob = load_vectors(cfg.embeddings)
    if blob.count != len(manifest):
        raise ConfigError(f"{blob.count} query embeddings for {len(manifest)} manifest items")
    name = cfg.dataset_name or Path(cfg.manifest).stem
    ecfg = EvalConfig(cfg.k_similar, cfg.k_dissimilar, cfg.template_id, cfg.concurrency,
                      cfg.keep_raw_responses, name)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = evaluate_dataset(manifest, index, blob.data, _make_client(cfg), ecfg, _registry(cfg),
                           outcome_path=out_dir / "outcomes.jsonl", index_crc=file_checksum(cfg.index))
    for fmt in cfg.formats():
        (out_dir / ("report" + fmt.suffix)).write_bytes(render_reports([run.report], fmt))
    sys.stdout.write(render_reports([run.report], ReportFormat.MARKDOWN).decode("utf-8"))
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    report = parse_report_json(Path(cfg.input).read_bytes())
    out_dir = Path(cfg.out_dir)
    for fmt in cfg.formats():
        data = render_reports([report], fmt)
        if fmt is ReportFormat.MARKDOWN:
            sys.stdout.write(data.decode("utf-8"))
        else:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / ("report" + fmt.suffix)).write_bytes(data)
    return EXIT_OK


def cmd_healthcheck(cfg: RunConfig) -> int:
    status = _make_client(cfg).healthcheck()
    print(f"status=OK model={status.model} latency_ms={status.latency_ms} attempts={status.attempt_count}")
    return EXIT_OK


COMMANDS = {
    _BUILD: (cmd_build_index, "build an index from embeddings and metadata"),
    _QUERY: (cmd_query, "geolocate one image"),
    _EVAL: (cmd_evaluate, "evaluate a benchmark manifest"),
    _REPORT: (cmd_report, "re-render a report JSON"),
    _HEALTH: (cmd_healthcheck, "check the model endpoint"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="georag", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value configuration file")
        for f in dataclasses.fields(RunConfig):
            if name not in f.metadata["cmds"]:
                continue
            flag = "--" + f.name.replace("_", "-")
            help_text = f"{f.metadata['help']} (default: {f.default})"
            if _field_type(f.name) is bool:
                p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                               default=None, help=help_text)
            else:
                p.add_argument(flag, dest=f.name, type=_field_type(f.name), default=None, help=help_text)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in _FIELDS}
    try:
        cfg = resolve_config(args.command, flags, args.config)
        return COMMANDS[args.command][0](cfg)
    except mc.TransportError as exc:
        print(f"error: transport: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (mc.RequestError, mc.ResponseFormatError) as exc:
        print(f"error: request: {exc}", file=sys.stderr)
        return EXIT_REQUEST
    except (ConfigError, IngestError, VecStoreError, PromptError, mc.PreflightError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
