"""Chat-completions client for a multimodal model endpoint.

The wire shape is the one exposed by vLLM / LMDeploy / OpenAI-compatible
servers. Transports are pluggable; :class:`MockTransport` replays a script
in-process for offline runs and tests.
"""

from __future__ import annotations

import base64
import enum
import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

from .promptgen import PromptBundle, format_coord, similar_block_coords

API_KEY_ENV = "GEORAG_API_KEY"


class ClientError(Exception):
    pass


class PreflightError(ClientError, ValueError):
    pass


class TransportError(ClientError):
    """Retries exhausted on timeouts, connection failures or 5xx replies."""

    def __init__(self, message: str, last_status: int | None, attempts: int):
        super().__init__(message)
        self.last_status = last_status
        self.attempts = attempts


class RequestError(ClientError):
    """Non-retryable 4xx reply."""

    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


class ResponseFormatError(ClientError):
    pass


class TransportTimeout(Exception):
    pass


class ConnectionFailed(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "Qwen/Qwen2-VL-72B-Instruct"
    temperature: float = 0.1
    top_p: float = 0.1
    max_tokens: int = 512
    request_timeout_s: int = 120
    max_retries: int = 3
    retry_backoff_s: float = 2.0
    max_image_bytes: int = 20 * 1024 * 1024
    # server-side setting; recorded in provenance, never sent
    max_model_len: int = 6000

    def __post_init__(self) -> None:
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.request_timeout_s <= 0:
            raise ValueError("request_timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.retry_backoff_s < 0:
            raise ValueError("retry_backoff_s must be >= 0")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


class TransportKind(enum.Enum):
    LIVE = "LIVE"
    MOCK = "MOCK"


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    latency_ms: int
    attempt_count: int
    transport: TransportKind
    model: str | None = None


@dataclass(frozen=True)
class HealthStatus:
    ok: bool
    model: str | None
    latency_ms: int
    attempt_count: int


@dataclass(frozen=True)
class Reply:
    status: int
    body: bytes


class Transport(Protocol):
    kind: TransportKind

    def send(self, url: str, headers: Mapping[str, str], body: bytes, timeout: float) -> Reply: ...


class HttpTransport:
    kind = TransportKind.LIVE

    def __init__(self) -> None:
        import httpx

        self._httpx = httpx
        self._client = httpx.Client()

    def send(self, url, headers, body, timeout):
        httpx = self._httpx
        try:
            r = self._client.post(url, content=body, headers=dict(headers), timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TransportTimeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ConnectionFailed(str(exc)) from exc
        return Reply(r.status_code, r.content)

    def close(self) -> None:
        self._client.close()


def chat_completion_body(text: str, model: str = "mock") -> bytes:
    return json.dumps({
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text},
                     "finish_reason": "stop"}],
    }).encode()


@dataclass(frozen=True)
class MockStep:
    delay: float = 0.0
    status: int = 200
    body: bytes = b""
    # when set, the body becomes a chat completion echoing the requested model
    text: str | None = None

    @classmethod
    def reply(cls, text: str, delay: float = 0.0) -> "MockStep":
        return cls(delay, 200, text=text)

    @classmethod
    def error(cls, status: int, message: str = "", delay: float = 0.0) -> "MockStep":
        return cls(delay, status, json.dumps({"error": {"message": message}}).encode())

    @classmethod
    def timeout(cls) -> "MockStep":
        return cls(delay=float("inf"))


Responder = Callable[[dict], MockStep]


class MockTransport:
    """Scripted in-process transport.

    Request ``i`` (0-based, in arrival order) is answered by ``script[i]`` if
    present, else by ``responder(request_json)``, else by ``default``. A step
    whose delay reaches the request timeout raises a timeout without sleeping.
    ``models``, when given, makes any other model name a 404.
    """

    kind = TransportKind.MOCK

    def __init__(self, script: Sequence[MockStep] | Mapping[int, MockStep] = (),
                 responder: Responder | None = None, default: MockStep | None = None,
                 models: Sequence[str] | None = None, sleep: Callable[[float], None] = time.sleep):
        self._script = dict(enumerate(script)) if not isinstance(script, Mapping) else dict(script)
        self._responder = responder
        self._default = default
        self._models = set(models) if models is not None else None
        self._sleep = sleep
        self._lock = threading.Lock()
        self.requests: list[bytes] = []

    def send(self, url, headers, body, timeout):
        with self._lock:
            index = len(self.requests)
            self.requests.append(body)
        req = json.loads(body)
        if self._models is not None and req.get("model") not in self._models:
            step = MockStep.error(404, f"The model `{req.get('model')}` does not exist.")
        elif index in self._script:
            step = self._script[index]
        elif self._responder is not None:
            step = self._responder(req)
        elif self._default is not None:
            step = self._default
        else:
            step = MockStep.error(500, f"mock script has no entry for request {index}")
        if step.delay >= timeout:
            raise TransportTimeout(f"mock request {index} timed out")
        if step.delay > 0:
            self._sleep(step.delay)
        body = step.body if step.text is None else chat_completion_body(step.text, req.get("model", "mock"))
        return Reply(step.status, body)

    @property
    def call_count(self) -> int:
        return len(self.requests)


def prompt_text_of(request: dict) -> str:
    content = request["messages"][0]["content"]
    if isinstance(content, str):
        return content
    return "".join(p.get("text", "") for p in content if p.get("type") == "text")


def echo_nearest_responder(request: dict) -> MockStep:
    """Answer with the first coordinate of the prompt's nearby-locations block."""
    coords = similar_block_coords(prompt_text_of(request))
    if not coords:
        return MockStep.reply("I cannot determine the location.")
    return MockStep.reply(f"My best estimate is\n{format_coord(coords[0])}")


RESPONDERS: dict[str, Responder] = {"echo-nearest": echo_nearest_responder}


def _step_from_json(obj: dict) -> MockStep:
    delay = float(obj.get("delay", 0.0))
    if obj.get("timeout"):
        return MockStep.timeout()
    if "text" in obj:
        return MockStep(delay, int(obj.get("status", 200)), text=str(obj["text"]))
    body = obj.get("body", "")
    if not isinstance(body, str):
        body = json.dumps(body)
    return MockStep(delay, int(obj.get("status", 200)), body.encode())


def load_mock_script(path: str | os.PathLike) -> MockTransport:
    """Build a :class:`MockTransport` from a JSON script file.

    Either a list of steps (the last one repeats once the list runs out) or an
    object with optional ``steps``, ``default``, ``responder`` and ``models``.
    A step is ``{"delay": s, "status": n, "text": "..."}``, ``{"body": ...}``
    or ``{"timeout": true}``.
    """
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if isinstance(spec, list):
        steps = [_step_from_json(s) for s in spec]
        return MockTransport(steps, default=steps[-1] if steps else None)
    steps = [_step_from_json(s) for s in spec.get("steps", [])]
    default = _step_from_json(spec["default"]) if "default" in spec else None
    responder = None
    if "responder" in spec:
        try:
            responder = RESPONDERS[spec["responder"]]
        except KeyError:
            raise ValueError(f"unknown mock responder {spec['responder']!r}") from None
    return MockTransport(steps, responder=responder, default=default, models=spec.get("models"))


def build_request(bundle: PromptBundle, config: ModelConfig) -> bytes:
    if not bundle.image.data:
        raise PreflightError("empty image")
    if len(bundle.image.data) > config.max_image_bytes:
        raise PreflightError(
            f"image is {len(bundle.image.data)} bytes, limit {config.max_image_bytes}"
        )
    data_url = f"data:{bundle.image.media_type};base64," + base64.b64encode(bundle.image.data).decode("ascii")
    payload = {
        "model": config.model_name,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": bundle.text},
                {"type": "image_url", "image_url": {"url": data_url}},
            ],
        }],
        "temperature": config.temperature,
        "top_p": config.top_p,
        "max_tokens": config.max_tokens,
    }
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _healthcheck_request(config: ModelConfig) -> bytes:
    payload = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": "Reply with the single word OK."}],
        "temperature": config.temperature,
        "top_p": config.top_p,
        "max_tokens": 8,
    }
    return json.dumps(payload, separators=(",", ":")).encode("utf-8")


def _error_message(body: bytes) -> str:
    try:
        obj = json.loads(body)
        err = obj.get("error", obj)
        if isinstance(err, dict):
            return str(err.get("message", err))
        return str(err)
    except (ValueError, AttributeError):
        return body.decode("utf-8", "replace")[:500]


def _assistant_text(body: bytes) -> tuple[str, str | None]:
    try:
        obj = json.loads(body)
        content = obj["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ResponseFormatError(f"unexpected response shape: {exc!r}") from None
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if content is None:
        content = ""
    return str(content), obj.get("model")


@dataclass
class ModelClient:
    """Sends requests with retry. Shareable across threads."""

    config: ModelConfig
    transport: Transport | None = None
    sleep: Callable[[float], None] = time.sleep
    api_key: str | None = field(default_factory=lambda: os.environ.get(API_KEY_ENV))

    def __post_init__(self) -> None:
        if self.transport is None:
            self.transport = HttpTransport()

    def _headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def _send(self, body: bytes) -> tuple[Reply, int, int]:
        cfg = self.config
        attempts = 0
        last_status: int | None = None
        last_problem = ""
        start = time.perf_counter()
        while True:
            attempts += 1
            try:
                reply = self.transport.send(cfg.endpoint, self._headers(), body, cfg.request_timeout_s)
            except TransportTimeout:
                last_status, last_problem = None, "timeout"
            except ConnectionFailed as exc:
                last_status, last_problem = None, f"connection failed: {exc}"
            else:
                if 200 <= reply.status < 300:
                    return reply, attempts, int((time.perf_counter() - start) * 1000)
                if 400 <= reply.status < 500:
                    raise RequestError(
                        f"HTTP {reply.status} for model {cfg.model_name!r}: {_error_message(reply.body)}",
                        reply.status,
                    )
                last_status, last_problem = reply.status, f"HTTP {reply.status}"
            if attempts > cfg.max_retries:
                raise TransportError(
                    f"giving up after {attempts} attempts to {cfg.endpoint}: {last_problem}",
                    last_status, attempts,
                )
            self.sleep(cfg.retry_backoff_s * 2 ** (attempts - 1))

    def complete(self, bundle: PromptBundle) -> ModelResponse:
        body = build_request(bundle, self.config)
        reply, attempts, latency = self._send(body)
        text, model = _assistant_text(reply.body)
        return ModelResponse(text, latency, attempts, self.transport.kind, model)

    def healthcheck(self) -> HealthStatus:
        reply, attempts, latency = self._send(_healthcheck_request(self.config))
        _, model = _assistant_text(reply.body)
        return HealthStatus(True, model, latency, attempts)


def complete(bundle: PromptBundle, config: ModelConfig, transport: Transport | None = None) -> ModelResponse:
    return ModelClient(config, transport).complete(bundle)


def healthcheck(config: ModelConfig, transport: Transport | None = None) -> HealthStatus:
    return ModelClient(config, transport).healthcheck()
