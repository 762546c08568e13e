"""Single chokepoint for model traffic.

Every pipeline stage talks to chat/embeddings endpoints through this
module: one place for retries, bounded parallelism, strict JSON reply
parsing and request/response audit logging. Two transports exist, the
OpenAI-compatible HTTP transport and an offline mock whose replies are
keyed by request digest, so the full pipeline runs deterministically
without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import (
    EndpointError,
    JsonExtractError,
    JsonShapeError,
    RateLimitError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)

# Backoff schedule: full jitter over min(cap, base * factor**attempt).
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 30.0

MOCK_EMBED_DIM = 64


@dataclass(frozen=True)
class EndpointConfig:
    """Connection and sampling settings for one endpoint.

    ``api_key_env`` names the environment variable holding the key; the
    key itself is never stored on the config and never written to logs.
    Judge endpoints should be configured with temperature 0.0.
    """

    base_url: str
    model_name: str
    api_key_env: str = "PLAYTEST_API_KEY"
    temperature: float = 0.7
    max_parallel: int = 4
    max_retries: int = 3
    timeout: float = 60.0

    def __post_init__(self):
        if not self.base_url:
            raise ValidationError("base_url must be non-empty")
        if not self.model_name:
            raise ValidationError("model_name must be non-empty")
        if self.max_parallel < 1:
            raise ValidationError(f"max_parallel out of [1, inf]: {self.max_parallel}")
        if self.max_retries < 0:
            raise ValidationError(f"max_retries out of [0, inf]: {self.max_retries}")
        if self.timeout <= 0:
            raise ValidationError(f"timeout must be positive: {self.timeout}")

    def is_mock(self) -> bool:
        return self.base_url.startswith("mock:")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Mapping[str, str], ...]
    max_tokens: int | None = None

    def __post_init__(self):
        msgs = tuple(dict(m) for m in self.messages)
        if not msgs:
            raise ValidationError("messages must be non-empty")
        for m in msgs:
            if set(m) != {"role", "content"}:
                raise ValidationError(f"message keys must be role/content, got {sorted(m)}")
            if m["role"] not in ("system", "user", "assistant"):
                raise ValidationError(f"unknown message role {m['role']!r}")
        object.__setattr__(self, "messages", msgs)

    def digest(self) -> str:
        payload = json.dumps([dict(m) for m in self.messages], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def chat_request(system: str | None, user: str) -> ChatRequest:
    messages: list[dict[str, str]] = []
    if system is not None:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": user})
    return ChatRequest(messages=tuple(messages))


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0
    attempts: int = 1


class _Failure:
    """Scripted transport failure for the mock."""

    def __init__(self, kind: str = "rate_limit", status: int = 429):
        self.kind = kind
        self.status = status


def rate_limited() -> _Failure:
    return _Failure("rate_limit", 429)


def server_error(status: int = 503) -> _Failure:
    return _Failure("server_error", status)


class HttpTransport:
    """OpenAI-compatible chat/embeddings over HTTP."""

    def send_chat(self, config: EndpointConfig, request: ChatRequest) -> str:
        import requests

        url = config.base_url.rstrip("/") + "/chat/completions"
        body: dict[str, Any] = {
            "model": config.model_name,
            "messages": [dict(m) for m in request.messages],
            "temperature": config.temperature,
        }
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens
        try:
            resp = requests.post(url, json=body, headers=self._headers(config),
                                 timeout=config.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"chat request failed: {exc}") from exc
        self._raise_for_status(resp)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise EndpointError(resp.status_code, f"malformed completion payload: {exc}") from exc

    def send_embed(self, config: EndpointConfig, texts: Sequence[str]) -> list[list[float]]:
        import requests

        url = config.base_url.rstrip("/") + "/embeddings"
        body = {"model": config.model_name, "input": list(texts)}
        try:
            resp = requests.post(url, json=body, headers=self._headers(config),
                                 timeout=config.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"embeddings request failed: {exc}") from exc
        self._raise_for_status(resp)
        try:
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            return [list(map(float, d["embedding"])) for d in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise EndpointError(resp.status_code, f"malformed embeddings payload: {exc}") from exc

    @staticmethod
    def _headers(config: EndpointConfig) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    @staticmethod
    def _raise_for_status(resp) -> None:
        if resp.status_code == 429:
            raise RateLimitError("rate limited (429)")
        if resp.status_code >= 500:
            raise RateLimitError(f"server error ({resp.status_code})")
        if resp.status_code >= 400:
            raise EndpointError(resp.status_code, resp.text)


class MockTransport:
    """Offline transport with two reply sources.

    Exact scripts map a request digest to a queue of canned replies
    (or scripted failures); ``responder`` handles anything unscripted.
    Embeddings come from a seeded hash of the text, so repeated calls
    are bit-identical. Tracks peak concurrent in-flight requests so
    tests can assert the parallelism cap.
    """

    def __init__(self, responder: Callable[[ChatRequest], str] | None = None,
                 embed_dim: int = MOCK_EMBED_DIM):
        self.responder = responder
        self.embed_dim = embed_dim
        self._scripts: dict[str, list[str | _Failure]] = {}
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight = 0
        self.chat_calls = 0

    def script(self, request: ChatRequest, *replies: str | _Failure) -> None:
        """Queue replies for this exact request; consumed in order, the
        final entry repeats."""
        self._scripts.setdefault(request.digest(), []).extend(replies)

    def send_chat(self, config: EndpointConfig, request: ChatRequest) -> str:
        with self._lock:
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
            self.chat_calls += 1
        try:
            reply = self._next_reply(request)
            if isinstance(reply, _Failure):
                if reply.kind == "rate_limit":
                    raise RateLimitError("scripted rate limit")
                raise RateLimitError(f"scripted server error ({reply.status})")
            return reply
        finally:
            with self._lock:
                self._in_flight -= 1

    def _next_reply(self, request: ChatRequest) -> str | _Failure:
        digest = request.digest()
        with self._lock:
            queue = self._scripts.get(digest)
            if queue:
                return queue.pop(0) if len(queue) > 1 else queue[0]
        if self.responder is not None:
            return self.responder(request)
        raise TransportError(f"mock has no script for request {digest[:12]}")

    def send_embed(self, config: EndpointConfig, texts: Sequence[str]) -> list[list[float]]:
        return [hash_embedding(config.model_name, t, self.embed_dim) for t in texts]


def hash_embedding(model_name: str, text: str, dim: int = MOCK_EMBED_DIM) -> list[float]:
    """Deterministic unit vector derived from (model, text)."""
    digest = hashlib.sha256(f"{model_name}::{text}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return [float(x) for x in vec]


class Gateway:
    """Shared entry point for chat and embedding calls.

    Thread-safe; per-endpoint semaphores keep in-flight requests at or
    below the endpoint's max_parallel. When ``audit_path`` is set, full
    request/response bodies are appended as JSON lines (API keys are
    never part of the logged payload).
    """

    def __init__(self, transport: HttpTransport | MockTransport | None = None,
                 audit_path: str | Path | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.transport = transport if transport is not None else HttpTransport()
        self.audit_path = Path(audit_path) if audit_path is not None else None
        self._sleep = sleep
        self._jitter = random.Random(0x5EED)
        self._lock = threading.Lock()
        self._audit_lock = threading.Lock()
        self._semaphores: dict[tuple[str, int], threading.BoundedSemaphore] = {}

    def chat(self, config: EndpointConfig, request: ChatRequest) -> ChatResponse:
        start = time.monotonic()
        last_exc: Exception | None = None
        for attempt in range(1, config.max_retries + 2):
            try:
                with self._semaphore(config):
                    text = self.transport.send_chat(config, request)
                response = ChatResponse(
                    text=text,
                    latency_s=time.monotonic() - start,
                    attempts=attempt,
                )
                self._audit(config, request, reply=text, attempts=attempt)
                return response
            except TransportError as exc:
                # RateLimitError is a TransportError; both retry on the
                # same backoff schedule. EndpointError (4xx) propagates.
                last_exc = exc
                if attempt <= config.max_retries:
                    self._sleep(self._backoff(attempt))
                    continue
                break
        self._audit(config, request, error=str(last_exc),
                    attempts=config.max_retries + 1)
        raise TransportError(f"retries exhausted: {last_exc}") from last_exc

    def chat_many(self, config: EndpointConfig, requests: Sequence[ChatRequest]) -> list[ChatResponse]:
        """Dispatch requests with a bounded worker pool; results keep
        input order."""
        if not requests:
            return []
        workers = min(config.max_parallel, len(requests))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda r: self.chat(config, r), requests))

    def embed(self, config: EndpointConfig, texts: Sequence[str]) -> list[list[float]]:
        """Embed texts; vectors are L2-normalized and dimension-checked."""
        if not texts:
            return []
        with self._semaphore(config):
            vectors = self.transport.send_embed(config, texts)
        if len(vectors) != len(texts):
            raise EndpointError(200, f"embedding count mismatch: {len(vectors)} != {len(texts)}")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise EndpointError(200, f"inconsistent embedding dimensions: {sorted(dims)}")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=float)
            norm = float(np.linalg.norm(arr))
            if norm == 0.0:
                raise EndpointError(200, "zero-norm embedding")
            out.append([float(x) for x in arr / norm])
        self._audit(config, None, note=f"embedded {len(texts)} texts")
        return out

    def _semaphore(self, config: EndpointConfig) -> threading.BoundedSemaphore:
        key = (config.base_url, config.max_parallel)
        with self._lock:
            sem = self._semaphores.get(key)
            if sem is None:
                sem = threading.BoundedSemaphore(config.max_parallel)
                self._semaphores[key] = sem
            return sem

    def _backoff(self, attempt: int) -> float:
        ceiling = min(BACKOFF_CAP, BACKOFF_BASE * (BACKOFF_FACTOR ** (attempt - 1)))
        return self._jitter.uniform(0.0, ceiling)

    def _audit(self, config: EndpointConfig, request: ChatRequest | None,
               reply: str | None = None, error: str | None = None,
               attempts: int = 1, note: str | None = None) -> None:
        if self.audit_path is None:
            return
        entry: dict[str, Any] = {
            "model": config.model_name,
            "base_url": config.base_url,
            "temperature": config.temperature,
            "attempts": attempts,
        }
        if request is not None:
            entry["messages"] = [dict(m) for m in request.messages]
        if reply is not None:
            entry["reply"] = reply
        if error is not None:
            entry["error"] = error
        if note is not None:
            entry["note"] = note
        line = json.dumps(entry, ensure_ascii=False)
        with self._audit_lock:
            self.audit_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.audit_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


# ---------------------------------------------------------------------------
# Strict JSON extraction from model replies.

class Nullable:
    """Shape wrapper: value may be JSON null."""

    def __init__(self, inner: Any):
        self.inner = inner


class Opt:
    """Shape wrapper: object key may be absent."""

    def __init__(self, inner: Any):
        self.inner = inner


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n?|```")


def extract_json(raw: str, shape: Any = None) -> Any:
    """Pull the first JSON value out of a model reply and check its shape.

    Code fences and any prose before/after the value are stripped. The
    shape language: dicts map required keys to sub-shapes (wrap in Opt
    for optional keys, Nullable for nullable values), single-element
    lists mean homogeneous arrays, and bare types (str, int, float,
    bool) check scalars. float accepts ints; int rejects bools.
    """
    cleaned = _FENCE_RE.sub("", raw)
    value = _first_json_value(cleaned)
    if shape is not None:
        _check_shape(value, shape, path="$")
    return value


def serialize_json(value: Any) -> str:
    """Inverse of extract_json for schema-valid values."""
    return json.dumps(value, ensure_ascii=False)


def _first_json_value(text: str) -> Any:
    decoder = json.JSONDecoder()
    for idx, ch in enumerate(text):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(text, idx)
                return value
            except json.JSONDecodeError:
                continue
    # Fall back to bare scalars (a reply that is just a number/string).
    stripped = text.strip()
    if stripped:
        try:
            return json.loads(stripped)
        except json.JSONDecodeError:
            pass
    raise JsonExtractError(f"no JSON value found in reply: {text[:200]!r}")


def _check_shape(value: Any, shape: Any, path: str) -> None:
    if isinstance(shape, Nullable):
        if value is None:
            return
        _check_shape(value, shape.inner, path)
        return
    if isinstance(shape, Opt):
        raise ValidationError(f"Opt is only valid as a dict value shape (at {path})")
    if isinstance(shape, dict):
        if not isinstance(value, dict):
            raise JsonShapeError(f"{path}: expected object, got {type(value).__name__}")
        required = {k for k, v in shape.items() if not isinstance(v, Opt)}
        allowed = set(shape)
        missing = sorted(required - set(value))
        extra = sorted(set(value) - allowed)
        if missing or extra:
            raise JsonShapeError(
                f"{path}: object keys mismatch (missing={missing}, extra={extra})",
                missing=missing, extra=extra)
        for key, sub in shape.items():
            if key not in value:
                continue
            inner = sub.inner if isinstance(sub, Opt) else sub
            _check_shape(value[key], inner, f"{path}.{key}")
        return
    if isinstance(shape, list):
        if len(shape) != 1:
            raise ValidationError(f"list shapes must have exactly one element (at {path})")
        if not isinstance(value, list):
            raise JsonShapeError(f"{path}: expected array, got {type(value).__name__}")
        for i, item in enumerate(value):
            _check_shape(item, shape[0], f"{path}[{i}]")
        return
    if shape is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise JsonShapeError(f"{path}: expected number, got {type(value).__name__}")
        return
    if shape is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise JsonShapeError(f"{path}: expected integer, got {type(value).__name__}")
        return
    if shape is bool:
        if not isinstance(value, bool):
            raise JsonShapeError(f"{path}: expected boolean, got {type(value).__name__}")
        return
    if shape is str:
        if not isinstance(value, str):
            raise JsonShapeError(f"{path}: expected string, got {type(value).__name__}")
        return
    raise ValidationError(f"unsupported shape {shape!r} (at {path})")


def judge_batches(gateway: Gateway, config: EndpointConfig,
                  items: Sequence[Any],
                  build_request: Callable[[Sequence[Any]], ChatRequest],
                  item_shape: Any,
                  batch_size: int = 10) -> list[Any | None]:
    """Run a batched judge over items, enforcing reply-array length.

    A reply whose array length mismatches the batch triggers one
    re-query; if still wrong the batch falls back to per-item requests.
    Items whose reply never parses map to None.
    """
    results: list[Any | None] = []
    for start in range(0, len(items), batch_size):
        batch = list(items[start:start + batch_size])
        parsed = _try_batch(gateway, config, batch, build_request, item_shape)
        if parsed is None:
            parsed = _try_batch(gateway, config, batch, build_request, item_shape)
        if parsed is not None:
            results.extend(parsed)
            continue
        logger.warning("batch judge failed twice for %d items; falling back per item", len(batch))
        for item in batch:
            single = _try_batch(gateway, config, [item], build_request, item_shape)
            results.append(single[0] if single is not None else None)
    return results


def _try_batch(gateway: Gateway, config: EndpointConfig, batch: Sequence[Any],
               build_request: Callable[[Sequence[Any]], ChatRequest],
               item_shape: Any) -> list[Any] | None:
    try:
        response = gateway.chat(config, build_request(batch))
        value = extract_json(response.text, [item_shape])
    except (TransportError, EndpointError, JsonExtractError) as exc:
        logger.warning("judge batch of %d failed: %s", len(batch), exc)
        return None
    if len(value) != len(batch):
        logger.warning("judge reply length %d != batch %d", len(value), len(batch))
        return None
    return list(value)
