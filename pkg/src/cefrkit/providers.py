"""
Generation and embedding backends.

Remote backends speak the chat-completions / embeddings JSON shape that
OpenAI and most self-hosted servers (vLLM, llama.cpp, TGI) expose. Mocks are
pure functions of their input, so whole pipelines run offline and
bit-reproducibly.

All HTTP goes through a :class:`Transport`. Tests swap in a recording stub
via :func:`set_default_transport` to prove that mock runs never touch the
network.
"""
from __future__ import annotations

import hashlib
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Protocol, Sequence

import httpx
import numpy as np

from cefrkit.errors import (
    AuthError,
    ConfigError,
    MalformedResponse,
    ProviderError,
    ProviderTimeout,
)

log = logging.getLogger(__name__)

BACKOFF_BASE_S = 0.5
BACKOFF_JITTER = 0.2
TRANSIENT_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})
AUTH_STATUS = frozenset({401, 403})


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    model_id: str = "gpt-3.5-turbo-1106"
    api_key_env: str = "OPENAI_API_KEY"
    timeout_ms: int = 30_000
    max_retries: int = 3
    temperature: float = 0.0

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    def api_key(self) -> Optional[str]:
        """Key from the environment. ``api_key_env=""`` means no key needed."""
        if not self.api_key_env:
            return None
        key = os.environ.get(self.api_key_env, "").strip()
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        return key

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown provider config field(s): {sorted(unknown)}")
        return cls(**d)


# -- transport ----------------------------------------------------------------

class TransientError(Exception):
    """Raised by transports for failures worth retrying."""


class Transport(Protocol):
    def post(self, url: str, payload: dict, headers: dict, timeout_s: float) -> tuple[int, object]:
        """Return ``(status_code, parsed_json_or_None)``."""


class HttpxTransport:
    def __init__(self, client: httpx.Client | None = None):
        self._client = client

    def post(self, url, payload, headers, timeout_s):
        client = self._client or httpx
        try:
            resp = client.post(url, json=payload, headers=headers, timeout=timeout_s)
        except httpx.TimeoutException as exc:
            raise TransientError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        try:
            body = resp.json()
        except ValueError:
            body = None
        return resp.status_code, body


_default_transport: Transport = HttpxTransport()


def default_transport() -> Transport:
    return _default_transport


def set_default_transport(transport: Transport) -> Transport:
    """Replace the process-wide transport; returns the previous one."""
    global _default_transport
    previous, _default_transport = _default_transport, transport
    return previous


def _backoff_delay(attempt: int) -> float:
    # Jitter only spreads retry timing; it never affects results.
    return BACKOFF_BASE_S * (2 ** attempt) * random.uniform(1 - BACKOFF_JITTER, 1 + BACKOFF_JITTER)


def _post_json(
    config: ProviderConfig,
    endpoint: str,
    payload: dict,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
):
    key = config.api_key()  # fails before any network call
    headers = {"Content-Type": "application/json"}
    if key:
        headers["Authorization"] = f"Bearer {key}"
    url = config.base_url.rstrip("/") + endpoint
    transport = transport or default_transport()

    last = "no attempt made"
    timed_out = False
    for attempt in range(config.max_retries + 1):
        if attempt:
            sleep(_backoff_delay(attempt - 1))
        try:
            status, body = transport.post(url, payload, headers, config.timeout_ms / 1000)
        except TransientError as exc:
            last, timed_out = str(exc), str(exc).startswith("timeout")
            log.warning("attempt %d/%d to %s failed: %s", attempt + 1, config.max_retries + 1, url, exc)
            continue
        if status in AUTH_STATUS:
            raise AuthError(f"{url} rejected credentials (HTTP {status})")
        if status in TRANSIENT_STATUS:
            last, timed_out = f"HTTP {status}", status == 408
            log.warning("attempt %d/%d to %s got HTTP %d", attempt + 1, config.max_retries + 1, url, status)
            continue
        if status >= 400:
            raise ProviderError(f"{url} returned HTTP {status}: {body!r}")
        return body
    err = ProviderTimeout if timed_out else ProviderError
    raise err(f"{url} failed after {config.max_retries + 1} attempt(s): {last}")


def chat_complete(
    config: ProviderConfig,
    system_prompt: str,
    user_prompt: str,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Text of the first choice. An empty ``system_prompt`` is omitted."""
    if not user_prompt.strip():
        raise ProviderError("user prompt is empty")
    messages = []
    if system_prompt:
        messages.append({"role": "system", "content": system_prompt})
    messages.append({"role": "user", "content": user_prompt})
    payload = {"model": config.model_id, "messages": messages, "temperature": config.temperature}
    body = _post_json(config, "/chat/completions", payload, transport, sleep)
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(f"no choices[0].message.content in response: {body!r}") from None
    if not isinstance(content, str):
        raise MalformedResponse(f"completion content is not text: {content!r}")
    return content


def embed(
    config: ProviderConfig,
    text: str,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> np.ndarray:
    if not text.strip():
        raise ProviderError("cannot embed empty text")
    body = _post_json(config, "/embeddings", {"model": config.model_id, "input": text}, transport, sleep)
    try:
        values = body["data"][0]["embedding"]
        vec = np.asarray(values, dtype=np.float64)
    except (KeyError, IndexError, TypeError, ValueError):
        raise MalformedResponse(f"no data[0].embedding in response: {body!r}") from None
    if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
        raise MalformedResponse("embedding must be a non-empty finite vector")
    return vec


# -- backends -------------------------------------------------------------------

class ChatBackend(Protocol):
    def complete(self, system_prompt: str, user_prompt: str) -> str: ...


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class RemoteChat:
    def __init__(self, config: ProviderConfig, transport: Transport | None = None):
        self.config = config
        self.transport = transport

    def complete(self, system_prompt, user_prompt):
        return chat_complete(self.config, system_prompt, user_prompt, self.transport)


class MockChat:
    """Offline chat backend.

    ``MockChat()`` echoes the user prompt, ``MockChat("B2")`` always answers
    ``"B2"``, and ``MockChat(fn)`` answers ``fn(system_prompt, user_prompt)``.
    """

    def __init__(self, reply: str | Callable[[str, str], str] | None = None):
        self.reply = reply

    def complete(self, system_prompt, user_prompt):
        if self.reply is None:
            return user_prompt
        if callable(self.reply):
            return self.reply(system_prompt, user_prompt)
        return self.reply

    @classmethod
    def hashed_choice(cls, choices: Sequence[str]) -> "MockChat":
        """Deterministically pick one of ``choices`` from a hash of the prompt."""
        choices = list(choices)

        def pick(system_prompt, user_prompt):
            digest = hashlib.sha256(user_prompt.encode("utf-8")).digest()
            return choices[int.from_bytes(digest[:4], "big") % len(choices)]

        return cls(pick)


class RemoteEmbedder:
    """Remote embedder that pins the dimension of the first vector it sees."""

    def __init__(self, config: ProviderConfig, transport: Transport | None = None):
        self.config = config
        self.transport = transport
        self.dim: int | None = None

    def embed(self, text):
        vec = embed(self.config, text, self.transport)
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise MalformedResponse(f"embedding dim changed from {self.dim} to {vec.size}")
        return vec


def _bucket(gram: str, dim: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def mock_embed(text: str, dim: int = 256) -> np.ndarray:
    """Hashed bag of lowercased character trigrams, L2-normalized.

    Texts shorter than 3 characters fall back to character unigrams.
    """
    if dim < 8:
        raise ValueError("mock embedding dim must be >= 8")
    if not text:
        raise ProviderError("cannot embed empty text")
    s = text.lower()
    grams = [s[i:i + 3] for i in range(len(s) - 2)] or list(s)
    vec = np.zeros(dim)
    for g in grams:
        vec[_bucket(g, dim)] += 1.0
    return vec / np.linalg.norm(vec)


class MockEmbedder:
    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValueError("mock embedding dim must be >= 8")
        self.dim = dim

    def embed(self, text):
        return mock_embed(text, self.dim)


def embed_many(embedder: Embedder, texts: Sequence[str], parallelism: int = 1) -> list[np.ndarray]:
    vectors = parallel_map(embedder.embed, texts, parallelism)
    dims = {v.size for v in vectors}
    if len(dims) > 1:
        raise MalformedResponse(f"embedding dims differ within a batch: {sorted(dims)}")
    return vectors


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dim mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(min(1.0, max(-1.0, float(np.dot(u, v)) / (nu * nv))))


def parallel_map(fn, items: Sequence, parallelism: int = 1) -> list:
    """``[fn(x) for x in items]`` with up to ``parallelism`` threads.

    Results keep input order. The first exception (by input index) is
    re-raised once every task has finished.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    items = list(items)
    if parallelism == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(fn, x) for x in items]
    return [f.result() for f in futures]
