"""LLM access: prompt templates, an HTTP chat-completion backend and a scripted mock."""

from __future__ import annotations

import logging
import os
import string
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from .errors import (
    ConfigError,
    HttpStatusError,
    IoFailure,
    LlmTimeout,
    MalformedProviderPayload,
    MissingBinding,
    NoMatchingRule,
)

logger = logging.getLogger(__name__)

DOCUMENT_SEPARATOR = "\n---\n"
NO_DOCUMENTS = "(no reference documents)"


class TemplateName(str, Enum):
    DIAG = "diag"
    DIFF = "diff"
    RAG = "rag"


REQUIRED_PLACEHOLDERS = {
    TemplateName.DIAG: frozenset({"patient"}),
    TemplateName.DIFF: frozenset({"patient", "document"}),
    TemplateName.RAG: frozenset({"patient", "documents"}),
}
ALLOWED_PLACEHOLDERS = frozenset({"patient", "document", "documents"})


def placeholders(body: str) -> set[str]:
    return {fname for _, fname, _, _ in string.Formatter().parse(body) if fname is not None}


@dataclass(frozen=True)
class PromptTemplate:
    name: TemplateName
    body: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", TemplateName(self.name))
        try:
            found = placeholders(self.body)
        except ValueError as exc:
            raise ConfigError(f"template {self.name.value}: {exc}") from exc
        missing = REQUIRED_PLACEHOLDERS[self.name] - found
        if missing:
            raise ConfigError(f"template {self.name.value} must declare {sorted(missing)}")
        unknown = found - ALLOWED_PLACEHOLDERS
        if unknown:
            raise ConfigError(f"template {self.name.value} uses unknown placeholders {sorted(unknown)}")

    @classmethod
    def default(cls, name: TemplateName | str) -> "PromptTemplate":
        name = TemplateName(name)
        body = resources.files("adaptrag").joinpath(f"prompts/{name.value}.txt").read_text(encoding="utf-8")
        return cls(name, body)

    @classmethod
    def from_file(cls, name: TemplateName | str, path: str | Path) -> "PromptTemplate":
        try:
            body = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read template {path}: {exc}") from exc
        return cls(TemplateName(name), body)


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    for ph in sorted(placeholders(template.body)):
        if ph not in bindings:
            raise MissingBinding(ph)
    return template.body.format_map(dict(bindings))


def format_documents(docs: Sequence, separator: str = DOCUMENT_SEPARATOR) -> str:
    """Join documents (objects with ``title``/``body``) into one evidence block, order kept."""
    if not docs:
        return NO_DOCUMENTS
    return separator.join(f"{d.title}\n{d.body}" for d in docs)


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ConfigError("LLM request prompt must be non-empty")
        if self.temperature < 0 or self.max_tokens < 1:
            raise ConfigError("temperature must be >= 0 and max_tokens positive")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    latency_ms: int
    backend: str


class Backend(Protocol):
    name: str

    def complete(self, request: LlmRequest) -> str: ...


@dataclass(frozen=True)
class MockBackend:
    """Ordered substring rules; the first rule whose pattern occurs in the prompt wins."""

    rules: tuple[tuple[str, str], ...] = ()
    default: str | None = None
    name: str = field(default="mock", init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple((str(p), str(r)) for p, r in self.rules))

    @classmethod
    def from_jsonl(cls, path: str | Path, default: str | None = None) -> "MockBackend":
        from .jsonl import read_jsonl

        rules = []
        for row in read_jsonl(path):
            try:
                rules.append((row["pattern"], row["response"]))
            except KeyError as exc:
                raise ConfigError(f"{path}: mock rule missing {exc}") from exc
        return cls(tuple(rules), default)

    def complete(self, request: LlmRequest) -> str:
        for pattern, response in self.rules:
            if pattern in request.prompt:
                return response
        if self.default is None:
            raise NoMatchingRule(f"no mock rule matches prompt tagged {request.tag!r}")
        return self.default


class HttpBackend:
    """OpenAI-style ``/chat/completions`` client with timeout and bounded retries.

    The bearer token is read from ``api_key_env`` at call time and never stored
    on the instance or written to logs.
    """

    name = "http"
    RETRY_STATUSES = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        timeout_ms: int = 30000,
        max_retries: int = 2,
        backoff_s: float = 0.5,
        client: httpx.Client | None = None,
    ) -> None:
        if timeout_ms <= 0 or max_retries < 0:
            raise ConfigError("timeout_ms must be positive and max_retries >= 0")
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._client = client or httpx.Client()

    def __repr__(self) -> str:
        return f"HttpBackend(endpoint={self.endpoint!r}, model={self.model!r})"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: LlmRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_s * 2 ** (attempt - 1)
                logger.warning("LLM call %r retry %d/%d in %.2fs: %s", request.tag, attempt, self.max_retries, delay, last_error)
                time.sleep(delay)
            try:
                resp = self._client.post(
                    self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout_ms / 1000
                )
            except httpx.TimeoutException:
                last_error = LlmTimeout(f"no response within {self.timeout_ms} ms")
                continue
            except httpx.TransportError as exc:
                last_error = HttpStatusError(0, f"transport error: {type(exc).__name__}")
                continue
            if resp.status_code in self.RETRY_STATUSES:
                last_error = HttpStatusError(resp.status_code)
                continue
            if resp.status_code != 200:
                raise HttpStatusError(resp.status_code)
            return _content_of(resp)
        assert last_error is not None
        raise last_error


def _content_of(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedProviderPayload(f"unexpected completion payload: {exc!r}") from exc
    if not isinstance(content, str):
        raise MalformedProviderPayload(f"completion content is {type(content).__name__}, expected str")
    if not content:
        logger.warning("provider returned an empty completion")
    return content


class LlmGateway:
    """Shared entry point for every LLM call; caps in-flight requests and counts calls."""

    def __init__(self, backend: Backend, max_concurrent: int = 4, temperature: float = 0.0, max_tokens: int = 512) -> None:
        if max_concurrent < 1:
            raise ConfigError("max_concurrent_llm must be >= 1")
        self.backend = backend
        self.max_concurrent = max_concurrent
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._slots = threading.BoundedSemaphore(max_concurrent)
        self._lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def request(self, prompt: str, tag: str = "") -> LlmRequest:
        return LlmRequest(prompt=prompt, temperature=self.temperature, max_tokens=self.max_tokens, tag=tag)

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            self._calls += 1
        with self._slots:
            start = time.perf_counter()
            text = self.backend.complete(request)
            latency = int((time.perf_counter() - start) * 1000)
        return LlmResponse(text=text, latency_ms=latency, backend=self.backend.name)

    def ask(self, prompt: str, tag: str = "") -> str:
        return self.complete(self.request(prompt, tag)).text
