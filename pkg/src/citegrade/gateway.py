"""Provider-agnostic chat-completion gateway.

Completions are content-addressed on disk (one file per request hash) so runs
can be replayed deterministically; playback mode serves only from the store
and fails loudly on a miss. Tagged judge output is parsed here as well.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import threading
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import requests

from .errors import FixtureMissingError, ParseError, TemplateError, TransportError


class PromptTemplateId(Enum):
    GENERATION = "generation"
    ATTRIBUTION = "attribution"
    EDITING_RATING = "editing_rating"


_PLACEHOLDER_RE = re.compile(r"\[\[([A-Za-z ]+)\]\]")


@dataclass(frozen=True)
class PromptTemplate:
    """A named template body with ``[[Name]]`` placeholders."""

    template_id: PromptTemplateId
    body: str

    def placeholders(self) -> set[str]:
        return {m.group(1) for m in _PLACEHOLDER_RE.finditer(self.body)}


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute every placeholder exactly once; bindings are inserted verbatim."""
    missing = template.placeholders() - set(bindings)
    if missing:
        raise TemplateError(
            f"{template.template_id.value} template missing bindings: {sorted(missing)}"
        )
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), template.body)


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    cached: bool
    provider_meta: Mapping[str, str] = field(default_factory=dict)


def cache_key(request: CompletionRequest) -> str:
    """Stable content hash of everything that determines a completion."""
    payload = json.dumps(
        {
            "model_id": request.model_id,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CompletionStore:
    """Content-addressed transcript store: ``<root>/<first-2-hex>/<hash>.txt``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.txt"

    def get(self, key: str) -> str | None:
        path = self.path_for(key)
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8")

    def put(self, key: str, text: str) -> None:
        with self._locks_guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            path = self.path_for(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    handle.write(text)
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)


class Provider(Protocol):
    """Anything that can turn a completion request into text."""

    name: str

    def generate(self, request: CompletionRequest) -> str: ...


class HttpChatProvider:
    """OpenAI-style chat-completions endpoint; credentials come from the environment."""

    name = "http"

    def __init__(
        self,
        base_url: str | None = None,
        api_key_env: str = "CITEGRADE_API_KEY",
        timeout: float = 120.0,
    ):
        self.base_url = base_url or os.environ.get(
            "CITEGRADE_API_BASE", "https://api.openai.com/v1"
        )
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate(self, request: CompletionRequest) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = requests.post(
                f"{self.base_url.rstrip('/')}/chat/completions",
                headers=headers,
                json=body,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            payload = resp.json()
            return payload["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"chat completion failed: {exc}") from exc


class Gateway:
    """Serves completions from the store, a provider, or both.

    With a provider configured, cache misses trigger a bounded-concurrency
    provider call (with retries) whose result is recorded. In playback mode no
    provider is consulted and a miss is a :class:`FixtureMissingError`.
    """

    def __init__(
        self,
        store: CompletionStore,
        provider: Provider | None = None,
        playback: bool = False,
        concurrency_limit: int = 4,
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
    ):
        if concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        if not playback and provider is None:
            raise ValueError("a provider is required outside playback mode")
        self.store = store
        self.provider = provider
        self.playback = playback
        self._semaphore = threading.Semaphore(concurrency_limit)
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds

    def complete(self, request: CompletionRequest, fresh: bool = False) -> CompletionResult:
        """Resolve a completion; ``fresh`` forces a provider call past the cache."""
        key = cache_key(request)
        if self.playback:
            text = self.store.get(key)
            if text is None:
                raise FixtureMissingError(
                    f"no recorded completion for key {key} (model {request.model_id})"
                )
            return CompletionResult(text=text, cached=True, provider_meta={"mode": "playback"})
        if not fresh:
            hit = self.store.get(key)
            if hit is not None:
                return CompletionResult(text=hit, cached=True, provider_meta={})
        text = self._call_provider(request)
        self.store.put(key, text)
        return CompletionResult(
            text=text, cached=False, provider_meta={"provider": self.provider.name}
        )

    def _call_provider(self, request: CompletionRequest) -> str:
        last: TransportError | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._semaphore:
                    return self.provider.generate(request)
            except TransportError as exc:
                last = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_seconds * (2**attempt))
        raise TransportError(f"provider failed after {self.max_retries + 1} attempts: {last}")


@dataclass(frozen=True)
class Judge:
    """A gateway plus the decoding configuration used for every evaluator call."""

    gateway: Gateway
    model_id: str
    temperature: float = 0.0
    max_tokens: int = 4096

    def complete_text(self, prompt: str, fresh: bool = False) -> str:
        request = CompletionRequest(
            model_id=self.model_id,
            prompt=prompt,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )
        return self.gateway.complete(request, fresh=fresh).text


@dataclass(frozen=True)
class TaggedBlock:
    """One ``<tag attr="v">body</tag>`` span from a judge transcript."""

    tag: str
    attributes: Mapping[str, str]
    body: str
    children: tuple[TaggedBlock, ...] = ()

    def int_attr(self, name: str) -> int:
        value = self.attributes.get(name)
        if value is None:
            raise ParseError(f"<{self.tag}> block missing attribute {name!r}")
        return int(value)


_ATTR_RE = re.compile(r'([A-Za-z_][\w-]*)\s*=\s*"([^"]*)"')
_INT_ATTRS = {"sentence_id", "citation"}


def _parse_attributes(raw: str, tag: str, span: str) -> dict[str, str]:
    attrs: dict[str, str] = {}
    leftover = raw
    for m in _ATTR_RE.finditer(raw):
        attrs[m.group(1)] = m.group(2)
        leftover = leftover.replace(m.group(0), "", 1)
    if leftover.strip(" ,\t\n"):
        raise ParseError(f"malformed attributes in <{tag}> block", span)
    for name, value in attrs.items():
        if name in _INT_ATTRS and not re.fullmatch(r"-?\d+", value.strip()):
            raise ParseError(f"attribute {name}={value!r} is not an integer", span)
    return attrs


def parse_tagged_blocks(text: str, expected_tags: set[str]) -> list[TaggedBlock]:
    """Extract all well-formed blocks for the expected tags, in document order.

    ``<editing>`` bodies are additionally scanned for DELETE/ADD child blocks.
    Truncated or malformed blocks raise :class:`ParseError` with the offending
    span attached; tags outside ``expected_tags`` are ignored.
    """
    if not expected_tags:
        return []
    open_re = re.compile(
        r"<(" + "|".join(re.escape(t) for t in sorted(expected_tags)) + r")\b([^>]*)>"
    )
    blocks: list[TaggedBlock] = []
    pos = 0
    while True:
        m = open_re.search(text, pos)
        if m is None:
            break
        tag, attr_raw = m.group(1), m.group(2)
        close = f"</{tag}>"
        end = text.find(close, m.end())
        if end < 0:
            raise ParseError(f"truncated <{tag}> block", text[m.start() : m.start() + 80])
        span = text[m.start() : end + len(close)]
        if attr_raw.rstrip().endswith("/"):
            raise ParseError(f"self-closing <{tag}> block is not a valid span", span)
        attrs = _parse_attributes(attr_raw, tag, span)
        body = text[m.end() : end]
        children: tuple[TaggedBlock, ...] = ()
        if tag == "editing":
            children = tuple(parse_tagged_blocks(body, {"DELETE", "ADD"}))
        blocks.append(TaggedBlock(tag=tag, attributes=attrs, body=body.strip(), children=children))
        pos = end + len(close)
    return blocks
