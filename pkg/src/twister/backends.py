"""Text-generation backends: an offline extractive mock and an OpenAI-compatible chat client."""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import httpx

from .prompts import TAGS, is_absent

log = logging.getLogger(__name__)

DEFAULT_MAX_NEW_TOKENS = 250

_TAG_RE = re.compile(r"<(%s)>(.*?)</\1>" % "|".join(TAGS), re.S)
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class Generation:
    text: str
    prompt_tokens: int
    completion_tokens: int
    seconds: float = 0.0


class GenerationBackend(Protocol):
    name: str
    max_new_tokens: int
    deterministic: bool

    def generate(self, prompt: str, seed: int = 0) -> Generation: ...


def first_sentence(text: str) -> str:
    text = " ".join(text.split())
    return _SENTENCE_END.split(text, maxsplit=1)[0] if text else ""


def truncate_tokens(text: str, n: int) -> str:
    words = text.split()
    return " ".join(words[:n])


def parse_tags(prompt: str) -> dict[str, list[str]]:
    found: dict[str, list[str]] = {}
    for tag, body in _TAG_RE.findall(prompt):
        found.setdefault(tag, []).append(body.strip())
    return found


class MockBackend:
    """Deterministic extractive stand-in for an LLM.

    Aggregation prompts (those carrying a ``<focal>`` block) are answered with
    the first sentence of the focal payload followed by the first sentences
    of up to ``max_neighbors`` neighbour payloads. Edge prompts (carrying a
    ``<rating_cue>``) are answered with a rating sentence plus the first
    ``context_tokens`` tokens of the item context, or of the user context,
    or of the item metadata, whichever is present first. Output is capped at
    ``max_new_tokens`` whitespace tokens. The result depends only on the
    prompt text; ``seed`` is accepted for interface parity.
    """

    deterministic = True

    def __init__(self, max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS, max_neighbors: int = 5, context_tokens: int = 30):
        self.name = "mock"
        self.max_new_tokens = max_new_tokens
        self.max_neighbors = max_neighbors
        self.context_tokens = context_tokens

    def respond(self, prompt: str) -> str:
        tags = parse_tags(prompt)
        if "focal" in tags:
            parts = [first_sentence(tags["focal"][0])]
            parts += [first_sentence(p) for p in tags.get("neighbor", [])[: self.max_neighbors]]
            return truncate_tokens(" ".join(p for p in parts if p), self.max_new_tokens)
        if "rating_cue" in tags:
            out = f"Rated {tags['rating_cue'][0]}."
            for key in ("item_context", "user_context", "item_metadata"):
                body = tags.get(key, [""])[0]
                if body and not is_absent(body):
                    out += " " + truncate_tokens(body, self.context_tokens)
                    break
            return truncate_tokens(out, self.max_new_tokens)
        return ""

    def generate(self, prompt: str, seed: int = 0) -> Generation:
        text = self.respond(prompt)
        return Generation(text, len(prompt.split()), len(text.split()), 0.0)


class ChatCompletionsBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Configuration falls back to ``TWISTER_LLM_ENDPOINT``, ``TWISTER_LLM_MODEL``
    and ``TWISTER_LLM_API_KEY``. Each call is attempted ``max_attempts`` times
    with exponential backoff; concurrent calls are bounded by ``max_concurrency``.
    """

    deterministic = False

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        temperature: float = 0.7,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        max_concurrency: int = 4,
        system_prompt: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.endpoint = (endpoint or os.environ.get("TWISTER_LLM_ENDPOINT", "")).rstrip("/")
        if not self.endpoint:
            raise ValueError("no chat endpoint configured (set TWISTER_LLM_ENDPOINT)")
        self.model = model or os.environ.get("TWISTER_LLM_MODEL", "")
        if not self.model:
            raise ValueError("no model configured (set TWISTER_LLM_MODEL)")
        self.api_key = api_key if api_key is not None else os.environ.get("TWISTER_LLM_API_KEY", "")
        self.name = f"chat:{self.model}"
        self.max_new_tokens = max_new_tokens
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.system_prompt = system_prompt
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def _url(self) -> str:
        if self.endpoint.endswith("/chat/completions"):
            return self.endpoint
        return self.endpoint + "/chat/completions"

    def request_body(self, prompt: str, seed: int) -> dict:
        messages = [{"role": "user", "content": prompt}]
        if self.system_prompt:
            messages.insert(0, {"role": "system", "content": self.system_prompt})
        return {
            "model": self.model,
            "messages": messages,
            "max_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "seed": seed,
            "n": 1,
        }

    def generate(self, prompt: str, seed: int = 0) -> Generation:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = self.request_body(prompt, seed)
        last = None
        for attempt in range(self.max_attempts):
            try:
                with self._slots:
                    t0 = time.perf_counter()
                    resp = self._client.post(self._url(), json=body, headers=headers)
                    elapsed = time.perf_counter() - t0
                resp.raise_for_status()
                data = resp.json()
                text = data["choices"][0]["message"].get("content") or ""
                usage = data.get("usage") or {}
                return Generation(
                    text,
                    int(usage.get("prompt_tokens", len(prompt.split()))),
                    int(usage.get("completion_tokens", len(text.split()))),
                    elapsed,
                )
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("chat request failed (attempt %d/%d): %s", attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff * 2**attempt)
        raise BackendError(f"chat request failed after {self.max_attempts} attempts: {last}")


@dataclass
class LedgerEntry:
    kind: str
    prompt_tokens: int
    completion_tokens: int
    seconds: float


@dataclass
class TokenLedger:
    """Per-call token and time accounting, summarised per call type.

    ``tokens`` in the summary counts generated tokens, as do the
    aggregation and imputation cost tables this mirrors.
    """

    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, kind: str, gen: Generation) -> None:
        self.entries.append(LedgerEntry(kind, gen.prompt_tokens, gen.completion_tokens, gen.seconds))

    def extend(self, other: "TokenLedger") -> None:
        self.entries.extend(other.entries)

    def summary(self) -> list[dict]:
        rows = []
        for kind in sorted({e.kind for e in self.entries}):
            sel = [e for e in self.entries if e.kind == kind]
            tokens = sum(e.completion_tokens for e in sel)
            seconds = sum(e.seconds for e in sel)
            rows.append(
                {
                    "type": kind,
                    "count": len(sel),
                    "total_tokens": tokens,
                    "total_prompt_tokens": sum(e.prompt_tokens for e in sel),
                    "total_time_s": round(seconds, 6),
                    "avg_tokens": round(tokens / len(sel), 6),
                    "avg_time_s": round(seconds / len(sel), 6),
                }
            )
        return rows
