"""Uniform chat-completion access: HTTP endpoints plus scripted test backends.

The wire format is OpenAI-compatible: POST {model, messages, temperature}
to ``{base_url}/chat/completions`` and read choices[0].message.content.
Credentials come from environment variables and are never logged or stored
in transcripts.
"""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import dataclass

import requests

from .errors import (
    AuthMissing,
    CompletionTimeout,
    SchemaViolation,
    ScriptExhausted,
    TransientTransportError,
    TransportError,
)
from .jsonio import extract_first_json_object
from .protocol import whitespace_tokens

logger = logging.getLogger(__name__)

REPAIR_PREAMBLE = (
    "Your previous reply did not satisfy the required output format: {error}. "
    "Reply again with only the corrected output."
)


@dataclass(frozen=True)
class Attachment:
    path: str
    media_type: str = "image/png"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    content: str
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.content and not self.attachments:
            raise ValueError("message needs content or attachments")


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str, attachments: tuple[Attachment, ...] = ()) -> ChatMessage:
    return ChatMessage("user", content, attachments)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class Endpoint:
    base_url: str
    model_name: str
    api_key_env: str = ""
    timeout: float = 120.0
    max_retries: int = 3
    temperature: float = 0.0
    supports_vision: bool = False
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class CallRecord:
    """One completed (or failed) model call in the audit transcript."""

    model: str
    messages: list[dict]
    reply: str | None
    attempts: int
    prompt_tokens: int
    reply_tokens: int
    error: str | None = None


class Transcript:
    """Append-only audit log of every model interaction in a run."""

    def __init__(self):
        self.calls: list[CallRecord] = []
        self._lock = threading.Lock()

    def record(self, record: CallRecord) -> None:
        with self._lock:
            self.calls.append(record)

    def __len__(self) -> int:
        return len(self.calls)

    def to_json(self) -> list[dict]:
        return [
            {
                "model": c.model,
                "messages": c.messages,
                "reply": c.reply,
                "attempts": c.attempts,
                "prompt_tokens": c.prompt_tokens,
                "reply_tokens": c.reply_tokens,
                "error": c.error,
            }
            for c in self.calls
        ]


def _messages_payload(messages: list[ChatMessage], vision: bool) -> list[dict]:
    payload = []
    for m in messages:
        if m.attachments and vision:
            parts: list[dict] = []
            if m.content:
                parts.append({"type": "text", "text": m.content})
            for att in m.attachments:
                with open(att.path, "rb") as fh:
                    b64 = base64.b64encode(fh.read()).decode("ascii")
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:{att.media_type};base64,{b64}"},
                    }
                )
            payload.append({"role": m.role, "content": parts})
        else:
            payload.append({"role": m.role, "content": m.content})
    return payload


class HttpBackend:
    """OpenAI-compatible chat-completions transport."""

    def send(self, endpoint: Endpoint, messages: list[ChatMessage]) -> str:
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env)
            if not key:
                raise AuthMissing(f"environment variable {endpoint.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": endpoint.model_name,
            "messages": _messages_payload(messages, endpoint.supports_vision),
            "temperature": endpoint.temperature,
        }
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=endpoint.timeout)
        except requests.Timeout as exc:
            raise CompletionTimeout(f"no reply within {endpoint.timeout}s") from exc
        except requests.RequestException as exc:
            raise TransientTransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientTransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc


@dataclass
class ScriptedReply:
    reply: str
    match: str | None = None  # substring predicate on the last user message


class ScriptedBackend:
    """Deterministic canned backend: replies consumed strictly in order.

    A reply with a ``match`` substring asserts the last user message contains
    it; a mismatch or an exhausted script is an error rather than a silent
    wrong answer, so test traces can't drift.
    """

    def __init__(self, script: list[ScriptedReply]):
        self.script = list(script)
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_pairs(cls, pairs: list[tuple[str | None, str]]) -> "ScriptedBackend":
        return cls([ScriptedReply(reply=r, match=m) for m, r in pairs])

    def send(self, endpoint: Endpoint, messages: list[ChatMessage]) -> str:
        with self._lock:
            if self._cursor >= len(self.script):
                raise ScriptExhausted(f"scripted backend exhausted after {self._cursor} replies")
            entry = self.script[self._cursor]
            if entry.match is not None:
                last_user = next((m.content for m in reversed(messages) if m.role == "user"), "")
                if entry.match not in last_user:
                    raise ScriptExhausted(
                        f"scripted reply {self._cursor} expected {entry.match!r} "
                        f"in last user message"
                    )
            self._cursor += 1
            return entry.reply


class RouterBackend:
    """Dispatch to a per-model backend; unknown models use the fallback.

    Lets scripted and live endpoints coexist behind one gateway: each role's
    endpoint carries a distinct model_name, which keys the routing table.
    """

    def __init__(self, backends: dict[str, object], fallback=None):
        self.backends = dict(backends)
        self.fallback = fallback

    def send(self, endpoint: Endpoint, messages: list[ChatMessage]) -> str:
        backend = self.backends.get(endpoint.model_name, self.fallback)
        if backend is None:
            raise TransportError(f"no backend for model {endpoint.model_name!r}")
        return backend.send(endpoint, messages)


class Gateway:
    """Retry, audit, and JSON-repair wrapper over a transport backend."""

    def __init__(self, backend=None, transcript: Transcript | None = None, backoff_base: float = 0.5):
        self.backend = backend or HttpBackend()
        self.transcript = transcript if transcript is not None else Transcript()
        self.backoff_base = backoff_base
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._sem_lock = threading.Lock()

    def _semaphore(self, endpoint: Endpoint) -> threading.Semaphore:
        key = f"{endpoint.base_url}::{endpoint.model_name}"
        with self._sem_lock:
            if key not in self._semaphores:
                self._semaphores[key] = threading.Semaphore(endpoint.max_in_flight)
            return self._semaphores[key]

    def complete(self, endpoint: Endpoint, messages: list[ChatMessage]) -> str:
        """One assistant completion with transport retries and audit logging."""
        if not messages:
            raise ValueError("messages must be non-empty")
        prompt_tokens = sum(whitespace_tokens(m.content) for m in messages)
        attempts = 0
        last_exc: Exception | None = None
        sem = self._semaphore(endpoint)
        while attempts <= endpoint.max_retries:
            attempts += 1
            try:
                with sem:
                    reply = self.backend.send(endpoint, messages)
                self.transcript.record(
                    CallRecord(
                        model=endpoint.model_name,
                        messages=[{"role": m.role, "content": m.content} for m in messages],
                        reply=reply,
                        attempts=attempts,
                        prompt_tokens=prompt_tokens,
                        reply_tokens=whitespace_tokens(reply),
                    )
                )
                return reply
            except TransientTransportError as exc:
                last_exc = exc
                if attempts <= endpoint.max_retries:
                    delay = self.backoff_base * (2 ** (attempts - 1))
                    logger.warning("transient failure (attempt %d): %s", attempts, exc)
                    if delay > 0:
                        time.sleep(delay)
        self.transcript.record(
            CallRecord(
                model=endpoint.model_name,
                messages=[{"role": m.role, "content": m.content} for m in messages],
                reply=None,
                attempts=attempts,
                prompt_tokens=prompt_tokens,
                reply_tokens=0,
                error=str(last_exc),
            )
        )
        raise TransportError(f"failed after {attempts} attempts: {last_exc}") from last_exc

    def complete_json(self, endpoint: Endpoint, messages: list[ChatMessage], validator) -> dict:
        """Completion that must parse as JSON and satisfy ``validator``.

        ``validator`` takes the parsed object and returns None when valid or
        an error string. One repair turn is issued on failure, quoting the
        error back as a user message; a second failure is terminal. Never
        more than two completions per invocation.
        """
        reply = self.complete(endpoint, messages)
        obj = extract_first_json_object(reply)
        error = "reply contained no JSON object" if obj is None else validator(obj)
        if error is None:
            return obj
        repair = messages + [assistant(reply), user(REPAIR_PREAMBLE.format(error=error))]
        reply2 = self.complete(endpoint, repair)
        obj2 = extract_first_json_object(reply2)
        error2 = "reply contained no JSON object" if obj2 is None else validator(obj2)
        if error2 is None:
            return obj2
        raise SchemaViolation(f"after repair turn: {error2}", transcript=self.transcript)
