"""Text-generation backends: live HTTP, replay fixtures, and test scripts.

Every request is greedy (temperature 0) with a 2048-token budget unless
overridden. Requests are identified by a content hash of the prompt and
sampling parameters, which is what replay fixtures key on — tags exist only
for logging and scripted tests and never affect replay identity.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Protocol

import requests

from . import jsonl
from .errors import BackendError, FixtureMissError, IntegrityError, ParseError

DEFAULT_MAX_NEW_TOKENS = 2048
DEFAULT_TEMPERATURE = 0.0


class FinishReason(Enum):
    STOP = "stop"
    LENGTH = "length"
    OTHER = "other"


@dataclass(frozen=True, slots=True)
class GenRequest:
    prompt: str
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop: tuple[str, ...] = ()
    tag: str = ""  # problem id + mode; logging/scripting only


@dataclass(frozen=True, slots=True)
class GenResponse:
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    usage: dict | None = None


def request_key(req: GenRequest) -> str:
    """Content hash of the prompt and sampling parameters (tag excluded)."""
    payload = json.dumps(
        {
            "prompt": req.prompt,
            "max_new_tokens": req.max_new_tokens,
            "temperature": req.temperature,
            "stop": list(req.stop),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class GenerationBackend(Protocol):
    def generate(self, req: GenRequest) -> GenResponse: ...


class RateLimiter:
    """Caps in-flight requests and sustained request rate."""

    def __init__(self, max_concurrency: int = 4, requests_per_second: float = 0.0):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self._sem = threading.Semaphore(max_concurrency)
        self._interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def __enter__(self):
        self._sem.acquire()
        if self._interval:
            with self._lock:
                now = time.monotonic()
                wait = self._next_slot - now
                self._next_slot = max(now, self._next_slot) + self._interval
            if wait > 0:
                time.sleep(wait)
        return self

    def __exit__(self, *exc):
        self._sem.release()
        return False


class _Retriable(Exception):
    pass


class HttpBackend:
    """POSTs completion requests to an HTTP endpoint.

    Transport errors, 429s and 5xx replies are retried with exponential
    backoff; a well-formed but empty completion is returned as-is.
    """

    def __init__(
        self,
        url: str,
        model: str,
        api_style: str = "completions",
        auth_token: str | None = None,
        timeout_s: float = 60.0,
        retries: int = 3,
        backoff_s: float = 0.5,
        limiter: RateLimiter | None = None,
        session: requests.Session | None = None,
    ):
        if api_style not in ("completions", "chat"):
            raise ValueError(f"api_style must be 'completions' or 'chat', got {api_style!r}")
        self.url = url
        self.model = model
        self.api_style = api_style
        self.auth_token = auth_token
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.limiter = limiter
        self._session = session or requests.Session()
        self._sleep: Callable[[float], None] = time.sleep

    def _body(self, req: GenRequest) -> dict:
        body: dict = {
            "model": self.model,
            "max_tokens": req.max_new_tokens,
            "temperature": req.temperature,
        }
        if req.stop:
            body["stop"] = list(req.stop)
        if self.api_style == "chat":
            body["messages"] = [{"role": "user", "content": req.prompt}]
        else:
            body["prompt"] = req.prompt
        return body

    def _attempt(self, req: GenRequest) -> GenResponse:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            resp = self._session.post(
                self.url, json=self._body(req), headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise _Retriable() from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Retriable() from BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            if self.api_style == "chat":
                text = choice["message"]["content"]
            else:
                text = choice["text"]
            finish = str(choice.get("finish_reason", "stop"))
        except (ValueError, LookupError, TypeError) as exc:
            raise _Retriable() from exc
        try:
            reason = FinishReason(finish)
        except ValueError:
            reason = FinishReason.OTHER
        usage = data.get("usage") if isinstance(data.get("usage"), dict) else None
        return GenResponse(text=str(text), finish_reason=reason, usage=usage)

    def generate(self, req: GenRequest) -> GenResponse:
        last_cause: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                if self.limiter is not None:
                    with self.limiter:
                        return self._attempt(req)
                return self._attempt(req)
            except _Retriable as exc:
                last_cause = exc.__cause__ if isinstance(exc.__cause__, Exception) else exc
                if attempt < self.retries:
                    self._sleep(self.backoff_s * (2**attempt))
        raise BackendError(
            f"backend gave no usable reply after {self.retries + 1} attempts: {last_cause}",
            cause=last_cause,
        )


class ScriptedBackend:
    """Test backend keyed by request tag; records every call it serves."""

    def __init__(self, script: dict[str, str] | Callable[[GenRequest], str]):
        self._script = script
        self.calls: list[GenRequest] = []
        self._lock = threading.Lock()

    def generate(self, req: GenRequest) -> GenResponse:
        with self._lock:
            self.calls.append(req)
        if callable(self._script):
            return GenResponse(text=self._script(req))
        if req.tag not in self._script:
            raise KeyError(f"scripted backend has no entry for tag {req.tag!r}")
        return GenResponse(text=self._script[req.tag])

    def calls_for(self, tag: str) -> int:
        return sum(1 for c in self.calls if c.tag == tag)


class ReplayBackend:
    """Serves recorded responses; any unrecorded request is a hard error."""

    def __init__(self, fixture: dict[str, GenResponse]):
        self._fixture = fixture

    @classmethod
    def from_path(cls, path: str) -> "ReplayBackend":
        return cls(load_fixture(path))

    def generate(self, req: GenRequest) -> GenResponse:
        key = request_key(req)
        if key not in self._fixture:
            raise FixtureMissError(key)
        return self._fixture[key]


class RecordingBackend:
    """Wraps a backend and accumulates (request, response) pairs for a fixture."""

    def __init__(self, inner: GenerationBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.pairs: list[tuple[GenRequest, GenResponse]] = []

    def generate(self, req: GenRequest) -> GenResponse:
        response = self._inner.generate(req)
        with self._lock:
            self.pairs.append((req, response))
        return response

    def save(self, path: str) -> int:
        return record_session(self.pairs, path)


def _request_obj(req: GenRequest) -> dict:
    return {
        "prompt": req.prompt,
        "max_new_tokens": req.max_new_tokens,
        "temperature": req.temperature,
        "stop": list(req.stop),
    }


def _response_obj(resp: GenResponse) -> dict:
    obj: dict = {"text": resp.text, "finish_reason": resp.finish_reason.value}
    if resp.usage is not None:
        obj["usage"] = resp.usage
    return obj


def record_session(pairs: Iterable[tuple[GenRequest, GenResponse]], path: str) -> int:
    """Write a replay fixture; duplicate keys must carry identical payloads."""
    entries: dict[str, dict] = {}
    for req, resp in pairs:
        key = request_key(req)
        entry = {"key": key, "request": _request_obj(req), "response": _response_obj(resp)}
        if key in entries and entries[key] != entry:
            raise IntegrityError(f"fixture key collision with differing payloads: {key}")
        entries[key] = entry
    return jsonl.write_jsonl(path, (entries[k] for k in sorted(entries)))


def load_fixture(path: str) -> dict[str, GenResponse]:
    fixture: dict[str, GenResponse] = {}
    raw: dict[str, dict] = {}
    for lineno, obj in jsonl.read_jsonl(path):
        where = f"{path}:{lineno}"
        if not isinstance(obj, dict) or {"key", "request", "response"} - set(obj):
            raise ParseError(f"{where}: fixture entry must have key/request/response")
        key = obj["key"]
        req_obj = obj["request"]
        recomputed = request_key(
            GenRequest(
                prompt=req_obj["prompt"],
                max_new_tokens=req_obj["max_new_tokens"],
                temperature=req_obj["temperature"],
                stop=tuple(req_obj.get("stop", ())),
            )
        )
        if recomputed != key:
            raise IntegrityError(f"{where}: stored key {key} does not match its request")
        if key in raw and raw[key] != obj:
            raise IntegrityError(f"{where}: fixture key collision with differing payloads: {key}")
        raw[key] = obj
        resp_obj = obj["response"]
        fixture[key] = GenResponse(
            text=resp_obj["text"],
            finish_reason=FinishReason(resp_obj.get("finish_reason", "stop")),
            usage=resp_obj.get("usage"),
        )
    return fixture
