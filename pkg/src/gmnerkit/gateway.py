"""Chat-completions client with retries and a record/replay transcript cache.

Every request is identified by a content hash over its semantic fields
(canonical JSON), so a recorded transcript replays byte-identically with no
network I/O. Image parts are keyed by their reference path; bytes are only
read when a live request is actually sent.
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

LIVE = "LIVE"
REPLAY = "REPLAY"
RECORD = "RECORD"
MODES = (LIVE, REPLAY, RECORD)

MAX_IMAGE_BYTES = 4 * 1024 * 1024
_RETRYABLE_STATUS = {429, 500, 502, 503, 504}

# transport(url, body, headers, timeout) -> (status, response body)
Transport = Callable[[str, bytes, dict, float], tuple[int, bytes]]


class GatewayError(RuntimeError):
    pass


class CacheMissError(GatewayError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no cached response for request key {key}")


class CacheConflictError(GatewayError):
    pass


class HttpFailure(GatewayError):
    pass


class PayloadError(GatewayError):
    pass


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(path: str) -> dict:
    return {"type": "image", "path": path}


def user_message(*parts: dict) -> dict:
    return {"role": "user", "content": list(parts)}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[dict, ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))

    @property
    def request_key(self) -> str:
        canonical = json.dumps(
            {
                "model": self.model,
                "messages": list(self.messages),
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=True,
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TranscriptCache:
    """Append-only JSON-lines cache keyed by request hash; one response per key."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    key = record["request_key"]
                    response = record["response"]
                    if key in self._entries and self._entries[key] != response:
                        raise CacheConflictError(
                            f"{self.path}:{line_no}: conflicting responses for key {key}"
                        )
                    self._entries[key] = response

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str:
        if key not in self._entries:
            raise CacheMissError(key)
        return self._entries[key]

    def put(self, key: str, response: str, latency: float = 0.0,
            provider: str = "") -> None:
        with self._lock:
            if key in self._entries:
                if self._entries[key] != response:
                    raise CacheConflictError(f"conflicting responses for key {key}")
                return
            self._entries[key] = response
            record = {
                "request_key": key,
                "response": response,
                "latency": latency,
                "timestamp": time.time(),
                "provider": provider,
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=True) + "\n")


def _urllib_transport(url: str, body: bytes, headers: dict,
                      timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


@dataclass
class GatewayConfig:
    endpoint: str | None = None
    api_key_env: str = "GMNER_API_KEY"
    mode: str = REPLAY
    retries: int = 3
    backoff: float = 0.5
    timeout: float = 120.0
    concurrency: int = 4
    provider: str = "chat-completions"
    temperature: float = 0.0  # 0 for every pipeline call: reproducibility
    max_tokens: int = 1024


class LlmGateway:
    def __init__(self, config: GatewayConfig | None = None,
                 cache: TranscriptCache | None = None,
                 transport: Transport | None = None):
        self.config = config or GatewayConfig()
        if self.config.mode not in MODES:
            raise GatewayError(f"unknown gateway mode {self.config.mode!r}")
        self.cache = cache
        self.transport = transport or _urllib_transport
        self._inflight = threading.Semaphore(max(1, self.config.concurrency))
        self._metrics_lock = threading.Lock()
        self.metrics = {"requests": 0, "retries": 0, "cache_hits": 0, "live_calls": 0}

    def build_request(self, model: str, messages) -> ChatRequest:
        """Construct a request carrying this gateway's sampling settings."""
        return ChatRequest(
            model=model,
            messages=tuple(messages),
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
        )

    def complete(self, request: ChatRequest, mode: str | None = None) -> str:
        mode = mode or self.config.mode
        if mode not in MODES:
            raise GatewayError(f"unknown gateway mode {mode!r}")
        key = request.request_key
        self._bump("requests")
        if mode == REPLAY:
            if self.cache is None:
                raise GatewayError("REPLAY mode requires a transcript cache")
            text = self.cache.get(key)
            self._bump("cache_hits")
            return text
        if mode == RECORD and self.cache is not None and key in self.cache:
            self._bump("cache_hits")
            return self.cache.get(key)
        start = time.monotonic()
        text = self._live(request)
        if mode == RECORD:
            if self.cache is None:
                raise GatewayError("RECORD mode requires a transcript cache")
            self.cache.put(key, text, latency=time.monotonic() - start,
                           provider=self.config.provider)
        return text

    def _bump(self, name: str, amount: int = 1) -> None:
        with self._metrics_lock:
            self.metrics[name] += amount

    def _live(self, request: ChatRequest) -> str:
        if not self.config.endpoint:
            raise GatewayError("live requests need an endpoint in the gateway config")
        body = json.dumps(self._wire_payload(request)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: str = ""
        attempts = self.config.retries + 1
        for attempt in range(attempts):
            if attempt > 0:
                self._bump("retries")
                time.sleep(self.config.backoff * (2 ** (attempt - 1)))
            with self._inflight:
                self._bump("live_calls")
                try:
                    status, payload = self.transport(
                        self.config.endpoint, body, headers, self.config.timeout
                    )
                except OSError as exc:
                    last_error = f"transport error: {exc}"
                    continue
            if status in _RETRYABLE_STATUS:
                last_error = f"HTTP {status}"
                continue
            if status != 200:
                raise HttpFailure(f"HTTP {status}: {payload[:200]!r}")
            return self._parse_response(payload)
        raise HttpFailure(
            f"request failed after {attempts} attempts; last error: {last_error}"
        )

    def _wire_payload(self, request: ChatRequest) -> dict:
        messages = []
        for message in request.messages:
            parts = []
            for part in message.get("content", []):
                if part.get("type") == "text":
                    parts.append({"type": "text", "text": part["text"]})
                elif part.get("type") == "image":
                    parts.append({
                        "type": "image_url",
                        "image_url": {"url": self._image_data_url(part["path"])},
                    })
                else:
                    raise PayloadError(f"unknown content part {part.get('type')!r}")
            messages.append({"role": message["role"], "content": parts})
        return {
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    @staticmethod
    def _image_data_url(path: str) -> str:
        data = Path(path).read_bytes()
        if len(data) > MAX_IMAGE_BYTES:
            raise PayloadError(
                f"image {path!r} is {len(data)} bytes; cap is {MAX_IMAGE_BYTES} "
                f"(downscale before sending)"
            )
        suffix = Path(path).suffix.lstrip(".").lower() or "png"
        return f"data:image/{suffix};base64,{base64.b64encode(data).decode('ascii')}"

    @staticmethod
    def _parse_response(payload: bytes) -> str:
        try:
            doc = json.loads(payload)
            content = doc["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise PayloadError(f"unparseable provider payload: {exc}") from exc
        if isinstance(content, list):
            content = "".join(
                part.get("text", "") for part in content if isinstance(part, dict)
            )
        if not isinstance(content, str):
            raise PayloadError("provider payload content is not text")
        return content
