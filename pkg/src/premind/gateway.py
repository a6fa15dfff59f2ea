"""Uniform clients for the four remote model capabilities (VLM chat with
images, text LLM chat, ASR transcription, text embedding) plus a
deterministic mock backend for offline runs.

A Gateway wraps a backend object exposing ``vlm(prompt, images)``,
``llm(prompt)``, ``transcribe(path)``, and ``embed(text)``. The HTTP backend
speaks the common chat-completions schema; the mock backend replays
responses from a manifest and is what every test and CI run uses.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from .config import ModelConfig, RetryPolicy
from .errors import (
    AuthFailure,
    DimensionMismatch,
    GatewayError,
    GatewayTimeout,
    MalformedResponse,
    ManifestParseError,
    MediaNotFound,
    RateLimited,
)
from .media import Frame

logger = logging.getLogger(__name__)

MOCK_SENTINEL = "[premind-mock: unregistered request]"


@dataclass(frozen=True)
class TranscriptSentence:
    """One ASR sentence with its time span."""

    text: str
    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"sentence with start {self.start} > end {self.end}")

    @property
    def midpoint(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass(frozen=True)
class Embedding:
    """A fixed-dimension real vector."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("empty embedding")
        if not all(np.isfinite(self.values)):
            raise ValueError("non-finite embedding component")

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def hashed_embedding(text: str, dim: int = 32, seed: int = 0) -> Embedding:
    """Deterministic hash-to-vector embedding used by the mock backend."""
    out: list[float] = []
    counter = 0
    while len(out) < dim:
        digest = hashlib.sha256(f"{seed}:{counter}:{text}".encode()).digest()
        for i in range(0, len(digest) - 3, 4):
            u = int.from_bytes(digest[i:i + 4], "big")
            out.append(u / 2147483648.0 - 1.0)
            if len(out) == dim:
                break
        counter += 1
    return Embedding(tuple(out))


def request_key(prompt: str, images: list[Frame] | None = None) -> str:
    """Stable replay key: SHA-256 over the prompt text and raw image bytes."""
    h = hashlib.sha256(prompt.encode("utf-8"))
    for frame in images or []:
        h.update(b"\x00img")
        h.update(str(frame.pixels.shape).encode())
        h.update(np.ascontiguousarray(frame.pixels).tobytes())
    return h.hexdigest()


def file_key(path: str) -> str:
    """Replay key for media files: SHA-256 of the file bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Gateway:
    """Shared, thread-safe front for a model backend with retry and call
    accounting. VLM/LLM calls are the "API calls" counted in efficiency
    reports; ASR and embedding are tracked separately."""

    def __init__(self, backend, cfg: ModelConfig | None = None, sleep=time.sleep):
        self.backend = backend
        self.cfg = cfg or ModelConfig()
        self._sleep = sleep
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {"vlm": 0, "llm": 0, "asr": 0, "embed": 0}
        self.call_log: list[dict] = []

    def _record(self, capability: str, key: str, attempts: int, latency: float):
        with self._lock:
            self._counts[capability] += 1
            self.call_log.append({"capability": capability, "key": key,
                                  "attempts": attempts, "latency_s": latency})

    def call_count(self, capability: str | None = None) -> int:
        with self._lock:
            if capability is None:
                return sum(self._counts.values())
            return self._counts[capability]

    def model_call_count(self) -> int:
        """VLM + LLM calls: the per-segment API-call budget."""
        with self._lock:
            return self._counts["vlm"] + self._counts["llm"]

    def _with_retry(self, fn):
        policy: RetryPolicy = self.cfg.retry
        delay = policy.backoff_initial
        attempts = 0
        while True:
            attempts += 1
            try:
                return fn(), attempts
            except (RateLimited, GatewayTimeout):
                if attempts >= policy.max_attempts:
                    raise
                self._sleep(min(delay, policy.backoff_cap))
                delay *= policy.backoff_factor

    def vlm_complete(self, prompt: str, images: list[Frame]) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        if len(images) > 2:
            raise ValueError("at most 2 images per request")
        key = request_key(prompt, images)
        t0 = time.monotonic()
        reply, attempts = self._with_retry(lambda: self.backend.vlm(prompt, images))
        self._record("vlm", key, attempts, time.monotonic() - t0)
        return reply

    def llm_complete(self, prompt: str) -> str:
        if not prompt:
            raise ValueError("empty prompt")
        key = request_key(prompt)
        t0 = time.monotonic()
        reply, attempts = self._with_retry(lambda: self.backend.llm(prompt))
        self._record("llm", key, attempts, time.monotonic() - t0)
        return reply

    def transcribe(self, media_path: str) -> list[TranscriptSentence]:
        if not os.path.exists(media_path):
            raise MediaNotFound(media_path)
        t0 = time.monotonic()
        sentences, attempts = self._with_retry(lambda: self.backend.transcribe(media_path))
        self._record("asr", os.path.basename(media_path), attempts,
                     time.monotonic() - t0)
        return sorted(sentences, key=lambda s: (s.start, s.end))

    def embed(self, text: str) -> Embedding:
        if not text:
            raise ValueError("cannot embed empty text")
        t0 = time.monotonic()
        emb, attempts = self._with_retry(lambda: self.backend.embed(text))
        self._record("embed", hashlib.sha256(text.encode()).hexdigest()[:16],
                     attempts, time.monotonic() - t0)
        return emb


class HttpBackend:
    """Chat-completions style HTTP backend (works against any compatible
    hosted or local server). Images travel as base64 PNG data URLs."""

    def __init__(self, cfg: ModelConfig, timeout: float = 120.0):
        self.cfg = cfg
        self.timeout = timeout
        self._embed_dim: int | None = None

    # -- helpers ----------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        return headers

    def _post(self, url: str, payload: dict):
        import requests

        if not url:
            raise GatewayError("endpoint URL not configured")
        try:
            resp = requests.post(url, json=payload, headers=self._headers(),
                                 timeout=self.timeout)
        except requests.Timeout as exc:
            raise GatewayTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise GatewayError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimited(resp.text[:200])
        if resp.status_code in (401, 403):
            raise AuthFailure(resp.text[:200])
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(resp.text[:200]) from exc

    @staticmethod
    def _image_part(frame: Frame) -> dict:
        ok, png = cv2.imencode(".png", frame.pixels[:, :, ::-1])
        if not ok:
            raise GatewayError("PNG encoding failed")
        data = base64.b64encode(png.tobytes()).decode()
        return {"type": "image_url",
                "image_url": {"url": f"data:image/png;base64,{data}"}}

    def _chat(self, url: str, model: str, prompt: str,
              images: list[Frame]) -> str:
        content: list[dict] = [{"type": "text", "text": prompt}]
        content.extend(self._image_part(f) for f in images)
        data = self._post(url, {
            "model": model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        })
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(json.dumps(data)[:200]) from exc

    # -- capabilities ------------------------------------------------------

    def vlm(self, prompt: str, images: list[Frame]) -> str:
        return self._chat(self.cfg.vlm_url, self.cfg.vlm_model, prompt, images)

    def llm(self, prompt: str) -> str:
        return self._chat(self.cfg.llm_url, self.cfg.llm_model, prompt, [])

    def transcribe(self, media_path: str) -> list[TranscriptSentence]:
        import requests

        if not self.cfg.asr_url:
            raise GatewayError("ASR endpoint not configured")
        with open(media_path, "rb") as fh:
            try:
                resp = requests.post(
                    self.cfg.asr_url,
                    headers={k: v for k, v in self._headers().items()
                             if k != "Content-Type"},
                    files={"file": (os.path.basename(media_path), fh)},
                    data={"model": self.cfg.asr_model,
                          "response_format": "verbose_json"},
                    timeout=self.timeout,
                )
            except requests.Timeout as exc:
                raise GatewayTimeout(str(exc)) from exc
            except requests.RequestException as exc:
                raise GatewayError(str(exc)) from exc
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            segments = resp.json()["segments"]
            return [TranscriptSentence(s["text"].strip(), float(s["start"]),
                                       float(s["end"]))
                    for s in segments]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(resp.text[:200]) from exc

    def embed(self, text: str) -> Embedding:
        data = self._post(self.cfg.embed_url,
                          {"model": self.cfg.embed_model, "input": text})
        try:
            values = tuple(float(v) for v in data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(json.dumps(data)[:200]) from exc
        emb = Embedding(values)
        if self._embed_dim is None:
            self._embed_dim = emb.dim
        elif emb.dim != self._embed_dim:
            raise DimensionMismatch(f"expected {self._embed_dim}, got {emb.dim}")
        return emb


@dataclass
class MockBackend:
    """Deterministic replay backend.

    Responses are looked up first by the request hash (see ``request_key``),
    then by the literal prompt text. In strict mode an unregistered VLM/LLM/ASR
    request raises MalformedResponse; in lenient mode it yields a sentinel
    (empty transcript for ASR). Embeddings default to the seeded hash-to-vector
    embedder, with per-text manifest overrides.
    """

    strict: bool = False
    sentinel: str = MOCK_SENTINEL
    embed_dim: int = 32
    embed_seed: int = 0
    vlm_responses: dict[str, str] = field(default_factory=dict)
    llm_responses: dict[str, str] = field(default_factory=dict)
    asr_responses: dict[str, list] = field(default_factory=dict)
    embed_responses: dict[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()
        self.unmatched: list[dict] = []

    # -- registration -------------------------------------------------------

    def register(self, capability: str, key: str, response) -> None:
        table = {"vlm": self.vlm_responses, "llm": self.llm_responses,
                 "asr": self.asr_responses, "embed": self.embed_responses}
        table[capability][key] = response

    # -- capabilities --------------------------------------------------------

    def _lookup_chat(self, table: dict[str, str], capability: str,
                     prompt: str, images: list[Frame]) -> str:
        for key in (request_key(prompt, images), prompt):
            if key in table:
                return table[key]
        with self._lock:
            self.unmatched.append({"capability": capability, "prompt": prompt,
                                   "key": request_key(prompt, images)})
        if self.strict:
            raise MalformedResponse(
                f"unregistered {capability} request: {prompt[:80]!r}")
        return self.sentinel

    def vlm(self, prompt: str, images: list[Frame]) -> str:
        return self._lookup_chat(self.vlm_responses, "vlm", prompt, images)

    def llm(self, prompt: str) -> str:
        return self._lookup_chat(self.llm_responses, "llm", prompt, [])

    def transcribe(self, media_path: str) -> list[TranscriptSentence]:
        for key in (os.path.basename(media_path), file_key(media_path)):
            if key in self.asr_responses:
                return [TranscriptSentence(s["text"], float(s["start"]),
                                           float(s["end"]))
                        for s in self.asr_responses[key]]
        if self.strict:
            raise MalformedResponse(f"unregistered media: {media_path}")
        return []

    def embed(self, text: str) -> Embedding:
        for key in (hashlib.sha256(text.encode()).hexdigest(), text):
            if key in self.embed_responses:
                return Embedding(tuple(float(v) for v in self.embed_responses[key]))
        return hashed_embedding(text, self.embed_dim, self.embed_seed)


def mock_load(manifest_path: str) -> MockBackend:
    """Load a mock backend from a JSONL manifest.

    The first record may be a config header {"record": "config", "strict":
    bool, "sentinel": str, "embed_dim": int, "embed_seed": int}; every other
    record is {"capability": "vlm|llm|asr|embed", "key": <hash or literal
    prompt>, "response": <exact text, sentence list, or vector>}.
    """
    backend = MockBackend()
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ManifestParseError(str(exc)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except ValueError as exc:
            raise ManifestParseError(f"line {lineno}: {exc}") from exc
        if record.get("record") == "config":
            backend.strict = bool(record.get("strict", backend.strict))
            backend.sentinel = record.get("sentinel", backend.sentinel)
            backend.embed_dim = int(record.get("embed_dim", backend.embed_dim))
            backend.embed_seed = int(record.get("embed_seed", backend.embed_seed))
            continue
        try:
            backend.register(record["capability"], record["key"],
                             record["response"])
        except KeyError as exc:
            raise ManifestParseError(f"line {lineno}: missing {exc}") from exc
    return backend
