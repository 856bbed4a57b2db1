"""Black-box chat/embedding access for the teacher, student, customer, and judge roles.

Remote backends speak the common chat-completions + embeddings REST shape; the
scripted backend is a pure function of (script, messages, seed) for offline runs.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
import requests


class GatewayError(Exception):
    """Base class; carries the raw payload for logging when available."""

    def __init__(self, message: str, payload: object = None):
        super().__init__(message)
        self.payload = payload


class TransportError(GatewayError):
    """Request could not be completed after retries."""


class ProtocolError(GatewayError):
    """The backend answered, but not in the expected shape."""


class RoleMismatchError(GatewayError):
    """A call tagged for one role tried to use another role's backend."""


class BackendKind(str, Enum):
    REMOTE = "remote"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown message role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 512
    seed: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


# Invented defaults: the source setup only says the customer runs at non-zero
# temperature; agent and judge are pinned to 0 for reproducibility.
AGENT_PARAMS = GenerationParams(temperature=0.0)
CUSTOMER_PARAMS = GenerationParams(temperature=0.7)
JUDGE_PARAMS = GenerationParams(temperature=0.0)


@dataclass(frozen=True)
class ScriptRule:
    """One scripted-reply rule. All set conditions must hold; first match wins.

    Text conditions are evaluated against the full rendered prompt (system,
    user, and assistant messages); turn conditions against the count of prior
    assistant-role messages (the backend's own previous turns). Multiple
    replies are branch-selected by a seeded hash, keeping the backend pure.
    """

    contains: Optional[str] = None
    pattern: Optional[str] = None
    assistant_turns: Optional[int] = None
    min_assistant_turns: Optional[int] = None
    replies: tuple[str, ...] = ()

    def matches(self, prompt_text: str, n_assistant: int) -> bool:
        if self.contains is not None and self.contains not in prompt_text:
            return False
        if self.pattern is not None and re.search(self.pattern, prompt_text) is None:
            return False
        if self.assistant_turns is not None and n_assistant != self.assistant_turns:
            return False
        if self.min_assistant_turns is not None and n_assistant < self.min_assistant_turns:
            return False
        return True


@dataclass(frozen=True)
class ScriptedBehavior:
    """Deterministic stand-in for a chat/embedding backend."""

    rules: tuple[ScriptRule, ...] = ()
    default_reply: Optional[str] = None
    embed_dim: int = 64
    embed_seed: int = 0


@dataclass
class BackendConfig:
    kind: BackendKind
    model_id: str
    base_url: str = ""
    api_key_env: str = ""
    rate_limit: int = 0  # requests/minute; <= 0 means unlimited
    script: Optional[ScriptedBehavior] = None
    role: Optional[str] = None  # teacher | student | customer | judge | embedder
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0  # ceiling on total retry sleep, seconds

    def __post_init__(self):
        if self.kind is BackendKind.REMOTE and (not self.base_url or not self.api_key_env):
            raise ValueError("remote backend requires base_url and api_key_env")
        if self.kind is BackendKind.SCRIPTED and self.script is None:
            raise ValueError("scripted backend requires a script")


@dataclass
class Backends:
    """One config per role; role isolation is asserted on every call."""

    teacher: BackendConfig
    student: BackendConfig
    customer: BackendConfig
    judge: BackendConfig
    embedder: BackendConfig

    def __post_init__(self):
        for name in ("teacher", "student", "customer", "judge", "embedder"):
            cfg: BackendConfig = getattr(self, name)
            if cfg.role is None:
                cfg.role = name


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)


class TokenBucket:
    """Per-backend request limiter: rate/60 tokens per second, one second of burst."""

    def __init__(self, rate_per_minute: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.rate = rate_per_minute / 60.0
        self.capacity = max(1.0, self.rate)
        self._tokens = self.capacity
        self._last = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


_limiters: dict[int, TokenBucket] = {}
_limiters_lock = threading.Lock()

# injectable for tests
_sleep = time.sleep


def _limiter_for(backend: BackendConfig) -> Optional[TokenBucket]:
    if backend.rate_limit <= 0:
        return None
    key = id(backend)
    with _limiters_lock:
        bucket = _limiters.get(key)
        if bucket is None:
            bucket = TokenBucket(backend.rate_limit)
            _limiters[key] = bucket
        return bucket


def _check_role(backend: BackendConfig, role: Optional[str]) -> None:
    if role is not None and backend.role is not None and backend.role != role:
        raise RoleMismatchError(
            f"call tagged role={role!r} but backend is bound to role={backend.role!r}"
        )


def _seed_from(*parts: object) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _scripted_chat(script: ScriptedBehavior, messages: list[ChatMessage],
                   params: GenerationParams) -> str:
    prompt_text = "\n".join(f"{m.role}: {m.content}" for m in messages)
    n_assistant = sum(1 for m in messages if m.role == "assistant")
    for rule in script.rules:
        if rule.matches(prompt_text, n_assistant):
            if not rule.replies:
                continue
            if len(rule.replies) == 1:
                return rule.replies[0]
            transcript = "\x1e".join(f"{m.role}:{m.content}" for m in messages)
            idx = _seed_from(transcript, params.seed) % len(rule.replies)
            return rule.replies[idx]
    if script.default_reply is not None:
        return script.default_reply
    raise ProtocolError(
        "no script rule matched",
        payload=[{"role": m.role, "content": m.content} for m in messages],
    )


def _scripted_embed(script: ScriptedBehavior, text: str) -> np.ndarray:
    rng = np.random.default_rng(_seed_from("embed", script.embed_seed, text))
    vec = rng.standard_normal(script.embed_dim)
    return vec / np.linalg.norm(vec)


def _auth_headers(backend: BackendConfig) -> dict[str, str]:
    key = os.environ.get(backend.api_key_env, "")
    return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}


def _post_with_retries(backend: BackendConfig, path: str, body: dict) -> dict:
    url = backend.base_url.rstrip("/") + path
    slept = 0.0
    last_detail: object = None
    for attempt in range(backend.max_retries + 1):
        try:
            resp = requests.post(url, json=body, headers=_auth_headers(backend),
                                 timeout=backend.timeout)
        except requests.RequestException as exc:
            last_detail = str(exc)
        else:
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError:
                    raise ProtocolError("response body is not JSON", payload=resp.text)
            last_detail = resp.text
            if resp.status_code not in (429, 500, 502, 503, 504):
                raise TransportError(f"HTTP {resp.status_code} from {url}", payload=resp.text)
        if attempt == backend.max_retries:
            break
        delay = min(backend.backoff_base * (2 ** attempt), backend.backoff_cap - slept)
        if delay <= 0:
            break
        _sleep(delay)
        slept += delay
    raise TransportError(f"exhausted retries against {url}", payload=last_detail)


def chat(backend: BackendConfig, messages: list[ChatMessage],
         params: GenerationParams = AGENT_PARAMS, *, role: Optional[str] = None) -> str:
    """One chat completion. Scripted backends answer deterministically."""
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role != "system":
        raise ValueError("first message must be a system message")
    _check_role(backend, role)
    limiter = _limiter_for(backend)
    if limiter is not None:
        limiter.acquire()
    if backend.kind is BackendKind.SCRIPTED:
        assert backend.script is not None
        content = _scripted_chat(backend.script, messages, params)
        if not content.strip():
            raise ProtocolError("script produced an empty completion", payload=content)
        return content
    body = {
        "model": backend.model_id,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    }
    if params.seed is not None:
        body["seed"] = params.seed
    data = _post_with_retries(backend, "/v1/chat/completions", body)
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("missing choices[0].message.content", payload=data)
    if not isinstance(content, str) or not content.strip():
        raise ProtocolError("message content is empty or not text", payload=data)
    return content


def embed(backend: BackendConfig, text: str, *, role: Optional[str] = None) -> EmbeddingVector:
    """Embed text, normalized to unit norm at the gateway."""
    if not text:
        raise ValueError("text must be non-empty")
    _check_role(backend, role)
    limiter = _limiter_for(backend)
    if limiter is not None:
        limiter.acquire()
    if backend.kind is BackendKind.SCRIPTED:
        assert backend.script is not None
        vec = _scripted_embed(backend.script, text)
        return EmbeddingVector(tuple(float(v) for v in vec))
    data = _post_with_retries(backend, "/v1/embeddings", {"model": backend.model_id, "input": text})
    try:
        values = data["data"][0]["embedding"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("missing data[0].embedding", payload=data)
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if arr.ndim != 1 or arr.size == 0 or norm == 0.0 or not np.isfinite(norm):
        raise ProtocolError("embedding is empty or degenerate", payload=data)
    arr = arr / norm
    return EmbeddingVector(tuple(float(v) for v in arr))


def script_from_dict(data: dict) -> ScriptedBehavior:
    rules = tuple(
        ScriptRule(
            contains=r.get("contains"),
            pattern=r.get("pattern"),
            assistant_turns=r.get("assistant_turns"),
            min_assistant_turns=r.get("min_assistant_turns"),
            replies=tuple(r.get("replies", ())),
        )
        for r in data.get("rules", ())
    )
    return ScriptedBehavior(
        rules=rules,
        default_reply=data.get("default_reply"),
        embed_dim=int(data.get("embed_dim", 64)),
        embed_seed=int(data.get("embed_seed", 0)),
    )


def backend_from_dict(data: dict) -> BackendConfig:
    kind = BackendKind(data["kind"])
    script = script_from_dict(data["script"]) if data.get("script") else None
    return BackendConfig(
        kind=kind,
        model_id=data["model_id"],
        base_url=data.get("base_url", ""),
        api_key_env=data.get("api_key_env", ""),
        rate_limit=int(data.get("rate_limit", 0)),
        script=script,
        role=data.get("role"),
        timeout=float(data.get("timeout", 30.0)),
        max_retries=int(data.get("max_retries", 3)),
        backoff_base=float(data.get("backoff_base", 0.5)),
        backoff_cap=float(data.get("backoff_cap", 8.0)),
    )


def backends_from_dict(data: dict) -> Backends:
    return Backends(
        teacher=backend_from_dict(data["teacher"]),
        student=backend_from_dict(data["student"]),
        customer=backend_from_dict(data["customer"]),
        judge=backend_from_dict(data["judge"]),
        embedder=backend_from_dict(data["embedder"]),
    )
