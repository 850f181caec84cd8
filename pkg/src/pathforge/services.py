"""External-service boundary: embeddings and role-tagged LLM clients.

Everything that would talk to a hosted model goes through this module.  In
mock mode every call is a pure function of ``(role, prompt)`` so whole
pipelines run offline and reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedReply,
    RequestTimeout,
    TransportError,
    ValidationError,
    ZeroVector,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "PATHFORGE_API_KEY"
MOCK_DIM = 64
ATTEMPTS = 3
BACKOFF = (0.5, 1.0, 2.0)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector sizes differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    c = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, c))


def _embed_key(text: str) -> str:
    return " ".join(text.lower().split())


def _token_slot(token: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
    return h % dim, (1.0 if (h >> 32) & 1 else -1.0)


class MockEmbedder:
    """Deterministic hashed bag-of-tokens embedder.

    Texts listed in ``overrides`` (matched case- and whitespace-insensitively)
    get their scripted vector instead, which is how tests pin exact cosines
    between synonym pairs.
    """

    def __init__(self, overrides: Mapping[str, Sequence[float]] | None = None, dim: int = MOCK_DIM):
        if dim <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dim
        self._overrides: dict[str, np.ndarray] = {}
        for text, vec in (overrides or {}).items():
            arr = np.asarray(vec, dtype=float)
            if arr.shape != (dim,):
                raise DimensionMismatch(f"override for {text!r} has shape {arr.shape}, want ({dim},)")
            self._overrides[_embed_key(text)] = arr / np.linalg.norm(arr)

    @classmethod
    def scripted(cls, pairs: Mapping[tuple[str, str], float], dim: int = MOCK_DIM) -> "MockEmbedder":
        """Build an embedder where each listed pair has exactly the given cosine.

        Every pair gets its own two reserved axes counted down from the top of
        the vector, so pairs never interfere with each other.
        """
        overrides: dict[str, np.ndarray] = {}
        for i, ((t1, t2), cos) in enumerate(pairs.items()):
            if not -1.0 <= cos <= 1.0:
                raise ValueError(f"cosine {cos} out of range")
            a, b = dim - 1 - 2 * i, dim - 2 - 2 * i
            if b < 0:
                raise ValueError("too many scripted pairs for this dimension")
            u = np.zeros(dim)
            u[a] = 1.0
            v = np.zeros(dim)
            v[a] = cos
            v[b] = math.sqrt(max(0.0, 1.0 - cos * cos))
            for t, vec in ((t1, u), (t2, v)):
                k = _embed_key(t)
                if k in overrides:
                    raise ValueError(f"{t!r} appears in more than one scripted pair")
                overrides[k] = vec
        return cls(overrides, dim=dim)

    def embed(self, text: str) -> np.ndarray:
        key = _embed_key(text)
        if key in self._overrides:
            return self._overrides[key].copy()
        vec = np.zeros(self.dimension)
        for tok in re.findall(r"[a-z0-9]+", key):
            idx, sign = _token_slot(tok, self.dimension)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # no tokens, or colliding tokens cancelled out
            idx, sign = _token_slot("\x00" + key, self.dimension)
            vec[idx] = sign
            norm = 1.0
        return vec / norm


# Synonym pairs shipped with the offline embedder.
DEFAULT_SYNONYMS: dict[tuple[str, str], float] = {
    ("nuclear atypia", "atypical nuclei"): 0.90,
    ("invading", "invasion"): 0.91,
    ("squamous carcinoma", "squamous cell carcinoma"): 0.93,
}

_default_embedder: MockEmbedder | None = None


def default_embedder() -> MockEmbedder:
    global _default_embedder
    if _default_embedder is None:
        _default_embedder = MockEmbedder.scripted(DEFAULT_SYNONYMS)
    return _default_embedder


def mock_embed(text: str) -> np.ndarray:
    return default_embedder().embed(text)


def embed_all(embedder: EmbeddingProvider, texts: Iterable[str]) -> dict[str, np.ndarray]:
    """Embed ``texts`` and insist on one consistent dimension."""
    out: dict[str, np.ndarray] = {}
    dim = None
    for t in texts:
        if t in out:
            continue
        v = np.asarray(embedder.embed(t), dtype=float)
        if dim is None:
            dim = v.shape
        elif v.shape != dim:
            raise DimensionMismatch(f"embedder returned {v.shape} for {t!r}, expected {dim}")
        out[t] = v
    return out


# ---------------------------------------------------------------------------
# LLM clients
# ---------------------------------------------------------------------------


class Role(str, Enum):
    EXTRACTOR = "extractor"
    GENERATOR = "generator"
    JUDGE = "judge"


Transport = Callable[[str, bytes, Mapping[str, str], float], bytes]


def _urllib_post(url: str, body: bytes, headers: Mapping[str, str], timeout: float) -> bytes:
    req = urllib.request.Request(url, data=body, headers=dict(headers), method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


@dataclass
class LlmClient:
    role: Role
    endpoint: str = ""
    model_name: str = "mock"
    timeout: float = 30.0
    max_inflight: int = 4
    mock: bool = False
    fixtures: dict[str, str] = field(default_factory=dict)
    transport: Transport | None = None
    sleep: Callable[[float], None] = time.sleep
    _slots: threading.BoundedSemaphore = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.role = Role(self.role)
        if self.max_inflight < 1:
            raise ValidationError("max_inflight must be >= 1")
        if not self.mock and not self.endpoint:
            raise ValidationError(f"{self.role.value} client needs an endpoint unless running in mock mode")
        self._slots = threading.BoundedSemaphore(self.max_inflight)

    @classmethod
    def mocked(cls, role: Role | str, **kw) -> "LlmClient":
        return cls(role=Role(role), mock=True, **kw)


def prompt_key(prompt: str) -> str:
    """Stable fixture key for a prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


MockRule = Callable[[str], str]
_MOCK_RULES: dict[Role, list[tuple[str, MockRule]]] = {r: [] for r in Role}


def register_mock_rule(role: Role, marker: str, rule: MockRule) -> None:
    """Route mock prompts containing ``marker`` for ``role`` to ``rule``.

    Later registrations with the same marker replace earlier ones.
    """
    rules = _MOCK_RULES[Role(role)]
    rules[:] = [(m, r) for m, r in rules if m != marker]
    rules.append((marker, rule))


def _mock_reply(client: LlmClient, prompt: str) -> str:
    fixed = client.fixtures.get(prompt_key(prompt))
    if fixed is not None:
        return fixed
    for marker, rule in _MOCK_RULES[client.role]:
        if marker in prompt:
            return rule(prompt)
    if client.role is Role.EXTRACTOR:
        return json.dumps({"extracted_entities": []})
    raise MalformedReply(f"no mock {client.role.value} rule matches this prompt")


def _live_reply(client: LlmClient, prompt: str) -> str:
    body = json.dumps({"model": client.model_name, "role": client.role.value, "prompt": prompt}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    send = client.transport or _urllib_post

    timed_out = False
    last: Exception | None = None
    for attempt in range(ATTEMPTS):
        try:
            raw = send(client.endpoint, body, headers, client.timeout)
            break
        except (socket.timeout, TimeoutError) as exc:
            timed_out, last = True, exc
        except (urllib.error.URLError, OSError) as exc:
            if isinstance(getattr(exc, "reason", None), (socket.timeout, TimeoutError)):
                timed_out = True
            else:
                timed_out = False
            last = exc
        log.warning("%s request attempt %d/%d failed: %s", client.role.value, attempt + 1, ATTEMPTS, last)
        if attempt + 1 < ATTEMPTS:
            client.sleep(BACKOFF[min(attempt, len(BACKOFF) - 1)])
    else:
        if timed_out:
            raise RequestTimeout(f"{client.endpoint} timed out after {ATTEMPTS} attempts") from last
        raise TransportError(f"{client.endpoint} unreachable after {ATTEMPTS} attempts: {last}") from last

    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedReply(f"reply is not JSON: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
        raise MalformedReply("reply JSON lacks a string 'text' field")
    return payload["text"]


def llm_request(client: LlmClient, prompt: str) -> str:
    """Send ``prompt`` to ``client`` and return the reply text."""
    if not prompt or not prompt.strip():
        raise ValidationError("prompt must be non-empty")
    with client._slots:
        if client.mock:
            return _mock_reply(client, prompt)
        return _live_reply(client, prompt)
