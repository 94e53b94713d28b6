"""Text embeddings: pluggable backends plus a content-addressed cache.

A vector is a plain tuple of floats.  The same (backend, model, text)
triple always maps to the same vector, which is what makes accumulation
runs reproducible; the cache key is a hash over exactly that triple.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
import threading
import time
import unicodedata
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import httpx

from tacit.errors import (
    BackendUnavailableError,
    DimensionMismatchError,
    EmptyTextError,
    ScriptMismatchError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

EmbeddingVector = Tuple[float, ...]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity a.b / (|a| |b|).

    Raises DimensionMismatchError on unequal lengths and ZeroVectorError
    when either argument has zero magnitude.
    """
    if len(a) != len(b):
        raise DimensionMismatchError(f"dim {len(a)} vs {len(b)}")
    dot = math.fsum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(math.fsum(x * x for x in a))
    norm_b = math.sqrt(math.fsum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine undefined for a zero-magnitude vector")
    return dot / (norm_a * norm_b)


class EmbeddingBackend(Protocol):
    backend_id: str
    model_id: str

    def embed_texts(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        ...


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class HashingEmbeddingBackend:
    """Deterministic local backend: hash the text into a unit vector.

    Carries no semantics, but it is stable across processes and platforms,
    which is all the offline pipelines and tests need.
    """

    backend_id = "hashing"

    def __init__(self, dim: int = 32, model_id: str = "hashing-v1"):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        self.dim = dim
        self.model_id = model_id

    def _vector(self, text: str) -> EmbeddingVector:
        values: List[float] = []
        counter = 0
        seed = f"{self.model_id}\x00{text}".encode("utf-8")
        while len(values) < self.dim:
            digest = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
            for i in range(0, len(digest) - 7, 8):
                (word,) = struct.unpack_from(">Q", digest, i)
                values.append(word / float(2**63) - 1.0)  # [-1, 1)
                if len(values) == self.dim:
                    break
            counter += 1
        norm = math.sqrt(math.fsum(v * v for v in values)) or 1.0
        return tuple(v / norm for v in values)

    def embed_texts(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        return [self._vector(t) for t in texts]


class ScriptedEmbeddingBackend:
    """Backend driven by a fixed mapping or function; for tests.

    An unmapped text is a scripting bug, so it raises instead of guessing.
    """

    backend_id = "scripted"

    def __init__(
        self,
        table: Union[Mapping[str, Sequence[float]], Callable[[str], Sequence[float]]],
        model_id: str = "scripted-v1",
    ):
        self._table = table
        self.model_id = model_id

    def embed_texts(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        out: List[EmbeddingVector] = []
        for text in texts:
            if callable(self._table):
                vec = self._table(text)
            else:
                if text not in self._table:
                    raise ScriptMismatchError(f"no scripted embedding for text: {text[:80]!r}")
                vec = self._table[text]
            out.append(tuple(float(v) for v in vec))
        return out


class HttpEmbeddingBackend:
    """OpenAI-compatible /embeddings endpoint."""

    backend_id = "http"

    def __init__(
        self,
        model_id: str,
        base_url: str,
        api_key: Optional[str] = None,
        client: Optional[httpx.Client] = None,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
    ):
        self.model_id = model_id
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=60.0)
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s

    def embed_texts(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model_id, "input": list(texts)}
        delay = self.backoff_s
        last_error: Optional[Exception] = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._client.post(
                    f"{self.base_url}/embeddings", json=payload, headers=headers
                )
                resp.raise_for_status()
                data = resp.json()["data"]
                return [tuple(float(v) for v in item["embedding"]) for item in data]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                logger.warning("embedding attempt %d/%d failed: %s", attempt, self.max_attempts, exc)
                if attempt < self.max_attempts:
                    time.sleep(delay)
                    delay *= 2
        raise BackendUnavailableError(f"embedding backend failed: {last_error}")


# ---------------------------------------------------------------------------
# Cache + front door
# ---------------------------------------------------------------------------

def _cache_key(backend_id: str, model_id: str, text: str) -> str:
    normalized = unicodedata.normalize("NFC", text)
    blob = f"{backend_id}\x00{model_id}\x00{normalized}".encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class EmbeddingCache:
    """In-memory map from content hash to vector. Thread-safe."""

    _store: Dict[str, EmbeddingVector] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[EmbeddingVector]:
        with self._lock:
            vec = self._store.get(key)
            if vec is None:
                self.misses += 1
            else:
                self.hits += 1
            return vec

    def put(self, key: str, vector: EmbeddingVector) -> None:
        with self._lock:
            self._store[key] = vector

    def __len__(self) -> int:
        return len(self._store)


class Embedder:
    """Backend plus cache; the only embedding entry point the rest uses."""

    def __init__(self, backend: EmbeddingBackend, cache: Optional[EmbeddingCache] = None):
        self.backend = backend
        self.cache = cache if cache is not None else EmbeddingCache()

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise EmptyTextError("cannot embed empty text")
        key = _cache_key(self.backend.backend_id, self.backend.model_id, text)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        vector = self.backend.embed_texts([text])[0]
        self.cache.put(key, vector)
        return vector

    def embed_many(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        return [self.embed(t) for t in texts]
