"""Exhaustive similarity search over the experience bank.

Banks are capped at ~120 entries, so retrieval scores every stored
vector against the query -- no approximate index, no surprises.  Ties on
score break toward the smaller numeric id so results are reproducible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from tacit.embeddings import Embedder, EmbeddingVector, cosine
from tacit.errors import DimensionMismatchError, SchemaError, StoreIoError
from tacit.store.bank import ExperienceBank, numeric_suffix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredMatch:
    entry_id: str
    score: float


def _ranked(matches: Iterable[ScoredMatch]) -> List[ScoredMatch]:
    return sorted(matches, key=lambda m: (-m.score, numeric_suffix(m.entry_id)))


class BankIndex:
    """id -> embedding vector for every entry in a bank."""

    def __init__(self, dim: Optional[int] = None):
        self._vectors: Dict[str, EmbeddingVector] = {}
        self.dim = dim

    # -- construction -------------------------------------------------------

    @classmethod
    def from_vectors(cls, vectors: Dict[str, Sequence[float]]) -> "BankIndex":
        index = cls()
        for entry_id, vec in vectors.items():
            index.put(entry_id, tuple(float(v) for v in vec))
        return index

    @classmethod
    def build(cls, bank: ExperienceBank, embedder: Embedder) -> "BankIndex":
        index = cls()
        for entry in bank.entries():
            index.put(entry.id, embedder.embed(entry.text))
        return index

    # -- mutation ------------------------------------------------------------

    def put(self, entry_id: str, vector: EmbeddingVector) -> None:
        if self.dim is None:
            self.dim = len(vector)
        elif len(vector) != self.dim:
            raise DimensionMismatchError(
                f"index dim {self.dim}, vector dim {len(vector)} for {entry_id}"
            )
        self._vectors[entry_id] = tuple(vector)

    def discard(self, entry_id: str) -> None:
        self._vectors.pop(entry_id, None)

    # -- views ----------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._vectors

    def ids(self) -> List[str]:
        return sorted(self._vectors, key=numeric_suffix)

    def vector(self, entry_id: str) -> EmbeddingVector:
        return self._vectors[entry_id]

    def items(self):
        return self._vectors.items()

    # -- search -----------------------------------------------------------------

    def scores(self, query: EmbeddingVector) -> List[ScoredMatch]:
        """Cosine of the query against every stored vector, ranked."""
        return _ranked(
            ScoredMatch(entry_id, cosine(query, vec)) for entry_id, vec in self._vectors.items()
        )

    def top_k(self, query: EmbeddingVector, k: int, tau_min: float = 0.0) -> List[ScoredMatch]:
        """Up to k best matches scoring strictly above tau_min."""
        if k <= 0:
            return []
        kept = [m for m in self.scores(query) if m.score > tau_min]
        return kept[:k]

    def union_retrieve(
        self, queries: Sequence[EmbeddingVector], k: int, tau_min: float = 0.0
    ) -> List[ScoredMatch]:
        """Union of per-query top_k results; each id keeps its best score."""
        best: Dict[str, float] = {}
        for query in queries:
            for match in self.top_k(query, k, tau_min):
                prev = best.get(match.entry_id)
                if prev is None or match.score > prev:
                    best[match.entry_id] = match.score
        return _ranked(ScoredMatch(i, s) for i, s in best.items())


# ---------------------------------------------------------------------------
# Sidecar persistence: vectors live next to experiences.json, keyed by id.
# ---------------------------------------------------------------------------

def save_vectors(index: BankIndex, path: Union[str, Path]) -> None:
    path = Path(path)
    payload = {
        "dim": index.dim,
        "vectors": {entry_id: list(index.vector(entry_id)) for entry_id in index.ids()},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot write {path}: {exc}") from exc


def load_vectors(path: Union[str, Path]) -> BankIndex:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc}") from exc
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "vectors" not in payload:
        raise SchemaError(f"{path}: expected an object with a 'vectors' field")
    index = BankIndex(dim=payload.get("dim"))
    for entry_id, vec in payload["vectors"].items():
        index.put(entry_id, tuple(float(v) for v in vec))
    return index
