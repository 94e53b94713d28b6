"""Web and image search behind small provider interfaces.

The agent-facing text format is fixed here; where the hits come from is
a provider detail.  Stub providers return canned hits for offline runs.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Sequence, Union

import httpx

logger = logging.getLogger(__name__)

DEFAULT_MAX_RESULTS = 10


@dataclass(frozen=True)
class SearchHit:
    title: str
    url: str
    snippet: str = ""


def format_hits(hits: Sequence[SearchHit]) -> str:
    if not hits:
        return "No results found."
    lines: List[str] = []
    for i, hit in enumerate(hits, start=1):
        lines.append(f"{i}. {hit.title}")
        lines.append(f"   URL: {hit.url}")
        if hit.snippet:
            lines.append(f"   {hit.snippet}")
    return "\n".join(lines)


class SearchProvider(Protocol):
    def search(self, query: str, max_results: int) -> List[SearchHit]:
        ...


class ImageSearchProvider(Protocol):
    def text_search(self, query: str, max_results: int) -> List[SearchHit]:
        ...

    def reverse_search(self, image: Union[str, bytes], max_results: int) -> List[SearchHit]:
        """image is a URL string or raw image bytes resolved from a registry name."""
        ...


# ---------------------------------------------------------------------------
# Stubs for tests and offline pipelines
# ---------------------------------------------------------------------------

class StubSearchProvider:
    """Returns canned hits; optionally a function of the query."""

    def __init__(
        self,
        hits: Union[Sequence[SearchHit], Callable[[str], Sequence[SearchHit]], None] = None,
    ):
        self._hits = hits
        self.queries: List[str] = []

    def _resolve(self, query: str) -> List[SearchHit]:
        if self._hits is None:
            return [SearchHit(title=f"Stub result for {query}", url="https://example.com/stub",
                              snippet="Deterministic placeholder hit.")]
        if callable(self._hits):
            return list(self._hits(query))
        return list(self._hits)

    def search(self, query: str, max_results: int) -> List[SearchHit]:
        self.queries.append(query)
        return self._resolve(query)[:max_results]

    # the same canned data serves for image search in both modes
    def text_search(self, query: str, max_results: int) -> List[SearchHit]:
        return self.search(query, max_results)

    def reverse_search(self, image: Union[str, bytes], max_results: int) -> List[SearchHit]:
        label = image if isinstance(image, str) else f"<{len(image)} bytes>"
        self.queries.append(f"reverse:{label}")
        return self._resolve(str(label))[:max_results]


# ---------------------------------------------------------------------------
# HTTP provider: a generic JSON search endpoint
# ---------------------------------------------------------------------------

class HttpSearchProvider:
    """Calls a JSON search API.

    Expected response shape: {"results": [{"title", "url", "snippet"}, ...]}.
    The endpoint and key are configuration; anything matching that shape
    (a thin proxy over a commercial search API, usually) will do.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: Optional[str] = None,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = os.environ.get(api_key_env, "") if api_key_env else ""
        self._client = client or httpx.Client(timeout=30.0)

    def _call(self, params: dict, max_results: int) -> List[SearchHit]:
        if self.api_key:
            params = {**params, "api_key": self.api_key}
        resp = self._client.get(f"{self.base_url}/search", params=params)
        resp.raise_for_status()
        results = resp.json().get("results", [])
        hits = [
            SearchHit(
                title=str(r.get("title", "")),
                url=str(r.get("url", "")),
                snippet=str(r.get("snippet", "")),
            )
            for r in results
        ]
        return hits[:max_results]

    def search(self, query: str, max_results: int) -> List[SearchHit]:
        return self._call({"q": query, "type": "web"}, max_results)

    def text_search(self, query: str, max_results: int) -> List[SearchHit]:
        return self._call({"q": query, "type": "image"}, max_results)

    def reverse_search(self, image: Union[str, bytes], max_results: int) -> List[SearchHit]:
        if isinstance(image, bytes):
            # the generic endpoint takes URLs only; callers upload elsewhere first
            raise ValueError("HTTP reverse search requires an image URL, not raw bytes")
        return self._call({"image_url": image, "type": "reverse"}, max_results)
