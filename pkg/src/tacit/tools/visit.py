"""Webpage visiting: fetch a URL and extract readable text.

Extraction is deliberately plain: strip markup with the stdlib HTML
parser, drop script/style content, collapse whitespace into paragraphs.
If a goal string is given, paragraphs mentioning its terms are moved to
the front before truncation, so the relevant part survives the cap.
"""

from __future__ import annotations

import logging
from html.parser import HTMLParser
from typing import Callable, List, Mapping, Optional, Protocol, Union

import httpx

logger = logging.getLogger(__name__)

# Upper bound on extracted page text handed back to the agent.
EXTRACT_CHAR_CAP = 8000

_SKIP_TAGS = {"script", "style", "noscript", "head", "template", "svg"}
_BLOCK_TAGS = {"p", "div", "section", "article", "li", "br", "tr", "h1", "h2", "h3", "h4",
               "h5", "h6", "blockquote", "pre", "td", "th"}


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._chunks: List[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
        elif tag in _BLOCK_TAGS:
            self._chunks.append("\n")

    def handle_endtag(self, tag: str) -> None:
        if tag in _SKIP_TAGS and self._skip_depth > 0:
            self._skip_depth -= 1
        elif tag in _BLOCK_TAGS:
            self._chunks.append("\n")

    def handle_data(self, data: str) -> None:
        if self._skip_depth == 0 and data.strip():
            self._chunks.append(data)

    def paragraphs(self) -> List[str]:
        text = "".join(self._chunks)
        out = []
        for raw in text.split("\n"):
            cleaned = " ".join(raw.split())
            if cleaned:
                out.append(cleaned)
        return out


def extract_text(html: str, goal: str = "", char_cap: int = EXTRACT_CHAR_CAP) -> str:
    parser = _TextExtractor()
    parser.feed(html)
    paragraphs = parser.paragraphs()
    if not paragraphs:
        return ""
    if goal.strip():
        terms = [t for t in goal.casefold().split() if len(t) > 2]
        if terms:
            hits = [p for p in paragraphs if any(t in p.casefold() for t in terms)]
            rest = [p for p in paragraphs if p not in hits]
            paragraphs = hits + rest
    text = "\n\n".join(paragraphs)
    if len(text) > char_cap:
        text = text[:char_cap] + "\n...[truncated]"
    return text


class VisitProvider(Protocol):
    def fetch(self, url: str) -> str:
        """Return raw HTML (or plain text) for the URL."""
        ...


class HttpVisitProvider:
    def __init__(self, client: Optional[httpx.Client] = None, timeout_s: float = 30.0):
        self._client = client or httpx.Client(
            timeout=timeout_s,
            follow_redirects=True,
            headers={"User-Agent": "Mozilla/5.0 (compatible; research-agent)"},
        )

    def fetch(self, url: str) -> str:
        resp = self._client.get(url)
        resp.raise_for_status()
        return resp.text


class StubVisitProvider:
    """Serves canned HTML by URL; unknown URLs get a fixed placeholder page."""

    def __init__(self, pages: Union[Mapping[str, str], Callable[[str], str], None] = None):
        self._pages = pages or {}
        self.visits: List[str] = []

    def fetch(self, url: str) -> str:
        self.visits.append(url)
        if callable(self._pages):
            return self._pages(url)
        return self._pages.get(url, f"<html><body><p>Stub page for {url}</p></body></html>")
