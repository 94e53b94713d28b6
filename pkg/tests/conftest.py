"""Shared test fixtures: scripted backends, stub tool sessions, tiny banks."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pytest

from tacit.embeddings import Embedder, HashingEmbeddingBackend, ScriptedEmbeddingBackend
from tacit.gateway import (
    ModelGateway,
    ScriptedChatBackend,
    ScriptedReply,
    ToolCall,
)
from tacit.runtime import TaskInstance
from tacit.store.bank import ExperienceBank, KnowledgeOp
from tacit.tools.interpreter import KernelReply, StubKernelClient
from tacit.tools.registry import ImageRegistry, ToolSession
from tacit.tools.search import SearchHit, StubSearchProvider
from tacit.tools.visit import StubVisitProvider

TESTS_DIR = Path(__file__).parent
GOLDEN_DIR = TESTS_DIR / "golden"
CORPUS_DIR = TESTS_DIR / "data" / "skill_corpus"

# Nothing in the engine decodes image bytes, so a marker payload suffices.
TINY_PNG = b"\x89PNG\r\n\x1a\nnot-a-real-png"


def read_golden(name: str) -> str:
    """Golden file contents minus the file's own final newline."""
    text = (GOLDEN_DIR / name).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    return text


# ---------------------------------------------------------------------------
# Scripted model plumbing
# ---------------------------------------------------------------------------

def reply(
    text: str = "",
    tool: Optional[str] = None,
    args: Optional[dict] = None,
    tag: Optional[str] = None,
    contains: Optional[str] = None,
) -> ScriptedReply:
    calls = (ToolCall(name=tool, arguments=args or {}),) if tool else ()
    return ScriptedReply(text=text, tool_calls=calls, expect_tag=tag, expect_contains=contains)


def answer(text: str) -> ScriptedReply:
    return reply(f"<answer>{text}</answer>")


def make_gateway(
    exec_replies: Sequence[ScriptedReply] = (),
    kb_replies: Sequence[ScriptedReply] = (),
) -> ModelGateway:
    """Gateway over two scripted backends; retries never sleep for real."""
    return ModelGateway(
        exec_backend=ScriptedChatBackend(list(exec_replies)),
        kb_backend=ScriptedChatBackend(list(kb_replies)),
        sleeper=lambda _s: None,
    )


# ---------------------------------------------------------------------------
# Stub tool sessions
# ---------------------------------------------------------------------------

def make_session(
    hits: Optional[Sequence[SearchHit]] = None,
    pages: Optional[Dict[str, str]] = None,
    kernel_replies: Optional[Dict[str, KernelReply]] = None,
    max_images: int = 100,
    enabled: Optional[Sequence[str]] = None,
) -> ToolSession:
    search = StubSearchProvider(hits)
    return ToolSession(
        registry=ImageRegistry(max_images=max_images),
        search=search,
        image_search=search,
        visit=StubVisitProvider(pages),
        kernel=StubKernelClient(kernel_replies),
        enabled=enabled,
    )


def make_session_factory(**kwargs):
    return lambda: make_session(**kwargs)


# ---------------------------------------------------------------------------
# Knowledge fixtures
# ---------------------------------------------------------------------------

def make_bank(texts: Sequence[str], word_limit: int = 64) -> ExperienceBank:
    bank = ExperienceBank(word_limit=word_limit)
    for text in texts:
        bank.apply(KnowledgeOp(kind="add", text=text))
    return bank


def make_embedder(table: Optional[Dict[str, List[float]]] = None, dim: int = 8) -> Embedder:
    if table is None:
        return Embedder(HashingEmbeddingBackend(dim=dim))
    return Embedder(ScriptedEmbeddingBackend(table))


def make_task(
    task_id: str = "t1",
    query: str = "What is shown?",
    ground_truth: str = "a cat",
    images: Sequence[bytes] = (),
    category: str = "general",
) -> TaskInstance:
    return TaskInstance(
        task_id=task_id,
        query=query,
        images=tuple(images),
        ground_truth=ground_truth,
        category=category,
    )


# Valid skill fragments for scripted completions that must parse.
FRAGMENT_ONE = """---
name: CountingBasics
description: Count objects by quadrant
version: 1.0.0
---

## Approach

Split the image into quadrants and count each one separately.
"""

FRAGMENT_TWO = """---
name: CountingBasics
description: Count objects by quadrant
version: 1.0.0
---

## Verification

Re-count the densest quadrant at higher zoom before answering.
"""

MERGED_SKILL = """---
name: CountingBasics
description: Count objects by quadrant
version: 1.0.0
---

## Approach

Split the image into quadrants and count each one separately.

## Verification

Re-count the densest quadrant at higher zoom before answering.
"""


@pytest.fixture
def bank3() -> ExperienceBank:
    return make_bank(
        [
            "Zoom into dense regions before counting small objects.",
            "Verify axis direction before reading any chart value.",
            "Cross-check totals by recomputing from raw line items.",
        ]
    )
