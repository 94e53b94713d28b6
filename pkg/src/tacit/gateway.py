"""Model access behind two named roles.

"exec" is the tool-using agent model; "kb" is the model that writes and
reshapes knowledge (summaries, critiques, merges, adaptation).  Keeping
them behind one gateway makes the role split auditable: every call is
recorded with its role, tag and sampling params.

Backends are pluggable.  The scripted backend replays a fixed list of
replies and fails hard when the script runs dry or a reply's
expectation does not match the request -- silent repetition would mask
test bugs.
"""

from __future__ import annotations

import json
import base64
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import httpx

from tacit.errors import (
    BackendUnavailableError,
    ScriptExhaustedError,
    ScriptMismatchError,
)

logger = logging.getLogger(__name__)

EXEC_ROLE = "exec"
KB_ROLE = "kb"


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.6
    top_p: float = 1.0
    max_tokens: int = 8192


@dataclass(frozen=True)
class ImageAttachment:
    name: str
    data: bytes
    mime: str = "image/png"


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    content: str
    images: Tuple[ImageAttachment, ...] = ()


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Dict[str, object]
    call_id: str = ""


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class Completion:
    text: str
    tool_calls: Tuple[ToolCall, ...] = ()
    usage: TokenUsage = TokenUsage()


class ChatBackend(Protocol):
    supports_images: bool

    def complete(
        self,
        messages: Sequence[Message],
        params: GenerationParams,
        tools: Optional[Sequence[dict]] = None,
        tag: Optional[str] = None,
    ) -> Completion:
        ...


# ---------------------------------------------------------------------------
# Deterministic backends for offline runs and tests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptedReply:
    """One canned completion, optionally guarded by expectations."""

    text: str = ""
    tool_calls: Tuple[ToolCall, ...] = ()
    expect_tag: Optional[str] = None
    expect_contains: Optional[str] = None


class ScriptedChatBackend:
    """Replays replies strictly in order. Thread-safe."""

    supports_images = False

    def __init__(self, replies: Sequence[ScriptedReply]):
        self._replies = list(replies)
        self._cursor = 0
        self._lock = threading.Lock()
        self.calls: List[Tuple[Optional[str], Tuple[Message, ...]]] = []

    def complete(
        self,
        messages: Sequence[Message],
        params: GenerationParams,
        tools: Optional[Sequence[dict]] = None,
        tag: Optional[str] = None,
    ) -> Completion:
        with self._lock:
            if self._cursor >= len(self._replies):
                raise ScriptExhaustedError(
                    f"script exhausted after {len(self._replies)} replies (tag={tag!r})"
                )
            reply = self._replies[self._cursor]
            self._cursor += 1
            self.calls.append((tag, tuple(messages)))
        if reply.expect_tag is not None and reply.expect_tag != tag:
            raise ScriptMismatchError(
                f"reply {self._cursor} expected tag {reply.expect_tag!r}, got {tag!r}"
            )
        if reply.expect_contains is not None:
            blob = "\n".join(m.content for m in messages)
            if reply.expect_contains not in blob:
                raise ScriptMismatchError(
                    f"reply {self._cursor} expected request to contain "
                    f"{reply.expect_contains!r}"
                )
        return Completion(text=reply.text, tool_calls=reply.tool_calls)

    @property
    def remaining(self) -> int:
        return len(self._replies) - self._cursor


class FunctionChatBackend:
    """Computes each reply from the request; for property-style tests."""

    supports_images = False

    def __init__(
        self,
        fn: Callable[[Sequence[Message], GenerationParams, Optional[str]], Union[str, Completion]],
    ):
        self._fn = fn

    def complete(self, messages, params, tools=None, tag=None) -> Completion:
        out = self._fn(messages, params, tag)
        if isinstance(out, Completion):
            return out
        return Completion(text=out)


# ---------------------------------------------------------------------------
# OpenAI-compatible HTTP backend
# ---------------------------------------------------------------------------

class HttpChatBackend:
    """Chat-completions endpoint speaking the OpenAI wire format."""

    def __init__(
        self,
        model: str,
        base_url: str,
        api_key: Optional[str] = None,
        supports_images: bool = True,
        client: Optional[httpx.Client] = None,
        timeout_s: float = 300.0,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.supports_images = supports_images
        self._client = client or httpx.Client(timeout=timeout_s)

    @staticmethod
    def _encode_message(message: Message) -> dict:
        if not message.images:
            return {"role": message.role, "content": message.content}
        content: List[dict] = [{"type": "text", "text": message.content}]
        for image in message.images:
            b64 = base64.b64encode(image.data).decode("ascii")
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:{image.mime};base64,{b64}"}}
            )
        return {"role": message.role, "content": content}

    def complete(self, messages, params, tools=None, tag=None) -> Completion:
        payload: Dict[str, object] = {
            "model": self.model,
            "messages": [self._encode_message(m) for m in messages],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        if tools:
            payload["tools"] = list(tools)
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions", json=payload, headers=headers
            )
            resp.raise_for_status()
            body = resp.json()
            choice = body["choices"][0]["message"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailableError(f"chat backend failed: {exc}") from exc

        calls: List[ToolCall] = []
        for raw in choice.get("tool_calls") or []:
            fn = raw.get("function", {})
            try:
                arguments = json.loads(fn.get("arguments") or "{}")
            except json.JSONDecodeError:
                arguments = {"_raw": fn.get("arguments")}
            calls.append(
                ToolCall(name=fn.get("name", ""), arguments=arguments, call_id=raw.get("id", ""))
            )
        usage_obj = body.get("usage") or {}
        usage = TokenUsage(
            prompt_tokens=int(usage_obj.get("prompt_tokens", 0)),
            completion_tokens=int(usage_obj.get("completion_tokens", 0)),
        )
        return Completion(text=choice.get("content") or "", tool_calls=tuple(calls), usage=usage)


# ---------------------------------------------------------------------------
# The gateway
# ---------------------------------------------------------------------------

@dataclass
class UsageRecord:
    role: str
    tag: Optional[str]
    params: GenerationParams
    usage: TokenUsage
    attempts: int


class ModelGateway:
    """Routes completions to the backend bound to each role, with retries."""

    def __init__(
        self,
        exec_backend: ChatBackend,
        kb_backend: ChatBackend,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self._backends: Dict[str, ChatBackend] = {EXEC_ROLE: exec_backend, KB_ROLE: kb_backend}
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleeper
        self.usage_records: List[UsageRecord] = []
        self._lock = threading.Lock()

    def backend_for(self, role: str) -> ChatBackend:
        if role not in self._backends:
            raise ValueError(f"unknown model role: {role!r}")
        return self._backends[role]

    @staticmethod
    def _strip_images(messages: Sequence[Message]) -> List[Message]:
        stripped: List[Message] = []
        for m in messages:
            if not m.images:
                stripped.append(m)
                continue
            placeholder = "\n".join("[image omitted]" for _ in m.images)
            stripped.append(Message(role=m.role, content=f"{m.content}\n{placeholder}"))
        return stripped

    def complete(
        self,
        role: str,
        messages: Sequence[Message],
        params: GenerationParams,
        tools: Optional[Sequence[dict]] = None,
        tag: Optional[str] = None,
    ) -> Completion:
        backend = self.backend_for(role)
        request = list(messages)
        if any(m.images for m in request) and not backend.supports_images:
            n = sum(len(m.images) for m in request)
            logger.warning(
                "role %s backend does not accept images; replacing %d attachment(s) "
                "with '[image omitted]' (tag=%s)", role, n, tag,
            )
            request = self._strip_images(request)

        delay = self.backoff_s
        last_error: Optional[Exception] = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                completion = backend.complete(request, params, tools=tools, tag=tag)
            except BackendUnavailableError as exc:
                last_error = exc
                logger.warning("role %s attempt %d/%d failed: %s", role, attempt, self.max_attempts, exc)
                if attempt < self.max_attempts:
                    self._sleep(delay)
                    delay *= 2
                continue
            with self._lock:
                self.usage_records.append(
                    UsageRecord(role=role, tag=tag, params=params, usage=completion.usage, attempts=attempt)
                )
            return completion
        raise BackendUnavailableError(
            f"role {role} backend failed after {self.max_attempts} attempts: {last_error}"
        )

    def total_usage(self, role: Optional[str] = None) -> TokenUsage:
        total = TokenUsage()
        for record in self.usage_records:
            if role is None or record.role == role:
                total = total + record.usage
        return total
