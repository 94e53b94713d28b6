"""Tool declarations, the per-rollout image registry, and dispatch.

dispatch() is total: whatever the model sends, the session answers with
a ToolResult.  Errors carry exactly one class out of {syntax, runtime,
tool_name, transport} so downstream statistics partition cleanly.
"""

from __future__ import annotations

import base64
import binascii
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import httpx

from tacit.errors import UnknownImageRefError
from tacit.gateway import ImageAttachment, ToolCall
from tacit.tools.interpreter import KernelClient, KernelTransportError
from tacit.tools.search import (
    DEFAULT_MAX_RESULTS,
    ImageSearchProvider,
    SearchProvider,
    format_hits,
)
from tacit.tools.visit import VisitProvider, extract_text

logger = logging.getLogger(__name__)

ERROR_CLASSES = ("syntax", "runtime", "tool_name", "transport")

TOOL_ORDER = ("web_search", "image_search", "visit", "code_interpreter")

# Function-calling declarations, handed to the model verbatim.
TOOL_DECLARATIONS: Dict[str, dict] = {
    "web_search": {
        "type": "function",
        "function": {
            "name": "web_search",
            "description": (
                "Search the web for information online. Returns web search results "
                "with titles, URLs, and text snippets."
            ),
            "parameters": {
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "Search query string."},
                    "max_results": {
                        "type": "integer",
                        "description": "Maximum number of results.",
                        "default": 10,
                    },
                },
                "required": ["query"],
            },
        },
    },
    "image_search": {
        "type": "function",
        "function": {
            "name": "image_search",
            "description": (
                "Search for related images using text query or reverse image search. "
                "Supports two modes: (1) text search with search_type='text'; "
                "(2) reverse image search with search_type='reverse'."
            ),
            "parameters": {
                "type": "object",
                "properties": {
                    "search_type": {
                        "type": "string",
                        "description": "Either 'text' or 'reverse'.",
                        "enum": ["text", "reverse"],
                        "default": "text",
                    },
                    "query": {"type": "string", "description": "Search query for text mode."},
                    "image_url": {
                        "type": "string",
                        "description": (
                            "Image reference for reverse mode. Supports 'original_image', "
                            "'tool_image_N', or image URLs."
                        ),
                    },
                    "max_results": {
                        "type": "integer",
                        "description": "Maximum results.",
                        "default": 10,
                    },
                },
                "required": [],
            },
        },
    },
    "visit": {
        "type": "function",
        "function": {
            "name": "visit",
            "description": (
                "Visit a webpage and extract its main textual content. Typically used "
                "after obtaining URLs from search results."
            ),
            "parameters": {
                "type": "object",
                "properties": {
                    "url": {
                        "type": "string",
                        "description": "Full URL starting with 'http://' or 'https://'.",
                    },
                    "goal": {
                        "type": "string",
                        "description": "Information to find on the page (helps focus extraction).",
                    },
                },
                "required": ["url"],
            },
        },
    },
    "code_interpreter": {
        "type": "function",
        "function": {
            "name": "code_interpreter",
            "description": (
                "Executes Python code in a stateful Jupyter kernel. Supports image "
                "processing (PIL, OpenCV), calculations, and data manipulation. "
                "Pre-loaded image variables: original_image, tool_image_N. "
                "Pre-installed packages: PIL, NumPy, OpenCV, Matplotlib, SciPy, "
                "Scikit-learn, Pandas, SymPy. Code execution is persistent across "
                "calls. Use plt.show() or save images to display outputs."
            ),
            "parameters": {
                "type": "object",
                "properties": {
                    "code": {"type": "string", "description": "Python code to execute."},
                },
                "required": ["code"],
            },
        },
    },
}


@dataclass(frozen=True)
class ToolResult:
    status: str  # "ok" | "error"
    text_body: str
    images: Tuple[Tuple[str, bytes], ...] = ()  # (registered name, raw bytes)
    error_class: Optional[str] = None

    def __post_init__(self):
        if self.status == "error" and self.error_class not in ERROR_CLASSES:
            raise ValueError(f"error result needs a class from {ERROR_CLASSES}")
        if self.status == "ok" and self.error_class is not None:
            raise ValueError("ok result must not carry an error class")


def error_result(error_class: str, text: str) -> ToolResult:
    return ToolResult(status="error", text_body=text, error_class=error_class)


class ImageRegistry:
    """Names every image a rollout sees.

    Input images become original_image (then original_image_2, ...);
    images produced by code execution become tool_image_1, tool_image_2,
    ... with no gaps.  Numbering restarts with each new registry, i.e.
    each rollout.
    """

    def __init__(self, max_images: int = 100):
        self.max_images = max_images
        self._images: Dict[str, ImageAttachment] = {}
        self._order: List[str] = []
        self._tool_count = 0
        self._original_count = 0

    def __len__(self) -> int:
        return len(self._images)

    def __contains__(self, name: str) -> bool:
        return name in self._images

    def names(self) -> List[str]:
        return list(self._order)

    def get(self, name: str) -> ImageAttachment:
        try:
            return self._images[name]
        except KeyError:
            raise UnknownImageRefError(name) from None

    def _store(self, name: str, data: bytes, mime: str) -> str:
        self._images[name] = ImageAttachment(name=name, data=data, mime=mime)
        self._order.append(name)
        return name

    def register_original(self, data: bytes, mime: str = "image/png") -> str:
        self._original_count += 1
        name = "original_image" if self._original_count == 1 else f"original_image_{self._original_count}"
        return self._store(name, data, mime)

    def register_tool_image(self, data: bytes, mime: str = "image/png") -> Optional[str]:
        """Register a produced image; returns None once the cap is reached."""
        if len(self._images) >= self.max_images:
            return None
        self._tool_count += 1
        return self._store(f"tool_image_{self._tool_count}", data, mime)


# ---------------------------------------------------------------------------
# Argument validation against the declarations
# ---------------------------------------------------------------------------

_JSON_TYPES = {"string": str, "integer": int}


def validate_args(name: str, arguments: Dict[str, object]) -> Optional[str]:
    """Return a human-readable problem description, or None if valid."""
    schema = TOOL_DECLARATIONS[name]["function"]["parameters"]
    props = schema["properties"]
    for required in schema["required"]:
        if required not in arguments:
            return f"missing required parameter '{required}'"
    for key, value in arguments.items():
        if key not in props:
            return f"unexpected parameter '{key}'"
        expected = _JSON_TYPES.get(props[key]["type"])
        if expected is int and isinstance(value, bool):
            return f"parameter '{key}' must be an integer"
        if expected is not None and not isinstance(value, expected):
            return f"parameter '{key}' must be of type {props[key]['type']}"
        allowed = props[key].get("enum")
        if allowed is not None and value not in allowed:
            return f"parameter '{key}' must be one of {allowed}"

    if name == "image_search":
        mode = arguments.get("search_type", "text")
        if mode == "text" and not arguments.get("query"):
            return "parameter 'query' is required when search_type is 'text'"
        if mode == "reverse" and not arguments.get("image_url"):
            return "parameter 'image_url' is required when search_type is 'reverse'"
    if name == "visit":
        url = str(arguments.get("url", ""))
        if not (url.startswith("http://") or url.startswith("https://")):
            return "parameter 'url' must start with 'http://' or 'https://'"
    return None


# ---------------------------------------------------------------------------
# The per-rollout session
# ---------------------------------------------------------------------------

class ToolSession:
    """Binds providers, kernel and image registry for one rollout."""

    def __init__(
        self,
        registry: Optional[ImageRegistry] = None,
        search: Optional[SearchProvider] = None,
        image_search: Optional[ImageSearchProvider] = None,
        visit: Optional[VisitProvider] = None,
        kernel: Optional[KernelClient] = None,
        enabled: Optional[Sequence[str]] = None,
    ):
        self.registry = registry if registry is not None else ImageRegistry()
        self._search = search
        self._image_search = image_search
        self._visit = visit
        self._kernel = kernel
        if enabled is None:
            enabled = [
                name
                for name, handler in (
                    ("web_search", search),
                    ("image_search", image_search),
                    ("visit", visit),
                    ("code_interpreter", kernel),
                )
                if handler is not None
            ]
        for name in enabled:
            if name not in TOOL_DECLARATIONS:
                raise ValueError(f"cannot enable unknown tool {name!r}")
        self.enabled = tuple(n for n in TOOL_ORDER if n in set(enabled))
        self.calls = 0
        self._kernel_offered: set = set()  # registry names already sent as preloads

    def declarations(self) -> List[dict]:
        return [TOOL_DECLARATIONS[name] for name in self.enabled]

    def close(self) -> None:
        if self._kernel is not None:
            self._kernel.close()

    # -- dispatch ------------------------------------------------------------

    def dispatch(self, call: ToolCall) -> ToolResult:
        self.calls += 1
        if call.name not in self.enabled:
            available = ", ".join(self.enabled) or "none"
            return error_result(
                "tool_name", f"Unknown tool '{call.name}'. Available tools: {available}."
            )
        problem = validate_args(call.name, dict(call.arguments))
        if problem is not None:
            return error_result("runtime", f"Invalid call to {call.name}: {problem}")
        try:
            handler = getattr(self, f"_run_{call.name}")
            return handler(dict(call.arguments))
        except KernelTransportError as exc:
            return error_result("transport", f"{call.name} failed: {exc}")
        except (httpx.HTTPError, ConnectionError, TimeoutError, OSError) as exc:
            return error_result("transport", f"{call.name} failed: {exc}")
        except Exception as exc:  # absolute backstop; dispatch must not throw
            logger.exception("tool %s raised unexpectedly", call.name)
            return error_result("runtime", f"{call.name} failed: {exc}")

    # -- handlers -------------------------------------------------------------

    def _run_web_search(self, args: Dict[str, object]) -> ToolResult:
        assert self._search is not None
        hits = self._search.search(str(args["query"]), int(args.get("max_results", DEFAULT_MAX_RESULTS)))
        return ToolResult(status="ok", text_body=format_hits(hits))

    def _run_image_search(self, args: Dict[str, object]) -> ToolResult:
        assert self._image_search is not None
        limit = int(args.get("max_results", DEFAULT_MAX_RESULTS))
        if args.get("search_type", "text") == "reverse":
            ref = str(args["image_url"])
            if ref in self.registry:
                hits = self._image_search.reverse_search(self.registry.get(ref).data, limit)
            elif ref.startswith("http://") or ref.startswith("https://"):
                hits = self._image_search.reverse_search(ref, limit)
            else:
                return error_result(
                    "runtime",
                    f"Invalid call to image_search: parameter 'image_url' references "
                    f"unknown image '{ref}'",
                )
        else:
            hits = self._image_search.text_search(str(args["query"]), limit)
        return ToolResult(status="ok", text_body=format_hits(hits))

    def _run_visit(self, args: Dict[str, object]) -> ToolResult:
        assert self._visit is not None
        html = self._visit.fetch(str(args["url"]))
        text = extract_text(html, goal=str(args.get("goal", "")))
        if not text:
            text = "The page contained no extractable text."
        return ToolResult(status="ok", text_body=text)

    def _sync_kernel_images(self) -> None:
        """Mirror registry images into the kernel as preloaded variables.

        The code tool's declaration promises original_image / tool_image_N
        variables, so every registered image is offered once, lazily, right
        before code runs.  A refusal (e.g. a payload the kernel cannot
        decode) is logged and skipped rather than failing the call.
        """
        assert self._kernel is not None
        for name in self.registry.names():
            if name in self._kernel_offered:
                continue
            self._kernel_offered.add(name)
            payload = base64.b64encode(self.registry.get(name).data).decode("ascii")
            reply = self._kernel.preload_image(name, payload)
            if reply.status != "ok":
                logger.warning(
                    "kernel refused preload of %s: %s", name, reply.traceback or reply.status
                )

    def _run_code_interpreter(self, args: Dict[str, object]) -> ToolResult:
        assert self._kernel is not None
        self._sync_kernel_images()
        reply = self._kernel.execute(str(args["code"]))

        if reply.status == "syntax_error":
            detail = reply.traceback or reply.stderr or "Syntax error."
            return error_result("syntax", detail)
        if reply.status == "runtime_error":
            parts = [p for p in (reply.stdout, reply.traceback or reply.stderr) if p]
            return error_result("runtime", "\n".join(parts) or "Execution failed.")

        text_parts = [p for p in (reply.stdout, reply.stderr) if p]
        images: List[Tuple[str, bytes]] = []
        dropped = 0
        for payload in reply.images:
            try:
                data = base64.b64decode(payload, validate=True)
            except (binascii.Error, ValueError):
                logger.warning("kernel returned an undecodable image payload; skipping")
                continue
            name = self.registry.register_tool_image(data)
            if name is None:
                dropped += 1
                continue
            images.append((name, data))
            text_parts.append(f"[{name} attached]")
        if dropped:
            text_parts.append(f"[{dropped} image(s) dropped: registry is full]")
        if not text_parts:
            text_parts.append("Execution completed with no output.")
        return ToolResult(status="ok", text_body="\n".join(text_parts), images=tuple(images))
