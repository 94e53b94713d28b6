"""The four agent tools: web search, image search, visit, code interpreter."""

from tacit.tools.interpreter import (
    KernelClient,
    KernelReply,
    KernelTransportError,
    StubKernelClient,
    SubprocessKernelClient,
)
from tacit.tools.registry import (
    ERROR_CLASSES,
    TOOL_DECLARATIONS,
    TOOL_ORDER,
    ImageRegistry,
    ToolResult,
    ToolSession,
    error_result,
    validate_args,
)
from tacit.tools.search import (
    HttpSearchProvider,
    SearchHit,
    StubSearchProvider,
    format_hits,
)
from tacit.tools.visit import HttpVisitProvider, StubVisitProvider, extract_text

__all__ = [
    "ERROR_CLASSES",
    "TOOL_DECLARATIONS",
    "TOOL_ORDER",
    "ImageRegistry",
    "KernelClient",
    "KernelReply",
    "KernelTransportError",
    "StubKernelClient",
    "SubprocessKernelClient",
    "ToolResult",
    "ToolSession",
    "error_result",
    "validate_args",
    "HttpSearchProvider",
    "SearchHit",
    "StubSearchProvider",
    "format_hits",
    "HttpVisitProvider",
    "StubVisitProvider",
    "extract_text",
]
