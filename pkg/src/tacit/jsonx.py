"""Pulling JSON payloads out of free-form model completions.

Models wrap their structured output in reasoning prose, markdown fences,
or format reminders, so "parse the completion" really means: find the
last well-formed top-level JSON value of the expected shape.  The scan
walks left to right and skips over the interior of every value it
successfully parses, so nested arrays/objects are never mistaken for
top-level ones, and the final match wins.
"""

from __future__ import annotations

import json
from typing import Any, Dict, List, Optional, Tuple, Type

from tacit.errors import NoJsonFoundError

_DECODER = json.JSONDecoder()


def _extract_last(text: str, opener: str, want: Type) -> Any:
    found: Optional[Any] = None
    i = 0
    while True:
        j = text.find(opener, i)
        if j < 0:
            break
        try:
            value, end = _DECODER.raw_decode(text, j)
        except ValueError:
            i = j + 1
            continue
        if isinstance(value, want):
            found = value
            i = end
        else:
            i = j + 1
    if found is None:
        raise NoJsonFoundError(f"no top-level JSON {want.__name__} in completion")
    return found


def extract_last_json_array(text: str) -> List[Any]:
    return _extract_last(text, "[", list)


def extract_last_json_object(text: str) -> Dict[str, Any]:
    return _extract_last(text, "{", dict)
