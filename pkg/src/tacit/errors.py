"""Shared exception types.

Grouped here so that callers can catch one module's failures without
importing half the package.  Everything derives from TacitError except
where a stdlib base (KeyError, ValueError) is the more natural fit for
callers that do not know about this package.
"""

from __future__ import annotations


class TacitError(Exception):
    """Base class for errors raised by this package."""


# ---------------------------------------------------------------------------
# Knowledge store
# ---------------------------------------------------------------------------

class UnknownIdError(TacitError, KeyError):
    """An operation referenced an experience id that is not in the bank."""

    def __init__(self, entry_id: str):
        super().__init__(entry_id)
        self.entry_id = entry_id

    def __str__(self) -> str:  # KeyError quotes its arg; keep it readable
        return f"unknown experience id: {self.entry_id}"


class InvalidOpError(TacitError, ValueError):
    """A knowledge operation had the wrong shape for its kind."""


class TextTooLongError(TacitError, ValueError):
    """Experience text exceeded the word budget."""

    def __init__(self, word_count: int, limit: int):
        super().__init__(f"text has {word_count} words; limit is {limit}")
        self.word_count = word_count
        self.limit = limit


class MissingFrontmatterError(TacitError, ValueError):
    """A skill document did not start with a frontmatter block."""


class MalformedVersionError(TacitError, ValueError):
    """A skill version string was not of the form <major>.<minor>.<patch>."""


class SchemaError(TacitError, ValueError):
    """A persisted file violated the expected schema (e.g. duplicate ids)."""


class StoreIoError(TacitError, OSError):
    """Reading or writing a persisted knowledge file failed."""


# ---------------------------------------------------------------------------
# Semantic index
# ---------------------------------------------------------------------------

class EmptyTextError(TacitError, ValueError):
    """Refused to embed an empty or whitespace-only string."""


class DimensionMismatchError(TacitError, ValueError):
    """Two vectors of different dimensionality were combined."""


class ZeroVectorError(TacitError, ValueError):
    """Cosine similarity is undefined for an all-zero vector."""


# ---------------------------------------------------------------------------
# Model gateway / templates
# ---------------------------------------------------------------------------

class UnknownTemplateError(TacitError, KeyError):
    """No registered prompt template under that id."""


class UnboundSlotError(TacitError, ValueError):
    """A template slot had no binding at render time."""

    def __init__(self, template_id: str, slot: str):
        super().__init__(f"template {template_id!r}: slot {{{slot}}} is unbound")
        self.template_id = template_id
        self.slot = slot


class BackendUnavailableError(TacitError, RuntimeError):
    """A model backend failed after exhausting its retry budget."""


class ScriptExhaustedError(TacitError, RuntimeError):
    """A scripted backend ran out of replies (a test authoring bug)."""


class ScriptMismatchError(TacitError, RuntimeError):
    """A scripted reply's expectation did not match the actual request."""


# ---------------------------------------------------------------------------
# Agent runtime / tools
# ---------------------------------------------------------------------------

class MultipleToolCallsError(TacitError, ValueError):
    """The model emitted more than one tool call in a single turn."""


class UnknownToolError(TacitError, KeyError):
    """The model called a tool name that is not registered."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown tool: {self.name}"


class UnknownImageRefError(TacitError, KeyError):
    """A request referenced an image name that was never registered."""


# ---------------------------------------------------------------------------
# Parsing model output
# ---------------------------------------------------------------------------

class NoJsonFoundError(TacitError, ValueError):
    """A completion contained no well-formed JSON payload where one was required."""


class MalformedFragmentError(TacitError, ValueError):
    """A generated skill fragment did not start with a frontmatter block."""


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class InsufficientItemsError(TacitError, ValueError):
    """The dataset is smaller than the requested train/test split."""


class EmptyMatrixError(TacitError, ValueError):
    """A metric was asked for on an empty outcome matrix."""


# ---------------------------------------------------------------------------
# Configuration / CLI
# ---------------------------------------------------------------------------

class ConfigError(TacitError, ValueError):
    """Base class for configuration problems."""


class UnknownKeyError(ConfigError):
    """The config file contained a key this version does not understand."""

    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key}")
        self.key = key


class ConfigTypeError(ConfigError):
    """A config value had the wrong type or was out of range."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key}: {message}")
        self.key = key


class MissingRequiredError(ConfigError):
    """A config key required by the requested command was absent."""

    def __init__(self, key: str):
        super().__init__(f"missing required config key: {key}")
        self.key = key
