"""Skill documents: markdown with a YAML frontmatter header.

A document is frontmatter (name, description, version) plus an ordered
list of sections.  Sections are split on top-level ``#``/``##`` headings;
``###`` and deeper stay inside their parent section, and nothing inside a
fenced code block is treated as a heading.  parse() produces a canonical
form (section bodies carry no leading/trailing blank lines) and render()
emits exactly that form, so parse(render(doc)) == doc.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import yaml

from tacit.errors import (
    MalformedVersionError,
    MissingFrontmatterError,
    StoreIoError,
)
from tacit.store.bank import count_words

_VERSION_RE = re.compile(r"^\d+\.\d+\.\d+$")
_HEADING_RE = re.compile(r"^(#{1,2})(\s+\S.*|\s*)$")
_FENCE_OPEN_RE = re.compile(r"^ {0,3}(`{3,}|~{3,})")
# Single-line strings we can emit unquoted without YAML ambiguity.
_PLAIN_SAFE_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9 _.,;()/&+'-]*$")


@dataclass(frozen=True)
class SkillMetadata:
    name: str
    description: str
    version: str  # "<major>.<minor>.<patch>"

    def bump_major(self) -> "SkillMetadata":
        major = int(self.version.split(".")[0])
        return SkillMetadata(self.name, self.description, f"{major + 1}.0.0")


@dataclass(frozen=True)
class SkillSection:
    heading: str  # full heading line, e.g. "## Strategy"; "" for preamble text
    text: str     # body markdown, no leading/trailing blank lines


@dataclass(frozen=True)
class SkillDocument:
    metadata: SkillMetadata
    sections: Tuple[SkillSection, ...]

    @property
    def word_count(self) -> int:
        """Whitespace-token count of the fully rendered document."""
        return count_words(render_skill(self))

    def body_text(self) -> str:
        """The markdown body alone, without the frontmatter block."""
        return _render_sections(self.sections)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _check_version(version: str) -> str:
    if not isinstance(version, str) or not _VERSION_RE.match(version):
        raise MalformedVersionError(
            f"version must look like <major>.<minor>.<patch>, got {version!r}"
        )
    return version


def _split_frontmatter(text: str) -> Tuple[str, str]:
    """Return (frontmatter_yaml, body) or raise MissingFrontmatterError."""
    stripped = text.lstrip()
    if not stripped.startswith("---"):
        raise MissingFrontmatterError("document does not start with a --- frontmatter block")
    lines = stripped.split("\n")
    if lines[0].strip() != "---":
        raise MissingFrontmatterError("first line is not a bare --- delimiter")
    for i in range(1, len(lines)):
        if lines[i].strip() == "---":
            return "\n".join(lines[1:i]), "\n".join(lines[i + 1:])
    raise MissingFrontmatterError("frontmatter block is never closed with ---")


def _parse_metadata(frontmatter: str) -> SkillMetadata:
    try:
        fields = yaml.safe_load(frontmatter)
    except yaml.YAMLError as exc:
        raise MissingFrontmatterError(f"frontmatter is not valid YAML: {exc}") from exc
    if not isinstance(fields, dict):
        raise MissingFrontmatterError("frontmatter did not parse to a mapping")
    for key in ("name", "description", "version"):
        if key not in fields:
            raise MissingFrontmatterError(f"frontmatter missing field {key!r}")
    name = fields["name"]
    description = fields["description"]
    if not isinstance(name, str) or not name.strip():
        raise MissingFrontmatterError("frontmatter name must be a non-empty string")
    if not isinstance(description, str):
        raise MissingFrontmatterError("frontmatter description must be a string")
    version = _check_version(fields["version"])
    return SkillMetadata(name=name.strip(), description=description.strip(), version=version)


def _split_sections(body: str) -> Tuple[SkillSection, ...]:
    sections: List[SkillSection] = []
    heading = ""
    buffer: List[str] = []
    fence: Optional[str] = None  # opening fence marker while inside a block

    def flush() -> None:
        text = "\n".join(buffer).strip("\n")
        if heading or text:
            sections.append(SkillSection(heading=heading, text=text))

    for line in body.split("\n"):
        if fence is None:
            open_match = _FENCE_OPEN_RE.match(line)
            if open_match:
                fence = open_match.group(1)
                buffer.append(line)
                continue
            if _HEADING_RE.match(line):
                flush()
                heading = line.rstrip()
                buffer = []
                continue
            buffer.append(line)
        else:
            buffer.append(line)
            closer = line.strip()
            if closer.startswith(fence[0] * 3) and set(closer) == {fence[0]} and len(closer) >= len(fence):
                fence = None
    flush()
    return tuple(sections)


def parse_skill(text: str) -> SkillDocument:
    """Parse raw SKILL.md text into its canonical structured form."""
    frontmatter, body = _split_frontmatter(text)
    metadata = _parse_metadata(frontmatter)
    return SkillDocument(metadata=metadata, sections=_split_sections(body))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _emit_scalar(value: str) -> str:
    if _PLAIN_SAFE_RE.match(value):
        return value
    return json.dumps(value, ensure_ascii=False)  # JSON quoting is valid YAML


def _render_metadata(meta: SkillMetadata) -> str:
    lines = [f"name: {_emit_scalar(meta.name)}"]
    if "\n" in meta.description:
        lines.append("description: |-")
        for raw in meta.description.split("\n"):
            lines.append(f"  {raw}" if raw else "")
    else:
        lines.append(f"description: {_emit_scalar(meta.description)}")
    lines.append(f"version: {meta.version}")
    return "\n".join(lines)


def _render_sections(sections: Tuple[SkillSection, ...]) -> str:
    parts: List[str] = []
    for section in sections:
        if section.heading:
            parts.append(section.heading)
        if section.text:
            parts.append(section.text)
    return "\n\n".join(parts)


def render_skill(doc: SkillDocument) -> str:
    """Emit canonical SKILL.md text; inverse of parse_skill."""
    _check_version(doc.metadata.version)
    head = f"---\n{_render_metadata(doc.metadata)}\n---"
    body = _render_sections(doc.sections)
    if body:
        return f"{head}\n\n{body}\n"
    return f"{head}\n"


# ---------------------------------------------------------------------------
# File IO: the document is stored as raw markdown, nothing else.
# ---------------------------------------------------------------------------

def save_skill(doc: SkillDocument, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_skill(doc), encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot write {path}: {exc}") from exc


def load_skill(path: Union[str, Path]) -> SkillDocument:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc}") from exc
    return parse_skill(raw)
