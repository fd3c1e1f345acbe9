"""Prompt template loading and rendering.

Templates are plain text files in an asset directory, one file per prompt
(``<dir>/<name>.txt``). A template may pull in shared fragments with
``##include:fragment_name##`` (resolved from ``<dir>/fragments/<name>.txt``
at load time, recursively). Rendering replaces ``##key##`` placeholders with
caller-supplied strings; the spliced values are inserted verbatim and never
re-scanned, so a binding containing ``##x##`` stays literal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

MAX_INCLUDE_DEPTH = 8

_INCLUDE_RE = re.compile(r"##include:([A-Za-z0-9_\-]+)##")
_PLACEHOLDER_RE = re.compile(r"##([A-Za-z0-9_]+)##")


class PromptError(Exception):
    """Base class for template problems."""


class TemplateNotFoundError(PromptError):
    pass


class FragmentNotFoundError(PromptError):
    pass


class IncludeCycleError(PromptError):
    pass


class IncludeDepthError(PromptError):
    pass


class UnboundPlaceholderError(PromptError):
    pass


@dataclass(frozen=True)
class Template:
    """A fully include-resolved template, ready to render."""

    name: str
    body: str
    source_path: Path


def _resolve_includes(text: str, asset_dir: Path, chain: tuple[str, ...], depth: int) -> str:
    if depth > MAX_INCLUDE_DEPTH:
        raise IncludeDepthError(f"include nesting exceeds {MAX_INCLUDE_DEPTH} (chain: {' -> '.join(chain)})")

    def splice(match: re.Match[str]) -> str:
        frag_name = match.group(1)
        if frag_name in chain:
            cycle = " -> ".join(chain + (frag_name,))
            raise IncludeCycleError(f"include cycle detected: {cycle}")
        frag_path = asset_dir / "fragments" / f"{frag_name}.txt"
        if not frag_path.is_file():
            raise FragmentNotFoundError(f"fragment not found: {frag_path}")
        frag_text = frag_path.read_text(encoding="utf-8")
        return _resolve_includes(frag_text, asset_dir, chain + (frag_name,), depth + 1)

    return _INCLUDE_RE.sub(splice, text)


def load_template(name: str, asset_dir: str | Path) -> Template:
    """Load ``<asset_dir>/<name>.txt`` and resolve every include directive."""
    asset_dir = Path(asset_dir)
    path = asset_dir / f"{name}.txt"
    if not path.is_file():
        raise TemplateNotFoundError(f"template not found: {path}")
    raw = path.read_text(encoding="utf-8")
    body = _resolve_includes(raw, asset_dir, chain=(name,), depth=0)
    return Template(name=name, body=body, source_path=path)


def render(template: Template, bindings: Mapping[str, str]) -> str:
    """Substitute ``##key##`` placeholders from bindings, single pass.

    Every placeholder in the body must have a binding; unused bindings are
    fine. Raises UnboundPlaceholderError naming the first missing key.
    """
    if "##include:" in template.body:
        raise PromptError(f"template {template.name!r} still contains include directives")

    def substitute(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in bindings:
            raise UnboundPlaceholderError(f"no binding for placeholder ##{key}## in template {template.name!r}")
        return str(bindings[key])

    return _PLACEHOLDER_RE.sub(substitute, template.body)


class PromptEngine:
    """Loads templates from one directory, caching by name."""

    def __init__(self, asset_dir: str | Path):
        self.asset_dir = Path(asset_dir)
        self._cache: dict[str, Template] = {}

    def get(self, name: str) -> Template:
        if name not in self._cache:
            self._cache[name] = load_template(name, self.asset_dir)
        return self._cache[name]

    def render(self, name: str, **bindings: str) -> str:
        return render(self.get(name), bindings)
