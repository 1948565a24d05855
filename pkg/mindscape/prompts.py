# Copyright 2025 Google LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Prompt storage for the mindscape pipeline.

Two kinds of prompts live here:

* the ADK coordinator instruction, kept as versioned string literals like the
  other agent instructions;
* the pipeline templates (session summary, update, answer prompts), kept as
  versioned data files under prompt_templates/ so that their hash can key the
  summary cache.
"""

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import regex

from .shared.errors import MissingPlaceholderError, UnknownPlaceholderError
from .shared.utils import canonical_json, sha256_hex

TEMPLATE_DIR = Path(__file__).parent / "prompt_templates"

# Only {identifier} is a placeholder; JSON-like braces in template text are not.
_PLACEHOLDER_RE = regex.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    """A system/user prompt pair with a declared placeholder manifest."""

    template_id: str
    version: str
    system: str
    user: str
    placeholders: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        found = set(_PLACEHOLDER_RE.findall(self.system)) | set(
            _PLACEHOLDER_RE.findall(self.user)
        )
        declared = set(self.placeholders)
        if found - declared:
            raise UnknownPlaceholderError(
                f"Template {self.template_id} uses undeclared placeholders: "
                f"{sorted(found - declared)}"
            )
        if declared - found:
            raise UnknownPlaceholderError(
                f"Template {self.template_id} declares unused placeholders: "
                f"{sorted(declared - found)}"
            )

    @property
    def content_hash(self) -> str:
        return sha256_hex(
            canonical_json(
                {
                    "template_id": self.template_id,
                    "version": self.version,
                    "system": self.system,
                    "user": self.user,
                }
            )
        )


def _substitute(text: str, manifest: set[str], bindings: Mapping[str, str]) -> str:
    def replace(match) -> str:
        name = match.group(1)
        if name in manifest:
            return bindings[name]
        return match.group(0)

    return _PLACEHOLDER_RE.sub(replace, text)


def _check_bindings(template: PromptTemplate, bindings: Mapping[str, object]) -> dict[str, str]:
    manifest = set(template.placeholders)
    missing = manifest - set(bindings)
    if missing:
        raise MissingPlaceholderError(
            f"Template {template.template_id} is missing bindings: {sorted(missing)}"
        )
    unknown = set(bindings) - manifest
    if unknown:
        raise UnknownPlaceholderError(
            f"Template {template.template_id} has no placeholders named: {sorted(unknown)}"
        )
    return {name: str(value) for name, value in bindings.items()}


def render(template: PromptTemplate, bindings: Mapping[str, object]) -> str:
    """Renders the user part of template.

    Substitution is a single pass, so braces inside bound values are copied
    literally and never expanded.

    Raises:
        MissingPlaceholderError: A declared placeholder has no binding.
        UnknownPlaceholderError: A binding names an undeclared placeholder.
    """
    values = _check_bindings(template, bindings)
    return _substitute(template.user, set(template.placeholders), values)


def render_messages(
    template: PromptTemplate, bindings: Mapping[str, object]
) -> tuple[str, str]:
    """Renders (system, user) for a chat call."""
    values = _check_bindings(template, bindings)
    manifest = set(template.placeholders)
    return (
        _substitute(template.system, manifest, values),
        _substitute(template.user, manifest, values),
    )


@functools.lru_cache(maxsize=None)
def _load_manifest() -> dict:
    with open(TEMPLATE_DIR / "manifest.json", "r", encoding="utf-8") as f:
        return json.load(f)


def _read_template_file(name: str | None) -> str:
    if name is None:
        return ""
    # newline="" keeps the file bytes exactly as shipped
    with open(TEMPLATE_DIR / name, "r", encoding="utf-8", newline="") as f:
        return f.read()


@functools.lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    """Loads a shipped template by id (session_summary, update, answer_*)."""
    entries = _load_manifest()["templates"]
    if template_id not in entries:
        raise KeyError(f"Unknown prompt template: {template_id}")
    entry = entries[template_id]
    return PromptTemplate(
        template_id=template_id,
        version=entry["version"],
        system=_read_template_file(entry.get("system")),
        user=_read_template_file(entry["user"]),
        placeholders=tuple(entry["placeholders"]),
    )


def list_templates() -> list[str]:
    return sorted(_load_manifest()["templates"])


def return_instructions_coordinator() -> str:
    """Return instructions for the mindscape coordinator agent."""

    # Latest version - active
    instruction_prompt_coordinator_v1_1 = """You are a long-document reading assistant. You answer questions about a book (or a whole book series) that is far too long to read at once.

## How you work
The book has been indexed into small passages plus one narrative summary per session of consecutive passages. You never read the book directly; you use tools.

## Tools
1. **call_signature_agent**: Runs the full iterative reader. It picks the session summaries most relevant to the question, retrieves passages guided by both the question and those summaries, refines its notes for a few steps, and returns an answer with a trace. Use this for any question that needs an answer.
2. **call_signature_retrieval**: Returns the passages and session summaries relevant to a question without answering it. Use this when the user asks where something happens, or wants to see the evidence.

## Multiple-choice questions
Pass the options in the question text, one per line, as "A. ...", "B. ...", and so on.

## Communication Style
- Quote the evidence the tools return; do not invent plot details.
- If the tools return an error, say what failed and suggest rephrasing the question.
- Keep answers short unless asked for detail."""

    # Previous version - for testing/comparison
    instruction_prompt_coordinator_v1_0 = """You are a reading assistant for long books. Use call_signature_agent to answer questions about the indexed book and call_signature_retrieval to show supporting passages. Never answer from memory."""

    return instruction_prompt_coordinator_v1_1
