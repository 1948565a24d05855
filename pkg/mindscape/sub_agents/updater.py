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

"""Updater: decides ANSWER or REFINE and rewrites the agent's working state.

Each step the update model sees the question, the current signature and
query, the session summaries of the retrieved passages, the evidence memory
and the passages themselves. It replies in tagged fields:

    <evidence_memory> <confidence> <thought> <action>
    <refined_signature> <rewritten_query>
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import regex

from ..prompts import load_template, render_messages
from ..shared.errors import (
    InvalidActionError,
    MissingActionError,
    MissingRefinementError,
    ParseError,
)
from ..shared.llm_provider import LLMProvider

if TYPE_CHECKING:
    from ..mindscape_index import Chunk, SessionSummary

logger = logging.getLogger(__name__)

UPDATE_TEMPLATE_ID = "update"
OPTION_LETTERS = "ABCDEFGHIJ"

FORMAT_REMINDER = """

Your previous reply could not be parsed. Reply again using exactly these tags:
<evidence_memory>- one finding per line</evidence_memory>
<confidence>HIGH, MEDIUM or LOW</confidence>
<thought>...</thought>
<action>ANSWER or REFINE</action>
and, only if REFINE, <refined_signature>...</refined_signature> and <rewritten_query>...</rewritten_query>"""

_TAG_RE = regex.compile(
    r"<(evidence_memory|confidence|thought|action|refined_signature|rewritten_query)>"
    r"(.*?)</\1>",
    regex.DOTALL,
)
_BULLET_RE = regex.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*)$")


class Action(str, enum.Enum):
    ANSWER = "ANSWER"
    REFINE = "REFINE"


class Confidence(str, enum.Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


@dataclass
class UpdateResult:
    action: Action
    confidence: Confidence = Confidence.LOW
    evidence_memory: list[str] = field(default_factory=list)
    thought: str = ""
    refined_signature: str | None = None
    rewritten_query: str | None = None
    # Set when the result was substituted after unparseable output.
    forced: bool = False


def parse_evidence(block: str) -> list[str]:
    """Splits an evidence block into bullet strings.

    Dash (or star, or numbered) lines become items; without any such line,
    every non-blank line is an item.
    """
    lines = [line for line in block.splitlines() if line.strip()]
    bullets = [m.group(1).strip() for m in map(_BULLET_RE.match, lines) if m]
    items = bullets if bullets else [line.strip() for line in lines]
    return [item for item in items if item]


def parse_update_output(text: str) -> UpdateResult:
    """Parses tagged update-model output. Unknown tags are ignored.

    Raises:
        MissingActionError: No <action> tag.
        InvalidActionError: The action is neither ANSWER nor REFINE.
        MissingRefinementError: REFINE without a non-empty <refined_signature>.
    """
    fields: dict[str, str] = {}
    for match in _TAG_RE.finditer(text):
        fields.setdefault(match.group(1), match.group(2).strip())

    if "action" not in fields:
        raise MissingActionError("Update output has no <action> tag")
    action_text = fields["action"].strip().strip("*`'\".").upper()
    try:
        action = Action(action_text)
    except ValueError:
        raise InvalidActionError(f"Unknown action {fields['action']!r}")

    confidence_text = fields.get("confidence", "").strip().strip("*`'\".").upper()
    try:
        confidence = Confidence(confidence_text)
    except ValueError:
        logger.warning(f"⚠️ Unrecognized confidence {confidence_text!r}; using LOW")
        confidence = Confidence.LOW

    refined = fields.get("refined_signature") or None
    if action is Action.REFINE and refined is None:
        raise MissingRefinementError("REFINE output has no <refined_signature>")

    return UpdateResult(
        action=action,
        confidence=confidence,
        evidence_memory=parse_evidence(fields.get("evidence_memory", "")),
        thought=fields.get("thought", ""),
        refined_signature=refined,
        rewritten_query=fields.get("rewritten_query") or None,
    )


def format_update_output(result: UpdateResult) -> str:
    """Canonical tagged emission of an UpdateResult."""
    evidence = "\n".join(f"- {item}" for item in result.evidence_memory)
    parts = [
        f"<evidence_memory>\n{evidence}\n</evidence_memory>",
        f"<confidence>{result.confidence.value}</confidence>",
        f"<thought>{result.thought}</thought>",
        f"<action>{result.action.value}</action>",
    ]
    if result.refined_signature is not None:
        parts.append(f"<refined_signature>{result.refined_signature}</refined_signature>")
    if result.rewritten_query is not None:
        parts.append(f"<rewritten_query>{result.rewritten_query}</rewritten_query>")
    return "\n".join(parts)


# --- Prompt bindings ---------------------------------------------------------


def format_options(options: Sequence[str] | None) -> str:
    if not options:
        return ""
    return "\n".join(f"{OPTION_LETTERS[i]}. {text}" for i, text in enumerate(options))


def remaining_steps_hint(step: int, max_steps: int) -> str:
    """step is 1-based."""
    remaining = max_steps - step
    if remaining <= 0:
        return "FINAL STEP: you must choose ANSWER"
    return f"{remaining} step(s) remaining after this one"


def format_summaries(summaries: Sequence["SessionSummary"]) -> str:
    if not summaries:
        return "(none)"
    return "\n\n".join(f"[Session {s.summary_id}] {s.text}" for s in summaries)


def format_evidence(evidence: Sequence[str]) -> str:
    if not evidence:
        return "(empty)"
    return "\n".join(f"- {item}" for item in evidence)


def format_passages(chunks: Sequence["Chunk"]) -> str:
    return "\n\n".join(f"[Chunk {c.chunk_id}] {c.text}" for c in chunks)


def format_history(history: Sequence[dict]) -> str:
    if not history:
        return ""
    lines = ["History:"]
    for record in history:
        lines.append(
            f"Step {record['step'] + 1}: action={record['decision']} "
            f"confidence={record['confidence']} query={record['query']}"
        )
    return "\n".join(lines)


def build_update_bindings(
    question: str,
    options: Sequence[str] | None,
    step: int,
    max_steps: int,
    signature_text: str,
    current_query: str,
    summaries: Sequence["SessionSummary"],
    evidence: Sequence[str],
    passages: Sequence["Chunk"],
    history: Sequence[dict],
) -> dict[str, str]:
    """Bindings for every placeholder of the update prompt (step is 1-based)."""
    return {
        "question": question,
        "options_str": format_options(options),
        "step": str(step),
        "max_steps": str(max_steps),
        "remaining_steps_hint": remaining_steps_hint(step, max_steps),
        "signature": signature_text or "(empty)",
        "current_query": current_query,
        "summaries_text": format_summaries(summaries),
        "evidence_memory": format_evidence(evidence),
        "chunks_text": format_passages(passages),
        "history_section": format_history(history),
    }


def request_update(
    upd: LLMProvider, bindings: dict[str, str], prior_evidence: Sequence[str]
) -> UpdateResult:
    """Calls the update model, re-prompting once on malformed output.

    A second malformed reply yields a forced ANSWER that keeps the prior
    evidence.
    """
    system, user = render_messages(load_template(UPDATE_TEMPLATE_ID), bindings)
    reply = upd.complete(system, user, template_id=UPDATE_TEMPLATE_ID)
    try:
        return parse_update_output(reply)
    except ParseError as e:
        logger.warning(f"⚠️ Unparseable update output ({e}); re-prompting once")

    reply = upd.complete(system, user + FORMAT_REMINDER, template_id=f"{UPDATE_TEMPLATE_ID}+reminder")
    try:
        return parse_update_output(reply)
    except ParseError as e:
        logger.error(f"❌ Update output still unparseable ({e}); forcing ANSWER")
        return UpdateResult(
            action=Action.ANSWER,
            confidence=Confidence.LOW,
            evidence_memory=list(prior_evidence),
            thought="forced answer after unparseable update output",
            forced=True,
        )
