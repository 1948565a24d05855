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

"""Generator: turns the composed answer context into a final answer.

Three task kinds share the pipeline:
- detective: multiple choice, JSON reply {"answer": "A".."D"}
- open_qa: a short free-text phrase
- claim: TRUE/FALSE inside <answer> tags
"""

import enum
import logging
from dataclasses import dataclass
from typing import Sequence

import regex

from ..prompts import load_template, render_messages
from ..shared.errors import UnparseableAnswerError
from ..shared.llm_provider import LLMProvider
from ..shared.utils import extract_json_from_model_output
from .updater import format_options

logger = logging.getLogger(__name__)

_CLAIM_ANSWER_RE = regex.compile(r"<answer>\s*(.*?)\s*</answer>", regex.DOTALL | regex.IGNORECASE)
_ANSWER_PREFIX_RE = regex.compile(r"^\s*answer\s*:\s*", regex.IGNORECASE)


class TaskKind(str, enum.Enum):
    DETECTIVE = "detective"
    OPEN_QA = "open_qa"
    CLAIM = "claim"


TEMPLATE_FOR_TASK = {
    TaskKind.DETECTIVE: "answer_detective",
    TaskKind.OPEN_QA: "answer_open_qa",
    TaskKind.CLAIM: "answer_claim",
}


@dataclass
class GeneratedAnswer:
    raw: str
    value: str | None
    error: str | None = None


def answer_bindings(
    task_kind: TaskKind | str,
    question: str,
    context: str,
    options: Sequence[str] | None = None,
) -> dict[str, str]:
    task_kind = TaskKind(task_kind)
    if task_kind is TaskKind.DETECTIVE:
        return {
            "answer_context": context,
            "question": question,
            "options_str": format_options(options),
        }
    if task_kind is TaskKind.CLAIM:
        return {"context": context, "claim": question}
    return {"context": context, "question": question}


def parse_answer(text: str, task_kind: TaskKind | str) -> str:
    """Extracts the structured answer from generator output.

    Raises:
        UnparseableAnswerError: No option letter (detective) or no
            TRUE/FALSE answer tag (claim) could be found.
    """
    task_kind = TaskKind(task_kind)
    if task_kind is TaskKind.DETECTIVE:
        payload = extract_json_from_model_output(text)
        letter = payload.get("answer") if isinstance(payload, dict) else None
        if isinstance(letter, str):
            letter = letter.strip().strip("().").upper()
            if letter in {"A", "B", "C", "D"}:
                return letter
        raise UnparseableAnswerError(f"No option letter in {text[:80]!r}")

    if task_kind is TaskKind.CLAIM:
        match = _CLAIM_ANSWER_RE.search(text)
        verdict = match.group(1).strip().strip(".").upper() if match else ""
        if verdict in {"TRUE", "FALSE"}:
            return verdict
        raise UnparseableAnswerError(f"No TRUE/FALSE answer in {text[:80]!r}")

    lines = [line for line in text.strip().splitlines() if line.strip()]
    return _ANSWER_PREFIX_RE.sub("", lines[0]).strip() if lines else ""


def generate_answer(
    gen: LLMProvider,
    task_kind: TaskKind | str,
    question: str,
    context: str,
    options: Sequence[str] | None = None,
) -> GeneratedAnswer:
    """Renders the task's answer prompt, calls gen and parses the reply.

    A reply that cannot be parsed is kept as raw text with value None.
    """
    task_kind = TaskKind(task_kind)
    template_id = TEMPLATE_FOR_TASK[task_kind]
    system, user = render_messages(
        load_template(template_id), answer_bindings(task_kind, question, context, options)
    )
    raw = gen.complete(system, user, template_id=template_id)
    try:
        return GeneratedAnswer(raw=raw, value=parse_answer(raw, task_kind))
    except UnparseableAnswerError as e:
        logger.warning(f"⚠️ {e}")
        return GeneratedAnswer(raw=raw, value=None, error=str(e))
