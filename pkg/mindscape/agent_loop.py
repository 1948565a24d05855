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

"""The signature agent and the static signature-augmented pipelines.

Agent run:

1. init: query-only retrieval of K0 candidates, their summaries form the pool,
   and up to K_sum summaries become the step-0 signature.
2. loop, at most `steps` times: retrieve with (query_t, signature_t), collect
   the summaries of the retrieved chunks, ask the updater for ANSWER or
   REFINE, and move to (query_{t+1}, signature_{t+1}, evidence_{t+1}).
3. generate from the original question, the last retrieved passages, the
   final signature and the final evidence, per the answer variant.

Static runs (query-only, mia-emb, mia-rag) do one retrieval pass and generate.
The agent-no-sig run keeps the loop but drops the signature from retrieval,
the update prompt and the answer.
"""

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema

from .mindscape_index import SessionSummary
from .retrieval import RankedList, Retriever
from .shared.config import MindscapeConfig
from .shared.llm_provider import LLMProvider
from .shared.utils import atomic_write_text
from .signature_select import (
    ObjectiveWeights,
    SelectionMode,
    Signature,
    build_candidate_pool,
    select_signature,
)
from .sub_agents.generator import GeneratedAnswer, TaskKind, generate_answer
from .sub_agents.updater import Action, UpdateResult, build_update_bindings, request_update

logger = logging.getLogger(__name__)

SIGNATURE_HEADER = "Global signature:"
EVIDENCE_HEADER = "Evidence memory:"
PASSAGES_HEADER = "Retrieved passages:"


class AnswerVariant(str, enum.Enum):
    """Memory states prepended to the retrieved passages at answer time."""

    CHUNKS = "chunks"
    CHUNKS_SIG = "chunks+sig"
    CHUNKS_EVI = "chunks+evi"
    CHUNKS_SIG_EVI = "chunks+sig+evi"

    @property
    def with_signature(self) -> bool:
        return "sig" in self.value

    @property
    def with_evidence(self) -> bool:
        return "evi" in self.value


def compose_answer_context(
    variant: AnswerVariant | str,
    chunks: Sequence[str],
    signature_text: str = "",
    evidence: Sequence[str] = (),
) -> str:
    """Builds the generator context: signature, then evidence, then passages.

    Sections are separated by a blank line and open with a fixed header
    ("Global signature:", "Evidence memory:", "Retrieved passages:").
    Passages are numbered "[1] ...". Empty sections are left out; with no
    section besides the passages, the header is dropped too.
    """
    if not chunks:
        raise ValueError("compose_answer_context needs at least one chunk")
    variant = AnswerVariant(variant)
    sections = []
    if variant.with_signature and signature_text.strip():
        sections.append(f"{SIGNATURE_HEADER}\n{signature_text.strip()}")
    if variant.with_evidence and evidence:
        sections.append(EVIDENCE_HEADER + "\n" + "\n".join(f"- {item}" for item in evidence))
    passages = "\n\n".join(f"[{i}] {text}" for i, text in enumerate(chunks, start=1))
    if not sections:
        return passages
    sections.append(f"{PASSAGES_HEADER}\n{passages}")
    return "\n\n".join(sections)


@dataclass
class StepRecord:
    step: int
    query: str
    signature: str
    retrieved_ids: list[int]
    summary_ids: list[int]
    decision: str
    confidence: str
    evidence: list[str]
    thought: str = ""
    refined_signature: str | None = None
    rewritten_query: str | None = None
    forced: bool = False
    repaired_evidence: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AgentState:
    step: int
    query: str
    signature: Signature
    evidence: list[str] = field(default_factory=list)
    history: list[StepRecord] = field(default_factory=list)


@dataclass
class AgentRunResult:
    """Answer plus everything needed to replay how it was reached."""

    question: str
    method: str
    task_kind: str
    variant: str
    init_signature: Signature
    init_candidate_ids: list[int]
    steps: list[StepRecord]
    final_retrieved_ids: list[int]
    final_signature: str
    final_evidence: list[str]
    answer: GeneratedAnswer
    update_calls: int = 0
    retrieval_calls: int = 0

    @property
    def answer_text(self) -> str | None:
        return self.answer.value

    def trace(self) -> dict:
        return {
            "question": self.question,
            "method": self.method,
            "task_kind": self.task_kind,
            "variant": self.variant,
            "init": {
                "selected": list(self.init_signature.selected),
                "signature": self.init_signature.rendered_text,
                "candidate_ids": self.init_candidate_ids,
            },
            "steps": [record.to_dict() for record in self.steps],
            "final": {
                "retrieved_ids": self.final_retrieved_ids,
                "signature": self.final_signature,
                "evidence": self.final_evidence,
            },
            "answer": {
                "value": self.answer.value,
                "raw": self.answer.raw,
                "error": self.answer.error,
            },
            "update_calls": self.update_calls,
            "retrieval_calls": self.retrieval_calls,
        }


_STRING_LIST = {"type": "array", "items": {"type": "string"}}
_ID_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}}

TRACE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["question", "method", "init", "steps", "final", "answer",
                 "update_calls", "retrieval_calls"],
    "properties": {
        "question": {"type": "string"},
        "method": {"enum": ["query-only", "mia-emb", "mia-rag", "agent", "agent-no-sig"]},
        "init": {
            "type": "object",
            "required": ["selected", "signature", "candidate_ids"],
            "properties": {
                "selected": _ID_LIST,
                "signature": {"type": "string"},
                "candidate_ids": _ID_LIST,
            },
        },
        "steps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["step", "query", "signature", "retrieved_ids",
                             "decision", "confidence", "evidence"],
                "properties": {
                    "step": {"type": "integer", "minimum": 0},
                    "query": {"type": "string"},
                    "signature": {"type": "string"},
                    "retrieved_ids": _ID_LIST,
                    "summary_ids": _ID_LIST,
                    "decision": {"enum": ["ANSWER", "REFINE", "STATIC"]},
                    "confidence": {"enum": ["HIGH", "MEDIUM", "LOW", "N/A"]},
                    "evidence": _STRING_LIST,
                },
            },
        },
        "final": {
            "type": "object",
            "required": ["retrieved_ids", "signature", "evidence"],
            "properties": {
                "retrieved_ids": _ID_LIST,
                "signature": {"type": "string"},
                "evidence": _STRING_LIST,
            },
        },
        "answer": {
            "type": "object",
            "required": ["value", "raw", "error"],
            "properties": {
                "value": {"type": ["string", "null"]},
                "raw": {"type": "string"},
                "error": {"type": ["string", "null"]},
            },
        },
        "update_calls": {"type": "integer", "minimum": 0},
        "retrieval_calls": {"type": "integer", "minimum": 0},
    },
}


def validate_trace(trace: dict) -> None:
    jsonschema.validate(trace, TRACE_SCHEMA)


def write_trace(result: AgentRunResult, path: str | Path) -> Path:
    """Validates and writes the run trace as pretty JSON."""
    trace = result.trace()
    validate_trace(trace)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps(trace, ensure_ascii=False, indent=2))
    return path


# --- Initialization ----------------------------------------------------------


@dataclass
class SignatureInit:
    signature: Signature
    candidates: RankedList
    pool_size: int


def initialize_signature(
    q: str,
    retriever: Retriever,
    mode: SelectionMode = "coverage",
    k0: int = 50,
    k_sum: int = 5,
    weights: ObjectiveWeights | None = None,
) -> SignatureInit:
    """Step-0 signature together with the candidates it was selected from.

    Raises:
        EmptyIndexError: The index has no chunks.
    """
    candidates = retriever.query_only(q, k0, kind="init")
    pool = build_candidate_pool(candidates, retriever.index)
    signature = select_signature(
        pool, retriever.embed(q), k_sum, weights or ObjectiveWeights(), mode=mode
    )
    logger.info(
        f"✅ Step-0 signature ({mode}): summaries {list(signature.selected)} "
        f"from a pool of {len(pool.pool_summaries)}"
    )
    return SignatureInit(signature, candidates, len(pool.pool_summaries))


def init_signature(
    q: str,
    retriever: Retriever,
    mode: SelectionMode = "coverage",
    k0: int = 50,
    k_sum: int = 5,
    weights: ObjectiveWeights | None = None,
) -> Signature:
    return initialize_signature(q, retriever, mode, k0, k_sum, weights).signature


def summaries_of(retrieved: RankedList, retriever: Retriever) -> list[SessionSummary]:
    """Distinct summaries of the retrieved chunks, in rank order."""
    seen: dict[int, SessionSummary] = {}
    for chunk_id in retrieved.ids:
        summary = retriever.index.summary_for_chunk(chunk_id)
        seen.setdefault(summary.summary_id, summary)
    return list(seen.values())


# --- Loop ----------------------------------------------------------------------


def _merge_evidence(prior: Sequence[str], new: Sequence[str]) -> tuple[list[str], list[str]]:
    """New evidence list plus any prior items it dropped, appended at the end."""
    kept = set(new)
    dropped = [item for item in prior if item not in kept]
    return list(new) + dropped, dropped


def agent_step(
    state: AgentState,
    retrieved: RankedList,
    summaries_of_retrieved: Sequence[SessionSummary],
    upd: LLMProvider,
    rewrite_enabled: bool,
    *,
    retriever: Retriever,
    question: str,
    options: Sequence[str] | None = None,
    max_steps: int = 3,
    use_signature: bool = True,
) -> tuple[UpdateResult, AgentState]:
    """One update: prompt the updater and derive the next state.

    Without use_signature the update prompt shows no signature and refined
    signatures are not carried into the next state.

    Raises:
        ValueError: state.step has reached max_steps.
        ProviderFailureError: The update provider failed.
    """
    if state.step >= max_steps:
        raise ValueError(f"Step budget exhausted: step {state.step} of {max_steps}")

    passages = [retriever.index.chunk(cid) for cid in retrieved.ids]
    bindings = build_update_bindings(
        question=question,
        options=options,
        step=state.step + 1,
        max_steps=max_steps,
        signature_text=state.signature.rendered_text if use_signature else "",
        current_query=state.query,
        summaries=summaries_of_retrieved,
        evidence=state.evidence,
        passages=passages,
        history=[record.to_dict() for record in state.history],
    )
    decision = request_update(upd, bindings, state.evidence)

    evidence, dropped = _merge_evidence(state.evidence, decision.evidence_memory)
    if dropped:
        logger.warning(f"⚠️ Update dropped {len(dropped)} evidence item(s); restored them")

    signature = state.signature
    if decision.refined_signature and use_signature:
        signature = Signature.from_text(decision.refined_signature, k=state.signature.k)

    query = state.query
    if decision.action is Action.REFINE and rewrite_enabled:
        if decision.rewritten_query:
            query = decision.rewritten_query
        else:
            logger.warning("⚠️ REFINE without <rewritten_query>; keeping the query")

    record = StepRecord(
        step=state.step,
        query=state.query,
        signature=state.signature.rendered_text,
        retrieved_ids=retrieved.ids,
        summary_ids=[s.summary_id for s in summaries_of_retrieved],
        decision=decision.action.value,
        confidence=decision.confidence.value,
        evidence=evidence,
        thought=decision.thought,
        refined_signature=decision.refined_signature,
        rewritten_query=decision.rewritten_query,
        forced=decision.forced,
        repaired_evidence=dropped,
    )
    next_state = AgentState(
        step=state.step + 1,
        query=query,
        signature=signature,
        evidence=evidence,
        history=[*state.history, record],
    )
    return decision, next_state


def _generate(
    gen: LLMProvider,
    retriever: Retriever,
    retrieved: RankedList,
    variant: AnswerVariant,
    task_kind: TaskKind,
    question: str,
    options: Sequence[str] | None,
    signature_text: str,
    evidence: Sequence[str],
) -> GeneratedAnswer:
    chunks = [retriever.index.chunk(cid).text for cid in retrieved.ids]
    context = compose_answer_context(variant, chunks, signature_text, evidence)
    return generate_answer(gen, task_kind, question, context, options)


STATIC_VARIANTS = {
    "query-only": AnswerVariant.CHUNKS,
    "mia-emb": AnswerVariant.CHUNKS,
    "mia-rag": AnswerVariant.CHUNKS_SIG,
}

# "agent-no-sig" runs the same loop with query-only retrieval and no signature
# in the update or answer prompts.
AGENT_METHODS = ("agent", "agent-no-sig")


def default_variant(method: str, config: MindscapeConfig) -> AnswerVariant:
    """Answer variant a method uses when none is given."""
    if method == "agent":
        return AnswerVariant(config.agent.variant)
    if method == "agent-no-sig":
        return AnswerVariant.CHUNKS_EVI
    if method in STATIC_VARIANTS:
        return STATIC_VARIANTS[method]
    raise ValueError(f"Unknown method: {method}")


def run_agent(
    question: str,
    retriever: Retriever,
    updater: LLMProvider,
    generator: LLMProvider,
    config: MindscapeConfig | None = None,
    *,
    task_kind: TaskKind | str = TaskKind.OPEN_QA,
    options: Sequence[str] | None = None,
    variant: AnswerVariant | str | None = None,
    method: str = "agent",
) -> AgentRunResult:
    """Runs init, the retrieve/update loop and the final generation.

    Makes at most config.agent.steps update steps. When the budget runs out
    the answer uses the last retrieved passages with the state produced by
    the last update. method "agent-no-sig" skips the step-0 signature and
    retrieves with the current query alone at every step.

    Raises:
        ValueError: Unknown method, a step budget below 1, or a signature
            variant for "agent-no-sig".
    """
    if method not in AGENT_METHODS:
        raise ValueError(f"Unknown agent method: {method}")
    config = config or MindscapeConfig()
    task_kind = TaskKind(task_kind)
    use_signature = method == "agent"
    variant = AnswerVariant(variant or default_variant(method, config))
    if not use_signature and variant.with_signature:
        raise ValueError(f"{method} cannot answer with variant {variant.value}")
    max_steps = config.agent.steps
    if max_steps < 1:
        raise ValueError(f"The agent needs a step budget of at least 1, got {max_steps}")
    step_k, alpha = config.retrieval.step_k, config.retrieval.alpha

    if use_signature:
        init = initialize_signature(
            question,
            retriever,
            mode=config.agent.init_mode,
            k0=config.signature.k0,
            k_sum=config.signature.k_sum,
            weights=ObjectiveWeights.from_tuple(config.signature.weights),
        )
        init_signature, init_candidate_ids = init.signature, init.candidates.ids
    else:
        init_signature, init_candidate_ids = Signature(), []
    state = AgentState(step=0, query=question, signature=init_signature)
    retrieved: RankedList | None = None
    retrieval_calls = 0

    while state.step < max_steps:
        if use_signature:
            retrieved = retriever.retrieve(state.query, state.signature, step_k, alpha)
        else:
            retrieved = retriever.query_only(state.query, step_k)
        retrieval_calls += 1
        decision, state = agent_step(
            state,
            retrieved,
            summaries_of(retrieved, retriever),
            updater,
            config.agent.rewrite,
            retriever=retriever,
            question=question,
            options=options,
            max_steps=max_steps,
            use_signature=use_signature,
        )
        logger.info(
            f"Step {state.step}/{max_steps}: {decision.action.value} "
            f"({decision.confidence.value})"
        )
        if decision.action is Action.ANSWER:
            break
    else:
        logger.info(f"Step budget of {max_steps} used up; answering with the current state")

    answer = _generate(
        generator, retriever, retrieved, variant, task_kind, question, options,
        state.signature.rendered_text, state.evidence,
    )
    return AgentRunResult(
        question=question,
        method=method,
        task_kind=task_kind.value,
        variant=variant.value,
        init_signature=init_signature,
        init_candidate_ids=init_candidate_ids,
        steps=list(state.history),
        final_retrieved_ids=retrieved.ids,
        final_signature=state.signature.rendered_text,
        final_evidence=list(state.evidence),
        answer=answer,
        update_calls=len(state.history),
        retrieval_calls=retrieval_calls,
    )


def run_signature_rag(
    question: str,
    retriever: Retriever,
    generator: LLMProvider,
    config: MindscapeConfig | None = None,
    method: str = "mia-rag",
    *,
    task_kind: TaskKind | str = TaskKind.OPEN_QA,
    options: Sequence[str] | None = None,
    variant: AnswerVariant | str | None = None,
) -> AgentRunResult:
    """One retrieval pass then generation.

    query-only ranks by the question alone. mia-emb and mia-rag select a
    signature with config.signature.mode and retrieve with the dual score;
    mia-rag also shows the signature to the generator.
    """
    if method not in STATIC_VARIANTS:
        raise ValueError(f"Unknown static method: {method}")
    config = config or MindscapeConfig()
    task_kind = TaskKind(task_kind)
    variant = AnswerVariant(variant or STATIC_VARIANTS[method])
    step_k, alpha = config.retrieval.step_k, config.retrieval.alpha

    if method == "query-only":
        signature = Signature()
        candidate_ids: list[int] = []
        retrieved = retriever.query_only(question, step_k)
    else:
        init = initialize_signature(
            question,
            retriever,
            mode=config.signature.mode,
            k0=config.signature.k0,
            k_sum=config.signature.k_sum,
            weights=ObjectiveWeights.from_tuple(config.signature.weights),
        )
        signature, candidate_ids = init.signature, init.candidates.ids
        retrieved = retriever.retrieve(question, signature, step_k, alpha)

    record = StepRecord(
        step=0,
        query=question,
        signature=signature.rendered_text,
        retrieved_ids=retrieved.ids,
        summary_ids=[s.summary_id for s in summaries_of(retrieved, retriever)],
        decision="STATIC",
        confidence="N/A",
        evidence=[],
    )
    answer = _generate(
        generator, retriever, retrieved, variant, task_kind, question, options,
        signature.rendered_text, [],
    )
    return AgentRunResult(
        question=question,
        method=method,
        task_kind=task_kind.value,
        variant=variant.value,
        init_signature=signature,
        init_candidate_ids=candidate_ids,
        steps=[record],
        final_retrieved_ids=retrieved.ids,
        final_signature=signature.rendered_text,
        final_evidence=[],
        answer=answer,
        update_calls=0,
        retrieval_calls=1,
    )
