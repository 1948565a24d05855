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

"""Mindscape coordinator agent.

Exposes the signature pipeline to an ADK conversation as two tools: the
full agent (signature init, refine loop, answer) and a single
signature-conditioned retrieval for the coordinator to read itself.
"""

import json
import logging
import os
from datetime import date

from google.adk.agents import Agent
from google.adk.agents.callback_context import CallbackContext
from google.adk.tools import ToolContext
from google.genai import types

from .prompts import return_instructions_coordinator
from .runtime import get_runtime

logger = logging.getLogger(__name__)

date_today = date.today()


def _error(message: str) -> str:
    return json.dumps({"status": "error", "error": message})


def call_signature_agent(
    question: str,
    tool_context: ToolContext,
) -> str:
    """Answers a question about the loaded book with the signature agent.

    Args:
        question (str): The user's question about the book.
        tool_context (ToolContext): Carries `doc_id` when several books are loaded.

    Returns:
        str: JSON with the answer, the final signature, the evidence memory
            and the number of refinement steps.
    """
    try:
        runtime = get_runtime()
        result = runtime.ask(question, tool_context.state.get("doc_id"), method="agent")
        tool_context.state["signature_agent_trace"] = result.trace()
        logger.info(f"✅ Signature agent answered after {result.update_calls} step(s)")
        return json.dumps(
            {
                "status": "success",
                "answer": result.answer_text,
                "raw_answer": result.answer.raw,
                "signature": result.final_signature,
                "evidence": result.final_evidence,
                "steps": result.update_calls,
                "retrieved_ids": result.final_retrieved_ids,
            },
            ensure_ascii=False,
        )
    except Exception as e:
        logger.error(f"❌ Error calling signature agent: {e}")
        return _error(f"Could not answer the question - {e}")


def call_signature_retrieval(
    question: str,
    tool_context: ToolContext,
) -> str:
    """Retrieves passages with the step-0 signature of the question.

    Args:
        question (str): The question or topic to look up.
        tool_context (ToolContext): Carries `doc_id` when several books are loaded.

    Returns:
        str: JSON with the signature text and the ranked passages.
    """
    try:
        runtime = get_runtime()
        doc_id = tool_context.state.get("doc_id")
        init, ranked = runtime.retrieve(question, doc_id)
        index = runtime.retriever(doc_id).index
        passages = [
            {"chunk_id": chunk_id, "score": round(score, 6), "text": index.chunk(chunk_id).text}
            for chunk_id, score in ranked.entries
        ]
        tool_context.state["signature_retrieval"] = {
            "signature": init.signature.rendered_text,
            "retrieved_ids": ranked.ids,
        }
        return json.dumps(
            {
                "status": "success",
                "signature": init.signature.rendered_text,
                "selected_summaries": list(init.signature.selected),
                "passages": passages,
            },
            ensure_ascii=False,
        )
    except Exception as e:
        logger.error(f"❌ Error calling signature retrieval: {e}")
        return _error(f"Could not retrieve passages - {e}")


def setup_before_agent_call(callback_context: CallbackContext):
    """Records the loaded documents in session state."""
    if "available_documents" not in callback_context.state:
        try:
            callback_context.state["available_documents"] = get_runtime().doc_ids
        except Exception as e:
            logger.warning(f"⚠️ No index loaded yet: {e}")
            callback_context.state["available_documents"] = []


root_agent = Agent(
    model=os.getenv("ROOT_AGENT_MODEL", "gemini-2.0-flash"),
    name="mindscape_signature",
    instruction=return_instructions_coordinator(),
    global_instruction=(
        f"""
        You are a long-document reading assistant backed by a signature-guided retriever.
        Today's date: {date_today}
        """
    ),
    tools=[
        call_signature_agent,
        call_signature_retrieval,
    ],
    before_agent_callback=setup_before_agent_call,
    generate_content_config=types.GenerateContentConfig(temperature=0.01),
)
