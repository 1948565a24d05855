"""Coordinator tools, called the way the ADK runtime calls them."""

import json

import pytest

pytest.importorskip("google.adk")

from mindscape.agent import (  # noqa: E402
    call_signature_agent,
    call_signature_retrieval,
    root_agent,
    setup_before_agent_call,
)
from mindscape.runtime import set_runtime  # noqa: E402

QUESTION = "Where is c12w3 mentioned?"


class SimpleToolContext:
    def __init__(self, **state):
        self.state = dict(state)


def test_coordinator_exposes_both_tools():
    assert root_agent.name == "mindscape_signature"
    assert [tool.__name__ for tool in root_agent.tools] == [
        "call_signature_agent", "call_signature_retrieval",
    ]


def test_signature_retrieval_tool(offline_runtime):
    context = SimpleToolContext()
    result = json.loads(call_signature_retrieval(QUESTION, context))
    assert result["status"] == "success"
    assert len(result["passages"]) == offline_runtime.config.retrieval.step_k
    assert context.state["signature_retrieval"]["retrieved_ids"] == [
        p["chunk_id"] for p in result["passages"]
    ]
    assert result["signature"] == context.state["signature_retrieval"]["signature"]


def test_signature_agent_tool(offline_runtime):
    context = SimpleToolContext(doc_id="book")
    result = json.loads(call_signature_agent(QUESTION, context))
    assert result["status"] == "success"
    assert result["steps"] == 1
    assert result["answer"]
    assert context.state["signature_agent_trace"]["final"]["retrieved_ids"] == result["retrieved_ids"]


def test_tools_report_errors(offline_runtime):
    result = json.loads(call_signature_agent(QUESTION, SimpleToolContext(doc_id="missing")))
    assert result["status"] == "error"
    assert "missing" in result["error"]


def test_tools_without_index(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    set_runtime(None)
    result = json.loads(call_signature_retrieval(QUESTION, SimpleToolContext()))
    assert result["status"] == "error"


def test_setup_records_documents(offline_runtime):
    context = SimpleToolContext()
    setup_before_agent_call(context)
    assert context.state["available_documents"] == ["book"]
