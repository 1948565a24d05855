"""The signature agent loop and the static signature pipelines."""

import json

import pytest

from mindscape.agent_loop import (
    AgentState,
    AnswerVariant,
    agent_step,
    compose_answer_context,
    init_signature,
    initialize_signature,
    run_agent,
    run_signature_rag,
    validate_trace,
    write_trace,
)
from mindscape.retrieval import Retriever
from mindscape.shared.llm_provider import ScriptedLLMProvider, answer_extractive, update_answer, update_refine
from mindscape.signature_select import Signature
from mindscape.sub_agents.updater import Action, Confidence, UpdateResult, format_update_output

QUESTION = "Where is c12w3 mentioned?"


def _reply(action, confidence, evidence, refined=None, query=None, thought="t"):
    return format_update_output(
        UpdateResult(Action(action), Confidence(confidence), evidence, thought, refined, query)
    )


def _generator():
    return ScriptedLLMProvider(responder=answer_extractive, name="gen")


def _fresh(retriever: Retriever) -> Retriever:
    return Retriever(retriever.index, retriever.embedder)


def test_compose_answer_context_sections():
    chunks = ["first passage", "second passage"]
    assert compose_answer_context("chunks", chunks, "sig", ["e"]) == "[1] first passage\n\n[2] second passage"
    assert compose_answer_context(AnswerVariant.CHUNKS_SIG_EVI, chunks, "The compass.", ["a", "b"]) == (
        "Global signature:\nThe compass.\n\n"
        "Evidence memory:\n- a\n- b\n\n"
        "Retrieved passages:\n[1] first passage\n\n[2] second passage"
    )
    assert compose_answer_context("chunks+sig", chunks, "  ", []) == "[1] first passage\n\n[2] second passage"
    assert compose_answer_context("chunks+evi", ["only"], "ignored", ["x"]) == (
        "Evidence memory:\n- x\n\nRetrieved passages:\n[1] only"
    )
    with pytest.raises(ValueError):
        compose_answer_context("chunks", [])


def test_first_k_init_uses_rank_order(small_retriever):
    init = initialize_signature(QUESTION, small_retriever, mode="first-k", k0=45, k_sum=5)
    assert init.pool_size == 3
    assert sorted(init.signature.selected) == [1, 2, 3]
    first_seen = []
    for chunk_id in init.candidates.ids:
        sid = small_retriever.index.summary_for_chunk(chunk_id).summary_id
        if sid not in first_seen:
            first_seen.append(sid)
    assert list(init.signature.selected) == first_seen
    assert small_retriever.calls[0].kind == "init"
    assert init_signature(QUESTION, _fresh(small_retriever), mode="first-k", k0=45) == init.signature


def test_budget_counts(small_retriever, offline_config):
    """One init retrieval, then three retrieve/update rounds."""
    updater = ScriptedLLMProvider(responder=update_refine)
    result = run_agent(QUESTION, small_retriever, updater, _generator(), offline_config)
    kinds = [call.kind for call in small_retriever.calls]
    assert (kinds.count("init"), result.retrieval_calls, result.update_calls) == (1, 3, 3)
    assert kinds == ["init", "dual", "dual", "dual"]
    assert updater.call_count == 3
    assert [r.decision for r in result.steps] == ["REFINE"] * 3


@pytest.mark.parametrize("steps", [3, 5])
def test_refine_refine_answer_stops_at_third_step(small_retriever, offline_config, steps):
    """REFINE, REFINE, ANSWER costs three updates and three retrievals, whatever the budget."""
    config = offline_config.model_copy(
        update={"agent": offline_config.agent.model_copy(update={"steps": steps})}
    )
    updater = ScriptedLLMProvider(
        responses=[
            _reply("REFINE", "LOW", ["e1"], refined="Session one.", query="c12w3 first"),
            _reply("REFINE", "MEDIUM", ["e1", "e2"], refined="Sessions one and two.", query="c12w3 second"),
            _reply("ANSWER", "HIGH", ["e1", "e2", "e3"]),
        ]
    )
    result = run_agent(QUESTION, small_retriever, updater, _generator(), config)

    assert [r.decision for r in result.steps] == ["REFINE", "REFINE", "ANSWER"]
    assert (result.update_calls, result.retrieval_calls) == (3, 3)
    assert updater.call_count == 3
    assert updater.remaining == 0
    assert [c.kind for c in small_retriever.calls] == ["init", "dual", "dual", "dual"]
    assert [r.query for r in result.steps] == [QUESTION, "c12w3 first", "c12w3 second"]
    assert result.steps[2].signature == "Sessions one and two."
    assert result.final_retrieved_ids == result.steps[2].retrieved_ids
    assert result.final_evidence == ["e1", "e2", "e3"]


def test_agent_rejects_empty_step_budget(small_retriever, offline_config):
    # model_copy skips validation, so steps=0 reaches run_agent.
    config = offline_config.model_copy(
        update={"agent": offline_config.agent.model_copy(update={"steps": 0})}
    )
    updater = ScriptedLLMProvider(responder=update_answer)
    with pytest.raises(ValueError, match="step budget"):
        run_agent(QUESTION, small_retriever, updater, _generator(), config)
    assert updater.call_count == 0


def test_agent_without_signature(small_retriever, offline_config):
    updater = ScriptedLLMProvider(
        responses=[
            _reply("REFINE", "LOW", ["e1"], refined="A signature to ignore.", query="c12w3"),
            _reply("ANSWER", "HIGH", ["e1", "e2"]),
        ]
    )
    generator = _generator()
    result = run_agent(
        QUESTION, small_retriever, updater, generator, offline_config, method="agent-no-sig"
    )

    assert result.method == "agent-no-sig"
    assert result.variant == "chunks+evi"
    assert result.init_signature.is_empty
    assert result.init_candidate_ids == []
    assert [c.kind for c in small_retriever.calls] == ["query-only", "query-only"]
    assert [c.query for c in small_retriever.calls] == [QUESTION, "c12w3"]
    assert [r.signature for r in result.steps] == ["", ""]
    assert result.final_signature == ""
    for _, user in updater.calls:
        assert "Current signature:\n(empty)" in user
        assert "A signature to ignore." not in user

    answer_prompt = generator.calls[0][1]
    assert "Global signature:" not in answer_prompt
    assert "Evidence memory:\n- e1\n- e2" in answer_prompt
    validate_trace(result.trace())


def test_agent_without_signature_rejects_signature_variants(small_retriever, offline_config):
    with pytest.raises(ValueError):
        run_agent(
            QUESTION, small_retriever, ScriptedLLMProvider(responder=update_answer), _generator(),
            offline_config, method="agent-no-sig", variant="chunks+sig",
        )
    with pytest.raises(ValueError):
        run_agent(
            QUESTION, small_retriever, ScriptedLLMProvider(responder=update_answer), _generator(),
            offline_config, method="mia-rag",
        )


def test_budget_exhaustion_answers_with_last_state(small_retriever, offline_config):
    updater = ScriptedLLMProvider(responder=update_refine)
    generator = _generator()
    result = run_agent(QUESTION, small_retriever, updater, generator, offline_config)
    last = result.steps[-1]

    assert result.final_retrieved_ids == last.retrieved_ids
    assert result.final_signature == last.refined_signature
    assert result.final_evidence == last.evidence

    prompt = generator.calls[0][1]
    assert f"Global signature:\n{result.final_signature}" in prompt
    first_passage = small_retriever.index.chunk(last.retrieved_ids[0]).text
    assert f"Retrieved passages:\n[1] {first_passage}" in prompt


def test_retrieval_follows_query_and_signature(small_retriever, offline_config):
    result = run_agent(
        QUESTION, small_retriever, ScriptedLLMProvider(responder=update_refine), _generator(),
        offline_config,
    )
    loop_calls = [c for c in small_retriever.calls if c.kind != "init"]
    assert len(loop_calls) == len(result.steps)
    for call, record in zip(loop_calls, result.steps):
        assert call.query == record.query
        assert call.signature_text == record.signature
        assert call.ids == record.retrieved_ids
        assert call.k == offline_config.retrieval.step_k


@pytest.mark.parametrize("rewrite", [True, False])
def test_rewrite_toggle(small_retriever, offline_config, rewrite):
    config = offline_config.model_copy(
        update={"agent": offline_config.agent.model_copy(update={"rewrite": rewrite})}
    )
    result = run_agent(
        QUESTION, small_retriever, ScriptedLLMProvider(responder=update_refine), _generator(), config
    )
    queries = [r.query for r in result.steps]
    if rewrite:
        assert queries == [QUESTION, f"{QUESTION} (details)", f"{QUESTION} (details)"]
    else:
        assert queries == [QUESTION] * 3
    # The signature is refined either way.
    assert result.steps[1].signature.startswith("Focus on:")


def test_refine_then_answer_trace(small_retriever, offline_config, tmp_path):
    updater = ScriptedLLMProvider(
        responses=[
            _reply("REFINE", "MEDIUM", ["c12 appears in the first session"],
                   refined="Session one, the c12 passages.", query="c12w3 passage"),
            _reply("ANSWER", "HIGH", ["c12 appears in the first session", "chunk 12 holds c12w3"]),
        ]
    )
    result = run_agent(QUESTION, small_retriever, updater, _generator(), offline_config)

    assert [(r.decision, r.confidence) for r in result.steps] == [("REFINE", "MEDIUM"), ("ANSWER", "HIGH")]
    assert result.update_calls == 2
    assert result.retrieval_calls == 2
    assert result.steps[1].query == "c12w3 passage"
    assert result.steps[1].signature == "Session one, the c12 passages."
    assert result.final_signature == "Session one, the c12 passages."
    assert result.final_evidence == ["c12 appears in the first session", "chunk 12 holds c12w3"]
    assert result.answer_text

    path = write_trace(result, tmp_path / "trace.json")
    trace = json.loads(path.read_text(encoding="utf-8"))
    validate_trace(trace)
    assert trace["init"]["selected"] == list(result.init_signature.selected)
    assert trace["steps"][0]["rewritten_query"] == "c12w3 passage"


def test_dropped_evidence_is_restored(small_retriever, offline_config, caplog):
    updater = ScriptedLLMProvider(
        responses=[
            _reply("REFINE", "LOW", ["alpha", "beta"], refined="compass", query="q2"),
            _reply("ANSWER", "HIGH", ["gamma", "alpha"]),
        ]
    )
    result = run_agent(QUESTION, small_retriever, updater, _generator(), offline_config)
    assert result.final_evidence == ["gamma", "alpha", "beta"]
    assert result.steps[1].repaired_evidence == ["beta"]
    assert "dropped 1 evidence item" in caplog.text


def test_unparseable_update_forces_answer(small_retriever, offline_config):
    updater = ScriptedLLMProvider(responses=["no tags at all", "still nothing"])
    result = run_agent(QUESTION, small_retriever, updater, _generator(), offline_config)
    assert result.update_calls == 1
    assert result.steps[0].forced
    assert result.steps[0].decision == "ANSWER"
    assert updater.call_count == 2
    assert result.answer.raw is not None


def test_agent_is_deterministic(small_retriever, offline_config):
    def once():
        return run_agent(
            QUESTION, _fresh(small_retriever), ScriptedLLMProvider(responder=update_refine),
            _generator(), offline_config,
        ).trace()

    assert once() == once()


def test_single_answer_step_matches_static_mia_emb(small_retriever, offline_config):
    config = offline_config.model_copy(
        update={"signature": offline_config.signature.model_copy(update={"mode": "first-k"})}
    )
    agent = run_agent(
        QUESTION, _fresh(small_retriever), ScriptedLLMProvider(responder=update_answer),
        _generator(), config, variant="chunks",
    )
    static = run_signature_rag(QUESTION, _fresh(small_retriever), _generator(), config, "mia-emb")
    assert agent.update_calls == 1
    assert agent.final_retrieved_ids == static.final_retrieved_ids
    assert agent.init_signature == static.init_signature


def test_static_methods(small_retriever, offline_config):
    generator = _generator()
    plain = run_signature_rag(QUESTION, _fresh(small_retriever), generator, offline_config, "query-only")
    assert plain.init_candidate_ids == []
    assert plain.steps[0].decision == "STATIC"
    assert plain.retrieval_calls == 1 and plain.update_calls == 0

    rag = run_signature_rag(QUESTION, _fresh(small_retriever), generator, offline_config, "mia-rag")
    emb = run_signature_rag(QUESTION, _fresh(small_retriever), generator, offline_config, "mia-emb")
    assert rag.variant == "chunks+sig" and emb.variant == "chunks"
    assert "Global signature:" not in generator.calls[0][1]
    assert "Global signature:" in generator.calls[1][1]
    assert "Global signature:" not in generator.calls[2][1]
    validate_trace(rag.trace())

    with pytest.raises(ValueError):
        run_signature_rag(QUESTION, small_retriever, generator, offline_config, "agent")


def test_agent_step_refuses_past_budget(small_retriever):
    state = AgentState(step=3, query=QUESTION, signature=Signature.from_text("s"))
    retrieved = small_retriever.query_only(QUESTION, 2)
    with pytest.raises(ValueError):
        agent_step(
            state, retrieved, [], ScriptedLLMProvider(responses=[]), True,
            retriever=small_retriever, question=QUESTION, max_steps=3,
        )
