"""Shared fixtures for the mindscape tests."""

import pytest
from dotenv import find_dotenv, load_dotenv

from mindscape.eval_harness import Providers
from mindscape.mindscape_index import chunk_document, index_from_chunks
from mindscape.retrieval import Retriever
from mindscape.runtime import MindscapeRuntime, set_runtime
from mindscape.shared.config import MindscapeConfig
from mindscape.shared.embeddings import HashEmbeddingProvider
from mindscape.shared.llm_provider import (
    ScriptedLLMProvider,
    answer_extractive,
    summary_echo,
    update_answer,
)

from .fakes import synthetic_text


@pytest.fixture(scope="session", autouse=True)
def load_env():
    load_dotenv(find_dotenv(".env"))


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    for name in ("MINDSCAPE_CONFIG", "MINDSCAPE_ALPHA", "MINDSCAPE_STEPS",
                 "MINDSCAPE_CACHE_DIR", "MINDSCAPE_INDEX_PATH"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def hash_embedder():
    return HashEmbeddingProvider(dim=64)


@pytest.fixture
def echo_summarizer():
    return ScriptedLLMProvider(responder=summary_echo, name="summary-echo")


@pytest.fixture
def small_index(hash_embedder, echo_summarizer):
    """45 chunks of 5 words in windows of 20, so three summaries."""
    chunks = chunk_document(synthetic_text(45, 5, "c"), 5, doc_id="book")
    return index_from_chunks(chunks, "book", hash_embedder, echo_summarizer, window_size=20)


@pytest.fixture
def small_retriever(small_index, hash_embedder):
    return Retriever(small_index, hash_embedder)


@pytest.fixture
def offline_config():
    return MindscapeConfig.model_validate(
        {
            "signature": {"k0": 10, "k_sum": 3},
            "retrieval": {"step_k": 4, "alpha": 0.5},
        }
    )


@pytest.fixture
def offline_runtime(small_index, hash_embedder, echo_summarizer, offline_config):
    """Installs a one-book runtime with offline providers as the shared runtime."""
    runtime = MindscapeRuntime(
        config=offline_config,
        embedder=hash_embedder,
        providers=Providers(
            summarizer=echo_summarizer,
            updater=ScriptedLLMProvider(responder=update_answer, name="updater"),
            generator=ScriptedLLMProvider(responder=answer_extractive, name="generator"),
        ),
        indexes={"book": small_index},
    )
    set_runtime(runtime)
    yield runtime
    set_runtime(None)
