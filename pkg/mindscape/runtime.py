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

"""Process-wide pipeline state for the API and the ADK coordinator.

Config comes from $MINDSCAPE_CONFIG (or defaults), the indexes from
eval.index, which $MINDSCAPE_INDEX_PATH overrides. Everything is loaded on
first use and shared; indexes are read-only after loading.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Sequence

from .agent_loop import AGENT_METHODS, AgentRunResult, SignatureInit, initialize_signature, run_agent, run_signature_rag
from .eval_harness import Providers
from .mindscape_index import MindscapeIndex, load_corpus_indexes
from .retrieval import RankedList, Retriever
from .shared.config import MindscapeConfig, load_config
from .shared.embeddings import EmbeddingProvider, build_embedding_provider
from .shared.utils import get_env_var
from .signature_select import ObjectiveWeights

logger = logging.getLogger(__name__)


@dataclass
class MindscapeRuntime:
    config: MindscapeConfig
    embedder: EmbeddingProvider
    providers: Providers
    indexes: dict[str, MindscapeIndex]

    def __post_init__(self):
        self.retrievers = {
            doc_id: Retriever(index, self.embedder) for doc_id, index in self.indexes.items()
        }

    @property
    def doc_ids(self) -> list[str]:
        return sorted(self.indexes)

    def retriever(self, doc_id: str | None = None) -> Retriever:
        """The retriever of doc_id; doc_id may be omitted when one index is loaded."""
        if doc_id is None:
            if len(self.retrievers) != 1:
                raise ValueError(f"doc_id is required; loaded documents: {self.doc_ids}")
            return next(iter(self.retrievers.values()))
        if doc_id not in self.retrievers:
            raise ValueError(f"Unknown doc_id {doc_id!r}; loaded documents: {self.doc_ids}")
        return self.retrievers[doc_id]

    def signature(self, question: str, doc_id: str | None = None, mode: str | None = None) -> SignatureInit:
        sig = self.config.signature
        return initialize_signature(
            question,
            self.retriever(doc_id),
            mode=mode or sig.mode,
            k0=sig.k0,
            k_sum=sig.k_sum,
            weights=ObjectiveWeights.from_tuple(sig.weights),
        )

    def retrieve(
        self, question: str, doc_id: str | None = None, k: int | None = None, alpha: float | None = None
    ) -> tuple[SignatureInit, RankedList]:
        """Step-0 signature followed by one dual-score retrieval."""
        init = self.signature(question, doc_id)
        retrieval = self.config.retrieval
        ranked = self.retriever(doc_id).retrieve(
            question,
            init.signature,
            k or retrieval.step_k,
            retrieval.alpha if alpha is None else alpha,
        )
        return init, ranked

    def ask(
        self,
        question: str,
        doc_id: str | None = None,
        *,
        method: str = "agent",
        task_kind: str = "open_qa",
        options: Sequence[str] | None = None,
        variant: str | None = None,
    ) -> AgentRunResult:
        retriever = self.retriever(doc_id)
        if method in AGENT_METHODS:
            return run_agent(
                question, retriever, self.providers.updater, self.providers.generator,
                self.config, task_kind=task_kind, options=options, variant=variant,
                method=method,
            )
        return run_signature_rag(
            question, retriever, self.providers.generator, self.config, method,
            task_kind=task_kind, options=options, variant=variant,
        )


def build_runtime(config: MindscapeConfig | None = None) -> MindscapeRuntime:
    config = config or load_config()
    index_root = config.evaluation.index or get_env_var("MINDSCAPE_INDEX_PATH")
    indexes = load_corpus_indexes(index_root)
    if not indexes:
        raise ValueError(f"No index found under {index_root}")
    logger.info(f"✅ Loaded {len(indexes)} index(es) from {index_root}")
    return MindscapeRuntime(
        config=config,
        embedder=build_embedding_provider(config.embedding),
        providers=Providers.from_config(config),
        indexes=indexes,
    )


_runtime: MindscapeRuntime | None = None
_runtime_lock = threading.Lock()


def get_runtime() -> MindscapeRuntime:
    """The shared runtime, built on first call."""
    global _runtime
    with _runtime_lock:
        if _runtime is None:
            _runtime = build_runtime()
        return _runtime


def set_runtime(runtime: MindscapeRuntime | None) -> None:
    """Installs (or clears) the shared runtime."""
    global _runtime
    with _runtime_lock:
        _runtime = runtime
