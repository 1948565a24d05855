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

"""Chunk retrieval: query-only and signature-conditioned.

Scoring is exhaustive over the index. The signature-conditioned score mixes
two cosines per chunk,

    (1 - alpha) * cos(query, chunk) + alpha * cos(signature, chunk),

with the signature embedded from its rendered text. Rankings sort by score
descending and break ties by the lower chunk_id.
"""

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .mindscape_index import Chunk, MindscapeIndex
from .shared.config import mindscape_constants_dict
from .shared.embeddings import EmbeddingProvider
from .shared.errors import DimMismatchError, EmptyGoldError, EmptyIndexError
from .signature_select import Signature

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedList:
    """(chunk_id, score) pairs, best first."""

    entries: tuple[tuple[int, float], ...]
    k: int

    @property
    def ids(self) -> list[int]:
        return [chunk_id for chunk_id, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [score for _, score in self.entries]

    def top(self, k: int) -> "RankedList":
        return RankedList(entries=self.entries[:k], k=k)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class DualScoreConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def rank_scores(scores: np.ndarray, k: int) -> RankedList:
    """Top-k of a score vector indexed by chunk_id - 1."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(1, len(scores) + 1)
    order = np.lexsort((ids, -scores))[: min(k, len(scores))]
    return RankedList(
        entries=tuple((int(ids[i]), float(scores[i])) for i in order), k=k
    )


def _check_index(index: MindscapeIndex, vector: np.ndarray) -> None:
    if index.num_chunks == 0:
        raise EmptyIndexError(f"Index {index.doc_id!r} has no chunks")
    if index.dim != vector.shape[0]:
        raise DimMismatchError(
            f"Index dim {index.dim} differs from embedding dim {vector.shape[0]}"
        )


def dual_score(c: Chunk, q: np.ndarray, sig: np.ndarray, alpha: float) -> float:
    """(1 - alpha) * cos(q, c) + alpha * cos(sig, c)."""
    DualScoreConfig(alpha)
    return (1.0 - alpha) * float(np.dot(q, c.embedding)) + alpha * float(np.dot(sig, c.embedding))


def dual_scores(index: MindscapeIndex, q: np.ndarray, sig: np.ndarray, alpha: float) -> np.ndarray:
    """dual_score for every chunk of index, vectorized."""
    DualScoreConfig(alpha)
    matrix = index.chunk_matrix
    return (1.0 - alpha) * (matrix @ q) + alpha * (matrix @ sig)


def query_only_retrieve(
    q_text: str, index: MindscapeIndex, k: int, embedder: EmbeddingProvider
) -> RankedList:
    """Ranks chunks by cosine to the query embedding.

    Raises:
        EmptyIndexError: The index has no chunks.
    """
    q = embedder.embed_one(q_text)
    _check_index(index, q)
    return rank_scores(index.chunk_matrix @ q, k)


def mia_retrieve(
    q_text: str,
    signature: Signature,
    index: MindscapeIndex,
    k: int,
    alpha: float,
    embedder: EmbeddingProvider,
) -> RankedList:
    """Ranks chunks by the dual score of (query, signature).

    An empty signature falls back to query-only retrieval.
    """
    if signature is None or signature.is_empty:
        logger.warning("⚠️ Empty signature; falling back to query-only retrieval")
        return query_only_retrieve(q_text, index, k, embedder)
    vectors = embedder.embed([q_text, signature.rendered_text])
    q, sig = vectors[0], vectors[1]
    _check_index(index, q)
    return rank_scores(dual_scores(index, q, sig, alpha), k)


def signature_only_retrieve(
    signature: Signature, index: MindscapeIndex, k: int, embedder: EmbeddingProvider
) -> RankedList:
    """Ranks chunks by cosine to the signature alone."""
    return mia_retrieve("", signature, index, k, 1.0, embedder)


def recall_at_k(retrieved: RankedList | Iterable[int], gold: Iterable[int], k: int) -> float:
    """|gold ∩ top-k| / |gold|.

    Raises:
        EmptyGoldError: gold is empty.
    """
    gold_set = set(gold)
    if not gold_set:
        raise EmptyGoldError("recall_at_k needs at least one gold chunk")
    ids = retrieved.ids if isinstance(retrieved, RankedList) else list(retrieved)
    return len(gold_set & set(ids[:k])) / len(gold_set)


@dataclass
class RetrievalCall:
    kind: str
    query: str
    signature_text: str
    k: int
    alpha: float
    ids: list[int] = field(default_factory=list)


class Retriever:
    """Retrieval over one index with cached text embeddings and a call log.

    The index is read-only, so one Retriever can serve concurrent readers; the
    cache and log are guarded by a lock. The cache keeps the cache_size most
    recently used texts.
    """

    def __init__(
        self,
        index: MindscapeIndex,
        embedder: EmbeddingProvider,
        cache_size: int = mindscape_constants_dict["embedding_cache_size"],
    ):
        if cache_size < 1:
            raise ValueError(f"cache_size must be >= 1, got {cache_size}")
        if index.num_chunks and index.dim != embedder.dim:
            raise DimMismatchError(
                f"Index {index.doc_id!r} has dim {index.dim}, embedder has {embedder.dim}"
            )
        self.index = index
        self.embedder = embedder
        self.calls: list[RetrievalCall] = []
        self.cache_size = cache_size
        self._cache: OrderedDict[str, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(text)
            if cached is not None:
                self._cache.move_to_end(text)
        if cached is not None:
            return cached
        vector = self.embedder.embed_one(text)
        with self._lock:
            self._cache[text] = vector
            self._cache.move_to_end(text)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return vector

    @property
    def cached_texts(self) -> list[str]:
        with self._lock:
            return list(self._cache)

    def _log(self, call: RetrievalCall) -> None:
        with self._lock:
            self.calls.append(call)

    def query_only(self, q_text: str, k: int, kind: str = "query-only") -> RankedList:
        q = self.embed(q_text)
        _check_index(self.index, q)
        ranked = rank_scores(self.index.chunk_matrix @ q, k)
        self._log(RetrievalCall(kind, q_text, "", k, 0.0, ranked.ids))
        return ranked

    def retrieve(self, q_text: str, signature: Signature | None, k: int, alpha: float) -> RankedList:
        """Dual retrieval with (q_text, signature); query-only if signature is empty."""
        if signature is None or signature.is_empty:
            logger.warning("⚠️ Empty signature; falling back to query-only retrieval")
            return self.query_only(q_text, k)
        q = self.embed(q_text)
        sig = self.embed(signature.rendered_text)
        _check_index(self.index, q)
        ranked = rank_scores(dual_scores(self.index, q, sig, alpha), k)
        self._log(RetrievalCall("dual", q_text, signature.rendered_text, k, alpha, ranked.ids))
        return ranked
