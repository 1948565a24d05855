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

"""Vector primitives and embedding providers.

All similarities in the package are cosines of unit vectors, so every provider
returns L2-normalized float64 rows. The offline hash embedder makes the whole
pipeline runnable without a model.
"""

import hashlib
import logging
import os
import threading
from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np
import requests

from .config import EmbeddingConfig
from .errors import (
    DimMismatchError,
    ProviderFailureError,
    ProviderTimeoutError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

# Norm checks use single-precision-friendly tolerance.
NORM_TOLERANCE = 1e-6
# Character n-gram width of the hash embedder.
HASH_NGRAM = 3
MIN_HASH_DIM = 8


def normalize(v: Sequence[float] | np.ndarray) -> np.ndarray:
    """Scales v to unit Euclidean norm.

    Raises:
        ZeroVectorError: If every element is zero.
    """
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVectorError("Cannot normalize an all-zero vector")
    return arr / norm


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors (their dot product)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimMismatchError(f"Vector dims differ: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))


def reserved_vector(dim: int) -> np.ndarray:
    """The basis vector e1, used for empty text."""
    vec = np.zeros(dim, dtype=np.float64)
    vec[0] = 1.0
    return vec


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Deterministic embedding from hashed character n-grams.

    Text is lowercased and whitespace-collapsed, padded with one space on each
    side, and every character trigram is hashed (blake2b, platform independent)
    into one of buckets 1..dim-1 with a hash-derived sign. Bucket 0 is reserved
    for empty text, whose embedding is e1.

    Args:
        text: Input text.
        dim: Output dimension, at least 8.

    Returns:
        A unit-norm float64 vector.
    """
    if dim < MIN_HASH_DIM:
        raise ValueError(f"hash_embed needs dim >= {MIN_HASH_DIM}, got {dim}")

    collapsed = " ".join(text.lower().split())
    if not collapsed:
        return reserved_vector(dim)

    padded = f" {collapsed} "
    buckets = []
    signs = []
    for i in range(len(padded) - HASH_NGRAM + 1):
        digest = hashlib.blake2b(
            padded[i:i + HASH_NGRAM].encode("utf-8"), digest_size=8
        ).digest()
        h = int.from_bytes(digest, "little")
        buckets.append(1 + h % (dim - 1))
        signs.append(-1.0 if h >> 63 else 1.0)

    vec = np.zeros(dim, dtype=np.float64)
    np.add.at(vec, np.asarray(buckets, dtype=np.int64), np.asarray(signs))
    try:
        return normalize(vec)
    except ZeroVectorError:
        # Signed collisions cancelled out; treat like empty text.
        logger.warning(f"⚠️ hash_embed produced a zero vector for {text[:40]!r}")
        return reserved_vector(dim)


class EmbeddingProvider(ABC):
    """Maps batches of text to unit-norm vectors of a fixed dim.

    Subclasses implement _embed_batch. Providers that cannot take concurrent
    calls set single_flight and are serialized by a per-instance lock.
    """

    def __init__(self, name: str, dim: int, single_flight: bool = False):
        if dim < 1:
            raise ValueError(f"Embedding dim must be positive, got {dim}")
        self.name = name
        self.dim = dim
        self.single_flight = single_flight
        self._lock = threading.Lock()

    @abstractmethod
    def _embed_batch(self, texts: list[str]) -> np.ndarray | list[list[float]]:
        """Returns one raw vector per text."""

    def fingerprint(self) -> str:
        return f"{self.name}:{self.dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Embeds texts into an (n, dim) array of unit rows."""
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float64)

        if self.single_flight:
            with self._lock:
                raw = self._embed_batch(texts)
        else:
            raw = self._embed_batch(texts)

        rows = np.asarray(raw, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != len(texts):
            raise ProviderFailureError(
                f"{self.name} returned {rows.shape} for {len(texts)} texts"
            )
        if rows.shape[1] != self.dim:
            raise DimMismatchError(
                f"{self.name} returned dim {rows.shape[1]}, expected {self.dim}"
            )
        return np.vstack([normalize(row) for row in rows])

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed([text])[0]


class HashEmbeddingProvider(EmbeddingProvider):
    """Offline provider backed by hash_embed."""

    def __init__(self, dim: int = 256):
        if dim < MIN_HASH_DIM:
            raise ValueError(f"offline-hash needs dim >= {MIN_HASH_DIM}, got {dim}")
        super().__init__(name="offline-hash", dim=dim)

    def _embed_batch(self, texts: list[str]) -> np.ndarray:
        return np.vstack([hash_embed(t, self.dim) for t in texts])


class HttpEmbeddingProvider(EmbeddingProvider):
    """Remote provider speaking {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(
        self,
        endpoint: str,
        dim: int,
        token_env: str | None = None,
        batch_size: int = 64,
        timeout: float = 60.0,
        single_flight: bool = False,
    ):
        super().__init__(name=f"http:{endpoint}", dim=dim, single_flight=single_flight)
        self.endpoint = endpoint
        self.token_env = token_env
        self.batch_size = batch_size
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.token_env:
            token = os.getenv(self.token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
            else:
                logger.warning(f"⚠️ {self.token_env} is not set; calling without auth")
        return headers

    def _embed_batch(self, texts: list[str]) -> list[list[float]]:
        vectors: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start:start + self.batch_size]
            try:
                response = requests.post(
                    self.endpoint,
                    json={"texts": batch},
                    headers=self._headers(),
                    timeout=self.timeout,
                )
                response.raise_for_status()
                payload = response.json()
            except requests.Timeout as e:
                raise ProviderTimeoutError(f"Embedding request timed out: {e}") from e
            except (requests.RequestException, ValueError) as e:
                raise ProviderFailureError(f"Embedding request failed: {e}") from e

            batch_vectors = payload.get("vectors") if isinstance(payload, dict) else None
            if not isinstance(batch_vectors, list) or len(batch_vectors) != len(batch):
                raise ProviderFailureError(
                    f"Embedding endpoint returned a malformed payload for {len(batch)} texts"
                )
            vectors.extend(batch_vectors)
        return vectors


class GeminiEmbeddingProvider(EmbeddingProvider):
    """google-genai embed_content backend."""

    def __init__(self, model: str, dim: int, batch_size: int = 64):
        super().__init__(name=f"gemini:{model}", dim=dim)
        self.model = model
        self.batch_size = batch_size

    def _embed_batch(self, texts: list[str]) -> list[list[float]]:
        from .llm_provider import get_genai_client

        client = get_genai_client()
        vectors: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start:start + self.batch_size]
            try:
                result = client.models.embed_content(model=self.model, contents=batch)
            except Exception as e:
                raise ProviderFailureError(f"Gemini embedding failed: {e}") from e
            vectors.extend(list(item.values) for item in result.embeddings)
        return vectors


def build_embedding_provider(config: EmbeddingConfig) -> EmbeddingProvider:
    """Instantiates the provider named by config.kind."""
    if config.kind == "offline-hash":
        return HashEmbeddingProvider(dim=config.dim)
    if config.kind == "http":
        if not config.endpoint:
            raise ValueError("embedding.endpoint is required for kind 'http'")
        return HttpEmbeddingProvider(
            endpoint=config.endpoint,
            dim=config.dim,
            token_env=config.token_env,
            batch_size=config.batch_size,
            timeout=config.timeout,
            single_flight=config.single_flight,
        )
    if config.kind == "gemini":
        return GeminiEmbeddingProvider(
            model=config.model or "text-embedding-004",
            dim=config.dim,
            batch_size=config.batch_size,
        )
    raise ValueError(f"Unknown embedding provider kind: {config.kind}")
