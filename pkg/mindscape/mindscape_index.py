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

"""Document memory: chunks, session windows, summaries and persistence.

A document is split into word chunks numbered 1..L in source order. Chunks are
grouped into non-overlapping windows of W consecutive chunks; window j holds
every chunk l with ceil(l / W) == j and gets one LLM-written summary. The
chunk -> summary mapping is therefore fixed by position alone.

On disk an index is a directory with a JSON manifest and a binary file of
little-endian float64 embeddings, both covered by sha256 checksums.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .shared.config import IndexConfig
from .shared.embeddings import EmbeddingProvider
from .shared.errors import (
    CorruptIndexError,
    EmptyDocumentError,
    OutOfRangeError,
    VersionMismatchError,
)
from .shared.llm_provider import LLMProvider
from .shared.utils import atomic_write_bytes, atomic_write_text, canonical_json, sha256_hex
from .sub_agents.summarizer import SummaryCache, summarize_window, summary_prompt_hash

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"
VECTOR_DTYPE = "<f8"


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Chunk:
    """A passage of a document, chunk_id is its 1-based source position."""

    doc_id: str
    chunk_id: int
    text: str
    embedding: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, Chunk):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and self.chunk_id == other.chunk_id
            and self.text == other.text
            and _arrays_equal(self.embedding, other.embedding)
        )


@dataclass(frozen=True)
class SessionSummary:
    """Summary of one window; covered_chunks are the chunk ids it maps from."""

    doc_id: str
    summary_id: int
    text: str
    covered_chunks: frozenset[int]
    embedding: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, SessionSummary):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and self.summary_id == other.summary_id
            and self.text == other.text
            and self.covered_chunks == other.covered_chunks
            and _arrays_equal(self.embedding, other.embedding)
        )


def _arrays_equal(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)


def summary_of(chunk_id: int, W: int, num_chunks: int | None = None) -> int:
    """Returns ceil(chunk_id / W), the summary covering chunk_id.

    Raises:
        OutOfRangeError: chunk_id < 1, or chunk_id > num_chunks when given.
    """
    if W < 1:
        raise ValueError(f"Window size must be positive, got {W}")
    if chunk_id < 1 or (num_chunks is not None and chunk_id > num_chunks):
        raise OutOfRangeError(f"Chunk id {chunk_id} outside 1..{num_chunks or 'L'}")
    return (chunk_id + W - 1) // W


def covered_chunk_ids(summary_id: int, W: int, num_chunks: int) -> frozenset[int]:
    start = (summary_id - 1) * W + 1
    return frozenset(range(start, min(summary_id * W, num_chunks) + 1))


def chunk_document(text: str, target_len: int, doc_id: str = "doc") -> list[Chunk]:
    """Splits text into chunks of target_len whitespace-delimited words.

    Joining the chunk texts with single spaces gives back the source with its
    whitespace collapsed. Only the last chunk may be shorter.

    Raises:
        EmptyDocumentError: The text has no words.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be positive, got {target_len}")
    words = text.split()
    if not words:
        raise EmptyDocumentError(f"Document {doc_id!r} has no words")
    return [
        Chunk(doc_id=doc_id, chunk_id=n + 1, text=" ".join(words[start:start + target_len]))
        for n, start in enumerate(range(0, len(words), target_len))
    ]


def sessionize(chunks: Sequence[Chunk], W: int) -> list[list[Chunk]]:
    """Partitions chunks into ceil(L / W) windows of consecutive chunks."""
    if not chunks:
        raise ValueError("Cannot sessionize an empty chunk list")
    if W < 1:
        raise ValueError(f"Window size must be positive, got {W}")
    num_windows = (len(chunks) + W - 1) // W
    windows: list[list[Chunk]] = [[] for _ in range(num_windows)]
    for chunk in chunks:
        windows[summary_of(chunk.chunk_id, W, len(chunks)) - 1].append(chunk)
    return windows


def window_text(window: Sequence[Chunk]) -> str:
    return "\n\n".join(chunk.text for chunk in window)


def build_summaries(
    windows: Sequence[Sequence[Chunk]],
    llm: LLMProvider,
    doc_id: str | None = None,
    cache_dir: str | Path | None = None,
    embedder: EmbeddingProvider | None = None,
    workers: int = 1,
) -> list[SessionSummary]:
    """Writes one summary per window with the session-summary prompt.

    Cached summaries are reused, so a warm cache issues no LLM calls. Windows
    are summarized in parallel when workers > 1 and the provider is not
    single-flight.
    """
    if not windows:
        return []
    doc_id = doc_id or windows[0][0].doc_id
    total = len(windows)
    cache = SummaryCache(cache_dir) if cache_dir is not None else None
    prompt_hash = summary_prompt_hash()

    def summarize(idx: int) -> str:
        raw_text = window_text(windows[idx - 1])
        key = SummaryCache.key(doc_id, idx, raw_text, prompt_hash)
        if cache is not None:
            cached = cache.get(key)
            if cached is not None:
                logger.debug(f"✅ Summary cache hit: {doc_id} window {idx}/{total}")
                return cached
        summary = summarize_window(idx, total, raw_text, llm)
        if cache is not None:
            cache.put(key, doc_id, idx, summary)
        return summary

    indices = list(range(1, total + 1))
    if workers > 1 and not llm.single_flight:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            texts = list(pool.map(summarize, indices))
    else:
        texts = [summarize(idx) for idx in indices]

    embeddings = embedder.embed(texts) if embedder is not None else [None] * total
    return [
        SessionSummary(
            doc_id=doc_id,
            summary_id=idx,
            text=text,
            covered_chunks=frozenset(c.chunk_id for c in windows[idx - 1]),
            embedding=embeddings[idx - 1],
        )
        for idx, text in zip(indices, texts)
    ]


@dataclass(frozen=True)
class MindscapeIndex:
    """Chunks plus session summaries of one document (or merged series)."""

    doc_id: str
    window_size: int
    chunks: tuple[Chunk, ...]
    summaries: tuple[SessionSummary, ...]
    embedder_fingerprint: str = ""
    summarizer_fingerprint: str = ""
    prompt_hash: str = ""
    chunk_words: int = 0
    # Chunk-id offsets of the books merged into a series index.
    book_offsets: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Checks the chunk numbering and the window partition."""
        L = len(self.chunks)
        W = self.window_size
        if W < 1:
            raise ValueError(f"Window size must be positive, got {W}")
        if [c.chunk_id for c in self.chunks] != list(range(1, L + 1)):
            raise ValueError("Chunk ids must run 1..L in order")
        if len(self.summaries) != (L + W - 1) // W:
            raise ValueError(
                f"{len(self.summaries)} summaries for {L} chunks with W={W}"
            )
        for j, summary in enumerate(self.summaries, start=1):
            if summary.summary_id != j:
                raise ValueError("Summary ids must run 1..J in order")
            if summary.covered_chunks != covered_chunk_ids(j, W, L):
                raise ValueError(f"Summary {j} covers the wrong chunks")

    @property
    def num_chunks(self) -> int:
        return len(self.chunks)

    @property
    def dim(self) -> int:
        return 0 if not self.chunks else int(self.chunk_matrix.shape[1])

    @cached_property
    def chunk_matrix(self) -> np.ndarray:
        if not self.chunks:
            return np.zeros((0, 0), dtype=np.float64)
        return np.vstack([c.embedding for c in self.chunks])

    @cached_property
    def summary_matrix(self) -> np.ndarray:
        if not self.summaries:
            return np.zeros((0, 0), dtype=np.float64)
        return np.vstack([s.embedding for s in self.summaries])

    def chunk(self, chunk_id: int) -> Chunk:
        if not 1 <= chunk_id <= len(self.chunks):
            raise OutOfRangeError(f"Chunk id {chunk_id} outside 1..{len(self.chunks)}")
        return self.chunks[chunk_id - 1]

    def summary(self, summary_id: int) -> SessionSummary:
        if not 1 <= summary_id <= len(self.summaries):
            raise OutOfRangeError(
                f"Summary id {summary_id} outside 1..{len(self.summaries)}"
            )
        return self.summaries[summary_id - 1]

    def summary_for_chunk(self, chunk_id: int) -> SessionSummary:
        return self.summary(summary_of(chunk_id, self.window_size, len(self.chunks)))


def embed_chunks(chunks: Sequence[Chunk], embedder: EmbeddingProvider) -> list[Chunk]:
    vectors = embedder.embed([c.text for c in chunks])
    return [
        Chunk(doc_id=c.doc_id, chunk_id=c.chunk_id, text=c.text, embedding=v)
        for c, v in zip(chunks, vectors)
    ]


def index_from_chunks(
    chunks: Sequence[Chunk],
    doc_id: str,
    embedder: EmbeddingProvider,
    summarizer: LLMProvider,
    window_size: int,
    cache_dir: str | Path | None = None,
    workers: int = 1,
    chunk_words: int = 0,
    book_offsets: dict[str, int] | None = None,
) -> MindscapeIndex:
    """Builds an index from already chunked text (ids 1..L)."""
    embedded = embed_chunks(chunks, embedder)
    windows = sessionize(embedded, window_size)
    summaries = build_summaries(
        windows, summarizer, doc_id=doc_id, cache_dir=cache_dir,
        embedder=embedder, workers=workers,
    )
    return MindscapeIndex(
        doc_id=doc_id,
        window_size=window_size,
        chunks=tuple(embedded),
        summaries=tuple(summaries),
        embedder_fingerprint=embedder.fingerprint(),
        summarizer_fingerprint=summarizer.name,
        prompt_hash=summary_prompt_hash(),
        chunk_words=chunk_words,
        book_offsets=dict(book_offsets or {}),
    )


def build_index(
    document: Document,
    embedder: EmbeddingProvider,
    summarizer: LLMProvider,
    config: IndexConfig | None = None,
) -> MindscapeIndex:
    """Chunks, sessionizes, summarizes and embeds one document."""
    config = config or IndexConfig()
    logger.info(f"🚀 Building index for {document.doc_id}")
    chunks = chunk_document(document.text, config.chunk_words, doc_id=document.doc_id)
    index = index_from_chunks(
        chunks,
        doc_id=document.doc_id,
        embedder=embedder,
        summarizer=summarizer,
        window_size=config.window_size,
        cache_dir=config.cache_dir,
        workers=config.workers,
        chunk_words=config.chunk_words,
    )
    logger.info(
        f"✅ Indexed {document.doc_id}: {index.num_chunks} chunks, "
        f"{len(index.summaries)} summaries"
    )
    return index


def load_corpus(path: str | Path) -> list[Document]:
    """Reads a directory of *.txt files or a JSON-lines file of documents."""
    path = Path(path)
    documents: list[Document] = []
    if path.is_dir():
        for file in sorted(path.glob("*.txt")):
            documents.append(Document(doc_id=file.stem, text=file.read_text(encoding="utf-8")))
    else:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if "doc_id" not in row or "text" not in row:
                    raise ValueError(f"{path}:{line_no} needs doc_id and text")
                documents.append(Document(doc_id=str(row["doc_id"]), text=row["text"]))
    if not documents:
        raise EmptyDocumentError(f"No documents found in {path}")
    return documents


# --- Persistence -----------------------------------------------------------

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "format_version", "doc_id", "window_size", "dim", "chunks",
        "summaries", "vectors", "manifest_sha256",
    ],
    "properties": {
        "format_version": {"type": "integer", "minimum": 1},
        "doc_id": {"type": "string"},
        "window_size": {"type": "integer", "minimum": 1},
        "chunk_words": {"type": "integer", "minimum": 0},
        "dim": {"type": "integer", "minimum": 0},
        "embedder": {"type": "string"},
        "summarizer": {"type": "string"},
        "prompt_hash": {"type": "string"},
        "book_offsets": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "chunks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["chunk_id", "text"],
                "properties": {
                    "chunk_id": {"type": "integer", "minimum": 1},
                    "text": {"type": "string"},
                },
            },
        },
        "summaries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["summary_id", "text", "covered_chunks"],
                "properties": {
                    "summary_id": {"type": "integer", "minimum": 1},
                    "text": {"type": "string"},
                    "covered_chunks": {"type": "array", "items": {"type": "integer"}},
                },
            },
        },
        "vectors": {
            "type": "object",
            "required": ["file", "dtype", "chunk_rows", "summary_rows", "nbytes", "sha256"],
            "properties": {
                "file": {"type": "string"},
                "dtype": {"const": VECTOR_DTYPE},
                "chunk_rows": {"type": "integer", "minimum": 0},
                "summary_rows": {"type": "integer", "minimum": 0},
                "nbytes": {"type": "integer", "minimum": 0},
                "sha256": {"type": "string"},
            },
        },
        "manifest_sha256": {"type": "string"},
    },
}


def _manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "manifest_sha256"}
    return sha256_hex(canonical_json(body))


def save_index(index: MindscapeIndex, path: str | Path) -> Path:
    """Writes index to directory path (manifest.json + vectors.bin)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    matrices = [m for m in (index.chunk_matrix, index.summary_matrix) if m.size]
    payload = b"".join(np.ascontiguousarray(m, dtype=VECTOR_DTYPE).tobytes() for m in matrices)

    manifest = {
        "format_version": FORMAT_VERSION,
        "doc_id": index.doc_id,
        "window_size": index.window_size,
        "chunk_words": index.chunk_words,
        "dim": index.dim,
        "embedder": index.embedder_fingerprint,
        "summarizer": index.summarizer_fingerprint,
        "prompt_hash": index.prompt_hash,
        "book_offsets": index.book_offsets,
        "chunks": [{"chunk_id": c.chunk_id, "text": c.text} for c in index.chunks],
        "summaries": [
            {
                "summary_id": s.summary_id,
                "text": s.text,
                "covered_chunks": sorted(s.covered_chunks),
            }
            for s in index.summaries
        ],
        "vectors": {
            "file": VECTORS_NAME,
            "dtype": VECTOR_DTYPE,
            "chunk_rows": len(index.chunks),
            "summary_rows": len(index.summaries),
            "nbytes": len(payload),
            "sha256": sha256_hex(payload),
        },
    }
    manifest["manifest_sha256"] = _manifest_digest(manifest)

    atomic_write_bytes(path / VECTORS_NAME, payload)
    atomic_write_text(path / MANIFEST_NAME, json.dumps(manifest, ensure_ascii=False, indent=1))
    logger.info(f"✅ Saved index {index.doc_id} to {path}")
    return path


def load_index(path: str | Path) -> MindscapeIndex:
    """Reads an index written by save_index.

    Raises:
        CorruptIndexError: Missing or truncated files, schema or checksum failure.
        VersionMismatchError: The manifest was written by a newer format.
    """
    path = Path(path)
    try:
        manifest_text = (path / MANIFEST_NAME).read_text(encoding="utf-8")
        manifest = json.loads(manifest_text)
    except FileNotFoundError as e:
        raise CorruptIndexError(f"No manifest at {path}") from e
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptIndexError(f"Unreadable manifest at {path}: {e}") from e

    version = manifest.get("format_version") if isinstance(manifest, dict) else None
    if isinstance(version, int) and version > FORMAT_VERSION:
        raise VersionMismatchError(
            f"Index format {version} is newer than supported {FORMAT_VERSION}"
        )

    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as e:
        raise CorruptIndexError(f"Manifest failed validation: {e.message}") from e
    if _manifest_digest(manifest) != manifest["manifest_sha256"]:
        raise CorruptIndexError("Manifest checksum mismatch")

    vectors = manifest["vectors"]
    try:
        payload = (path / vectors["file"]).read_bytes()
    except OSError as e:
        raise CorruptIndexError(f"Cannot read vectors file: {e}") from e
    if len(payload) != vectors["nbytes"]:
        raise CorruptIndexError(
            f"Vectors file has {len(payload)} bytes, expected {vectors['nbytes']}"
        )
    if sha256_hex(payload) != vectors["sha256"]:
        raise CorruptIndexError("Vectors checksum mismatch")

    dim = manifest["dim"]
    n_chunks = vectors["chunk_rows"]
    n_summaries = vectors["summary_rows"]
    if n_chunks != len(manifest["chunks"]) or n_summaries != len(manifest["summaries"]):
        raise CorruptIndexError("Vector row counts disagree with the manifest")
    if len(payload) != (n_chunks + n_summaries) * dim * 8:
        raise CorruptIndexError("Vector payload size disagrees with dim")

    flat = np.frombuffer(payload, dtype=VECTOR_DTYPE).astype(np.float64)
    chunk_vectors = flat[: n_chunks * dim].reshape(n_chunks, dim)
    summary_vectors = flat[n_chunks * dim:].reshape(n_summaries, dim)

    doc_id = manifest["doc_id"]
    try:
        return MindscapeIndex(
            doc_id=doc_id,
            window_size=manifest["window_size"],
            chunks=tuple(
                Chunk(doc_id=doc_id, chunk_id=row["chunk_id"], text=row["text"],
                      embedding=chunk_vectors[i].copy())
                for i, row in enumerate(manifest["chunks"])
            ),
            summaries=tuple(
                SessionSummary(
                    doc_id=doc_id,
                    summary_id=row["summary_id"],
                    text=row["text"],
                    covered_chunks=frozenset(row["covered_chunks"]),
                    embedding=summary_vectors[i].copy(),
                )
                for i, row in enumerate(manifest["summaries"])
            ),
            embedder_fingerprint=manifest.get("embedder", ""),
            summarizer_fingerprint=manifest.get("summarizer", ""),
            prompt_hash=manifest.get("prompt_hash", ""),
            chunk_words=manifest.get("chunk_words", 0),
            book_offsets=dict(manifest.get("book_offsets", {})),
        )
    except ValueError as e:
        raise CorruptIndexError(f"Index invariants violated: {e}") from e


def index_dir(root: str | Path, doc_id: str) -> Path:
    """Directory of one saved index under a corpus root.

    Raises:
        ValueError: doc_id is not a single plain path component.
    """
    if (
        not doc_id
        or doc_id in (".", "..")
        or "/" in doc_id
        or "\\" in doc_id
        or Path(doc_id).is_absolute()
    ):
        raise ValueError(f"doc_id {doc_id!r} cannot name an index directory")
    return Path(root) / doc_id


def save_corpus_indexes(indexes: Iterable[MindscapeIndex], root: str | Path) -> list[Path]:
    """Saves each index under root/<doc_id>/."""
    indexes = list(indexes)
    targets = [index_dir(root, index.doc_id) for index in indexes]
    return [save_index(index, target) for index, target in zip(indexes, targets)]


def load_corpus_indexes(root: str | Path) -> dict[str, MindscapeIndex]:
    """Loads every index directory directly under root, keyed by doc_id."""
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        index = load_index(root)
        return {index.doc_id: index}
    indexes = {}
    for child in sorted(p for p in root.iterdir() if (p / MANIFEST_NAME).exists()):
        index = load_index(child)
        indexes[index.doc_id] = index
    return indexes
