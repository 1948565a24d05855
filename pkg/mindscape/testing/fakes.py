"""Offline stand-ins used across the tests: a keyword embedder and corpus builders."""

import numpy as np
import regex

from mindscape.mindscape_index import Chunk, Document
from mindscape.shared.embeddings import EmbeddingProvider
from mindscape.shared.llm_provider import ScriptedLLMProvider

_WORD_RE = regex.compile(r"\w+")
_RAW_TEXT_RE = regex.compile(r"<Raw_Text>\n(.*?)\n</Raw_Text>", regex.DOTALL)


def axis(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim)
    v[i] = 1.0
    return v


class KeywordEmbedder(EmbeddingProvider):
    """Sum of the vectors of known keywords in the text.

    Text without a known keyword maps to the last axis.
    """

    def __init__(self, table: dict[str, np.ndarray], dim: int = 8):
        super().__init__(name="keyword", dim=dim)
        self.table = table

    def _embed_batch(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            v = np.zeros(self.dim)
            for word in _WORD_RE.findall(text.lower()):
                if word in self.table:
                    v = v + self.table[word]
            rows.append(v if np.any(v) else axis(self.dim, self.dim - 1))
        return np.vstack(rows)


def window_of(user: str) -> str:
    match = _RAW_TEXT_RE.search(user)
    return match.group(1) if match else user


def keyword_summarizer() -> ScriptedLLMProvider:
    """Summaries for the series corpus: home windows vs rival windows."""

    def respond(system: str, user: str) -> str:
        words = _WORD_RE.findall(window_of(user).lower())
        return "homeland chronicle" if "home" in words else "rivalry chronicle"

    return ScriptedLLMProvider(responder=respond, name="keyword-summarizer")


def synthetic_text(n_chunks: int, words_per_chunk: int, tag: str) -> str:
    """Chunk i (1-based) is made of the words {tag}{i}w0 .. {tag}{i}w{n-1}."""
    return " ".join(
        f"{tag}{i}w{j}" for i in range(1, n_chunks + 1) for j in range(words_per_chunk)
    )


def make_chunks(texts: list[str], doc_id: str = "doc") -> list[Chunk]:
    return [Chunk(doc_id=doc_id, chunk_id=i, text=t) for i, t in enumerate(texts, start=1)]


# key -> query topic, home/homeland -> gold storyline, rival -> decoy passages,
# rivalry -> decoy summaries.
SERIES_TABLE = {
    "key": axis(8, 1),
    "home": axis(8, 2),
    "homeland": axis(8, 2),
    "rival": axis(8, 3),
    "rivalry": axis(8, 4),
}


def series_books() -> tuple[Document, list[Document]]:
    """Gold book (4 chunks of 3 words, clue in chunk 3) between two 6-chunk decoy books."""
    gold = Document("gold", "home home home home home home key home home home home home")
    decoy_a = Document("rival_a", " ".join(["key key rival"] * 6))
    decoy_b = Document("rival_b", " ".join(["key key rival"] * 6))
    return gold, [decoy_a, gold, decoy_b]
