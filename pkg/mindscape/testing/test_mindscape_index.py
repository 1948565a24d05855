"""Chunking, sessionization, summary caching and index persistence."""

import dataclasses
import json

import numpy as np
import pytest

from mindscape.mindscape_index import (
    MANIFEST_NAME,
    VECTORS_NAME,
    Document,
    MindscapeIndex,
    build_index,
    chunk_document,
    covered_chunk_ids,
    index_dir,
    load_corpus,
    load_corpus_indexes,
    load_index,
    save_corpus_indexes,
    save_index,
    sessionize,
    summary_of,
)
from mindscape.shared.config import IndexConfig
from mindscape.shared.errors import (
    CorruptIndexError,
    EmptyDocumentError,
    EmptySummaryError,
    OutOfRangeError,
    VersionMismatchError,
)
from mindscape.shared.llm_provider import ScriptedLLMProvider, summary_echo

from .fakes import make_chunks, synthetic_text


@pytest.mark.parametrize("W", [1, 7, 20, 100])
def test_summary_of_partitions_every_length(W):
    """Every chunk maps to exactly one window, and windows are contiguous."""
    for L in range(1, 1001):
        J = (L + W - 1) // W
        expected = []
        for j in range(1, J + 1):
            expected.extend([j] * len(covered_chunk_ids(j, W, L)))
        assert [summary_of(l, W, L) for l in range(1, L + 1)] == expected


def test_summary_of_out_of_range():
    with pytest.raises(OutOfRangeError):
        summary_of(0, 20)
    with pytest.raises(OutOfRangeError):
        summary_of(46, 20, 45)


def test_chunk_document_collapses_whitespace():
    text = "one  two\tthree\n\nfour five six seven"
    chunks = chunk_document(text, 3, doc_id="d")
    assert [c.text for c in chunks] == ["one two three", "four five six", "seven"]
    assert [c.chunk_id for c in chunks] == [1, 2, 3]
    assert " ".join(c.text for c in chunks) == " ".join(text.split())


def test_chunk_document_empty():
    with pytest.raises(EmptyDocumentError):
        chunk_document(" \n\t ", 200)


def test_sessionize_45_chunks():
    windows = sessionize(make_chunks([f"t{i}" for i in range(45)]), 20)
    assert [len(w) for w in windows] == [20, 20, 5]
    assert windows[2][0].chunk_id == 41


def test_build_index_counts(small_index):
    assert small_index.num_chunks == 45
    assert len(small_index.summaries) == 3
    assert small_index.summary_for_chunk(41).summary_id == 3
    assert small_index.summaries[2].covered_chunks == frozenset(range(41, 46))
    assert np.allclose(np.linalg.norm(small_index.chunk_matrix, axis=1), 1.0)


def test_index_rejects_broken_partition(small_index):
    with pytest.raises(ValueError):
        MindscapeIndex(
            doc_id="book",
            window_size=20,
            chunks=small_index.chunks,
            summaries=small_index.summaries[:2],
        )


def test_summary_cache_skips_llm_on_rebuild(tmp_path, hash_embedder):
    document = Document("cached", synthetic_text(30, 4, "k"))
    config = IndexConfig(chunk_words=4, window_size=10, cache_dir=str(tmp_path / "cache"))

    first = ScriptedLLMProvider(responder=summary_echo)
    build_index(document, hash_embedder, first, config)
    assert first.call_count == 3

    second = ScriptedLLMProvider(responder=summary_echo)
    rebuilt = build_index(document, hash_embedder, second, config)
    assert second.call_count == 0
    assert [s.text for s in rebuilt.summaries][0].startswith("k1w0")


def test_blank_summary_twice_raises(hash_embedder):
    blank = ScriptedLLMProvider(responses=["  ", ""])
    with pytest.raises(EmptySummaryError):
        build_index(Document("d", "a b c"), hash_embedder, blank, IndexConfig(chunk_words=3))


def test_save_load_round_trip(tmp_path, small_index):
    save_index(small_index, tmp_path / "book")
    loaded = load_index(tmp_path / "book")
    assert loaded == small_index
    assert loaded.chunk(7).text == small_index.chunk(7).text


def test_load_detects_truncated_vectors(tmp_path, small_index):
    path = save_index(small_index, tmp_path / "book")
    payload = (path / VECTORS_NAME).read_bytes()
    (path / VECTORS_NAME).write_bytes(payload[:-8])
    with pytest.raises(CorruptIndexError):
        load_index(path)


def test_load_detects_edited_manifest(tmp_path, small_index):
    path = save_index(small_index, tmp_path / "book")
    manifest = json.loads((path / MANIFEST_NAME).read_text(encoding="utf-8"))
    manifest["chunks"][0]["text"] = "tampered"
    (path / MANIFEST_NAME).write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(CorruptIndexError):
        load_index(path)


def test_load_rejects_newer_format(tmp_path, small_index):
    path = save_index(small_index, tmp_path / "book")
    manifest = json.loads((path / MANIFEST_NAME).read_text(encoding="utf-8"))
    manifest["format_version"] = 99
    (path / MANIFEST_NAME).write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(VersionMismatchError):
        load_index(path)


def test_load_missing_manifest(tmp_path):
    with pytest.raises(CorruptIndexError):
        load_index(tmp_path / "nothing")


def test_corpus_indexes_round_trip(tmp_path, small_index):
    save_corpus_indexes([small_index], tmp_path / "root")
    indexes = load_corpus_indexes(tmp_path / "root")
    assert list(indexes) == ["book"]
    assert indexes["book"] == small_index


@pytest.mark.parametrize("doc_id", ["../escape", "a/b", "..", "", "/abs"])
def test_corpus_indexes_reject_unsafe_doc_ids(tmp_path, small_index, doc_id):
    unsafe = dataclasses.replace(small_index, doc_id=doc_id)
    root = tmp_path / "root"
    with pytest.raises(ValueError, match="cannot name an index directory"):
        save_corpus_indexes([small_index, unsafe], root)
    assert not (tmp_path / "escape").exists()
    assert not root.exists()


def test_index_dir_is_a_child_of_root(tmp_path):
    assert index_dir(tmp_path, "book-1") == tmp_path / "book-1"


def test_load_corpus_dir_and_jsonl(tmp_path):
    (tmp_path / "books").mkdir()
    (tmp_path / "books" / "b.txt").write_text("beta text", encoding="utf-8")
    (tmp_path / "books" / "a.txt").write_text("alpha text", encoding="utf-8")
    assert [d.doc_id for d in load_corpus(tmp_path / "books")] == ["a", "b"]

    rows = tmp_path / "corpus.jsonl"
    rows.write_text(
        json.dumps({"doc_id": "x", "text": "some words"}) + "\n\n", encoding="utf-8"
    )
    assert load_corpus(rows) == [Document("x", "some words")]

    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"text": "orphan"}) + "\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_corpus(bad)
