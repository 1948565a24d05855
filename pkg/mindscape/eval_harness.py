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

"""Benchmark harness: datasets, series merging, metrics and reports.

A report is a JSON-lines file: one `example` record per (seed, question)
followed by one `aggregate` record. Aggregates are recomputed from the
example records on load, and the `runtime` block is the only field allowed
to differ between two runs of the same configuration.
"""

import collections
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

import jsonschema
import numpy as np
import pandas as pd
import regex
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from tabulate import tabulate

from .agent_loop import (
    AGENT_METHODS,
    AgentRunResult,
    default_variant,
    initialize_signature,
    run_agent,
    run_signature_rag,
)
from .mindscape_index import (
    Chunk,
    Document,
    MindscapeIndex,
    build_index,
    chunk_document,
    index_dir,
    index_from_chunks,
    load_corpus,
    load_corpus_indexes,
    save_index,
)
from .retrieval import Retriever, mia_retrieve, query_only_retrieve, recall_at_k
from .shared.config import IndexConfig, MindscapeConfig
from .shared.embeddings import EmbeddingProvider, build_embedding_provider
from .shared.errors import (
    CorruptReportError,
    EmptyGoldError,
    EmptySeriesError,
    MalformedPairError,
)
from .shared.llm_provider import LLMProvider, build_llm_provider
from .shared.utils import atomic_write_text
from .signature_select import ObjectiveWeights

logger = logging.getLogger(__name__)

TaskKindName = Literal["detective", "open_qa", "claim"]

_ARTICLES_RE = regex.compile(r"\b(a|an|the)\b")
_PUNCT_RE = regex.compile(r"[\p{P}\p{S}]")


class QAExample(BaseModel):
    """One benchmark question over a document or a merged series."""

    model_config = ConfigDict(extra="forbid")

    example_id: str
    task_kind: TaskKindName = "open_qa"
    doc_id: str | None = None
    series_id: str | None = None
    question: str
    options: list[str] | None = None
    gold_answer: str
    # Chunk ids in the retrieval corpus, or in gold_book when that is set.
    gold_evidence: list[int] | None = None
    gold_book: str | None = None
    pair_id: str | None = None
    language: str | None = None

    @model_validator(mode="after")
    def _check_task_shape(self):
        if (self.doc_id is None) == (self.series_id is None):
            raise ValueError("exactly one of doc_id and series_id is required")
        if (self.pair_id is not None) != (self.task_kind == "claim"):
            raise ValueError("pair_id is required for claims and only for claims")
        if self.task_kind == "detective":
            if not self.options or len(self.options) > 4:
                raise ValueError("detective questions need one to four options")
            if self.gold_answer not in "ABCD"[: len(self.options)]:
                raise ValueError(f"gold_answer {self.gold_answer!r} is not an option letter")
        if self.task_kind == "claim" and self.gold_answer not in {"TRUE", "FALSE"}:
            raise ValueError("claim gold_answer must be TRUE or FALSE")
        return self

    @property
    def corpus_id(self) -> str:
        return self.doc_id or self.series_id


def load_dataset(path: str | Path) -> list[QAExample]:
    """Reads QAExample rows from a JSON-lines file."""
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                examples.append(QAExample.model_validate_json(line))
            except ValidationError as e:
                raise ValueError(f"{path}:{line_no}: {e}") from e
    logger.info(f"✅ Loaded {len(examples)} examples from {path}")
    return examples


# --- Series construction -------------------------------------------------------


@dataclass(frozen=True)
class SeriesDocument:
    """Books of one series chunked separately and renumbered into one id space."""

    series_id: str
    chunks: tuple[Chunk, ...]
    book_offsets: dict[str, int]
    book_lengths: dict[str, int]

    def remap(self, book_id: str, chunk_id: int) -> int:
        """Global id of chunk_id (1-based) within book_id."""
        if book_id not in self.book_offsets:
            raise KeyError(f"Book {book_id!r} is not part of series {self.series_id!r}")
        if not 1 <= chunk_id <= self.book_lengths[book_id]:
            raise ValueError(f"Chunk {chunk_id} outside book {book_id!r}")
        return self.book_offsets[book_id] + chunk_id

    def locate(self, global_id: int) -> tuple[str, int]:
        """Inverse of remap."""
        for book_id, offset in self.book_offsets.items():
            if offset < global_id <= offset + self.book_lengths[book_id]:
                return book_id, global_id - offset
        raise ValueError(f"Chunk {global_id} outside series {self.series_id!r}")


def aggregate_series(
    books: Sequence[Document], series_id: str, chunk_words: int = 200
) -> SeriesDocument:
    """Concatenates books in the given order into one chunk sequence.

    Raises:
        EmptySeriesError: No books were given.
    """
    if not books:
        raise EmptySeriesError(f"Series {series_id!r} has no books")
    chunks: list[Chunk] = []
    offsets: dict[str, int] = {}
    lengths: dict[str, int] = {}
    for book in books:
        if book.doc_id in offsets:
            raise ValueError(f"Book {book.doc_id!r} appears twice in series {series_id!r}")
        book_chunks = chunk_document(book.text, chunk_words, doc_id=book.doc_id)
        offsets[book.doc_id] = len(chunks)
        lengths[book.doc_id] = len(book_chunks)
        chunks.extend(
            Chunk(doc_id=series_id, chunk_id=offsets[book.doc_id] + c.chunk_id, text=c.text)
            for c in book_chunks
        )
    return SeriesDocument(series_id, tuple(chunks), offsets, lengths)


def build_series_index(
    series: SeriesDocument,
    embedder: EmbeddingProvider,
    summarizer: LLMProvider,
    config: IndexConfig | None = None,
) -> MindscapeIndex:
    config = config or IndexConfig()
    return index_from_chunks(
        series.chunks,
        doc_id=series.series_id,
        embedder=embedder,
        summarizer=summarizer,
        window_size=config.window_size,
        cache_dir=config.cache_dir,
        workers=config.workers,
        chunk_words=config.chunk_words,
        book_offsets=series.book_offsets,
    )


# --- Metrics -------------------------------------------------------------------


def normalize_answer(text: str) -> list[str]:
    """Lowercase, strip punctuation and articles, split on whitespace."""
    text = _PUNCT_RE.sub(" ", text.lower())
    text = _ARTICLES_RE.sub(" ", text)
    return text.split()


def token_f1(pred: str, gold: str) -> float:
    """Token-overlap F1 between normalized bags of tokens.

    Raises:
        EmptyGoldError: gold has no tokens after normalization.
    """
    gold_tokens = normalize_answer(gold)
    if not gold_tokens:
        raise EmptyGoldError(f"Gold answer {gold!r} is empty after normalization")
    pred_tokens = normalize_answer(pred or "")
    common = collections.Counter(pred_tokens) & collections.Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def accuracy(records: Iterable[dict]) -> float:
    flags = [bool(r["correct"]) for r in records]
    return float(np.mean(flags)) if flags else 0.0


def pair_accuracy(records: Iterable[dict]) -> float:
    """Fraction of claim pairs whose two members are both correct.

    Raises:
        MalformedPairError: A pair_id does not have exactly two records.
    """
    pairs: dict[str, list[bool]] = collections.defaultdict(list)
    for record in records:
        pairs[record["pair_id"]].append(bool(record["correct"]))
    for pair_id, members in pairs.items():
        if len(members) != 2:
            raise MalformedPairError(f"Pair {pair_id!r} has {len(members)} records")
    if not pairs:
        return 0.0
    return sum(all(members) for members in pairs.values()) / len(pairs)


def is_correct(example: QAExample, prediction: str | None) -> tuple[bool, float | None]:
    """(correct, token F1 or None). Open QA is correct on a normalized exact match."""
    if prediction is None:
        return False, 0.0 if example.task_kind == "open_qa" else None
    if example.task_kind == "open_qa":
        f1 = token_f1(prediction, example.gold_answer)
        return normalize_answer(prediction) == normalize_answer(example.gold_answer), f1
    return prediction.strip().upper() == example.gold_answer, None


# --- Reports -------------------------------------------------------------------

EXAMPLE_RECORD_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["type", "example_id", "seed", "task_kind", "correct", "error"],
    "properties": {
        "type": {"const": "example"},
        "example_id": {"type": "string"},
        "seed": {"type": "integer"},
        "task_kind": {"enum": ["detective", "open_qa", "claim"]},
        "prediction": {"type": ["string", "null"]},
        "correct": {"type": "boolean"},
        "f1": {"type": ["number", "null"]},
        "recall": {"type": ["number", "null"]},
        "retrieved_ids": {"type": "array", "items": {"type": "integer"}},
        "error": {"type": ["string", "null"]},
    },
}

AGGREGATE_RECORD_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["type", "method", "variant", "n", "errors", "metrics", "config_fingerprint"],
    "properties": {
        "type": {"const": "aggregate"},
        "n": {"type": "integer", "minimum": 0},
        "errors": {"type": "integer", "minimum": 0},
        "metrics": {"type": "object"},
        "config_fingerprint": {"type": "string"},
        "runtime": {"type": "object"},
    },
}


def _mean_or_none(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if values else None


def compute_metrics(records: Sequence[dict], recall_k: int = 10) -> dict[str, Any]:
    """Aggregate metrics of example records (bit-stable for equal inputs)."""
    recalls = [r["recall"] for r in records if r.get("recall") is not None]
    f1s = [r["f1"] for r in records if r.get("f1") is not None]
    graded = [r for r in records if r["task_kind"] in {"detective", "claim"}]
    # Pairs are formed within one seed.
    claims = [
        {**r, "pair_id": f"{r['seed']}/{r['pair_id']}"}
        for r in records if r["task_kind"] == "claim"
    ]

    by_language: dict[str, float] = {}
    for language in sorted({r.get("language") for r in records if r.get("language")}):
        values = [
            r["recall"] for r in records
            if r.get("language") == language and r.get("recall") is not None
        ]
        if values:
            by_language[language] = float(np.mean(values))

    return {
        "recall_k": recall_k,
        "recall": _mean_or_none(recalls),
        "recall_by_language": by_language,
        "recall_macro": _mean_or_none(list(by_language.values())),
        "accuracy": accuracy(graded) if graded else None,
        "f1": _mean_or_none(f1s),
        "pair_accuracy": pair_accuracy(claims) if claims else None,
    }


@dataclass
class BenchReport:
    records: list[dict]
    aggregate: dict
    path: Path | None = None

    @property
    def metrics(self) -> dict:
        return self.aggregate["metrics"]

    def comparable(self) -> dict:
        """The report without runtime stats, for determinism checks."""
        aggregate = {k: v for k, v in self.aggregate.items() if k != "runtime"}
        return {"records": self.records, "aggregate": aggregate}

    @classmethod
    def load(cls, path: str | Path) -> "BenchReport":
        """Reads a report and checks its aggregate against the examples.

        Raises:
            CorruptReportError: Bad JSON, a schema failure, a missing aggregate
                record or aggregates that do not match the examples.
        """
        path = Path(path)
        records, aggregate = [], None
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    if aggregate is not None:
                        raise CorruptReportError(f"{path}:{line_no}: record after aggregate")
                    if row.get("type") == "aggregate":
                        jsonschema.validate(row, AGGREGATE_RECORD_SCHEMA)
                        aggregate = row
                    else:
                        jsonschema.validate(row, EXAMPLE_RECORD_SCHEMA)
                        records.append(row)
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptReportError(f"Unreadable report {path}: {e}") from e
        except jsonschema.ValidationError as e:
            raise CorruptReportError(f"Report record failed validation: {e.message}") from e
        if aggregate is None:
            raise CorruptReportError(f"Report {path} has no aggregate record")

        try:
            expected = compute_metrics(records, aggregate["metrics"].get("recall_k", 10))
        except MalformedPairError as e:
            raise CorruptReportError(f"Report {path}: {e}") from e
        if expected != aggregate["metrics"] or aggregate["n"] != len(records):
            raise CorruptReportError(f"Aggregates in {path} do not match its examples")
        return cls(records=records, aggregate=aggregate, path=path)


class _ReportWriter:
    """Single writer for a JSON-lines report; records arrive in order.

    Lines go to `<name>.partial` as they come; commit() moves the finished
    report into place, so an interrupted run leaves only the partial file.
    """

    def __init__(self, path: Path):
        self.path = path
        self.partial = path.with_name(path.name + ".partial")
        path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.partial, "w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._file.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        self._file.flush()

    def close(self, commit: bool) -> None:
        self._file.close()
        if commit:
            atomic_write_text(self.path, self.partial.read_text(encoding="utf-8"))
            self.partial.unlink()


def format_table(reports: "BenchReport | Sequence[BenchReport]") -> str:
    """Method/variant summary grid, then recall per language and macro average."""
    if isinstance(reports, BenchReport):
        reports = [reports]
    rows = []
    for report in reports:
        agg, metrics = report.aggregate, report.metrics
        rows.append(
            {
                "Method": agg["method"],
                "Variant": agg["variant"],
                "N": agg["n"],
                f"R@{metrics['recall_k']}": metrics["recall"],
                "Acc": metrics["accuracy"],
                "F1": metrics["f1"],
                "PairAcc": metrics["pair_accuracy"],
                "Errors": agg["errors"],
            }
        )
    table = tabulate(
        pd.DataFrame(rows), headers="keys", tablefmt="github",
        showindex=False, floatfmt=".3f", missingval="-",
    )

    language_rows = []
    for report in reports:
        metrics = report.metrics
        for language, value in metrics["recall_by_language"].items():
            language_rows.append([report.aggregate["method"], language, value])
        if metrics["recall_by_language"]:
            language_rows.append([report.aggregate["method"], "macro", metrics["recall_macro"]])
    if language_rows:
        recall_label = f"R@{reports[0].metrics['recall_k']}"
        frame = pd.DataFrame(language_rows, columns=["Method", "Language", recall_label])
        table += "\n\n" + tabulate(
            frame, headers="keys", tablefmt="github", showindex=False, floatfmt=".3f"
        )
    return table


# --- Running -------------------------------------------------------------------


@dataclass
class Providers:
    summarizer: LLMProvider
    updater: LLMProvider
    generator: LLMProvider

    @classmethod
    def from_config(cls, config: MindscapeConfig) -> "Providers":
        return cls(
            summarizer=build_llm_provider(config.providers.summarizer, "summarizer"),
            updater=build_llm_provider(config.providers.updater, "updater"),
            generator=build_llm_provider(config.providers.generator, "generator"),
        )

    @property
    def single_flight(self) -> bool:
        return self.updater.single_flight or self.generator.single_flight


def prepare_indexes(
    config: MindscapeConfig,
    embedder: EmbeddingProvider,
    summarizer: LLMProvider,
    needed: Iterable[str],
) -> dict[str, MindscapeIndex]:
    """Loads saved indexes and builds any missing document or series index.

    Newly built indexes are saved under eval.index when it is set.
    """
    root = Path(config.evaluation.index) if config.evaluation.index else None
    indexes = load_corpus_indexes(root) if root is not None and root.exists() else {}
    missing = [doc_id for doc_id in dict.fromkeys(needed) if doc_id not in indexes]
    if not missing:
        return indexes
    if not config.evaluation.corpus:
        raise ValueError(f"No saved index for {missing} and no eval.corpus to build from")

    documents = {doc.doc_id: doc for doc in load_corpus(config.evaluation.corpus)}
    for doc_id in missing:
        if doc_id in config.evaluation.series:
            books = [documents[book_id] for book_id in config.evaluation.series[doc_id]]
            series = aggregate_series(books, doc_id, config.index.chunk_words)
            index = build_series_index(series, embedder, summarizer, config.index)
        elif doc_id in documents:
            index = build_index(documents[doc_id], embedder, summarizer, config.index)
        else:
            raise ValueError(f"Document {doc_id!r} is not in the corpus")
        if root is not None:
            save_index(index, index_dir(root, doc_id))
        indexes[doc_id] = index
    return indexes


def _gold_ids(example: QAExample, index: MindscapeIndex) -> list[int] | None:
    if not example.gold_evidence:
        return None
    if example.gold_book is None:
        return list(example.gold_evidence)
    if example.gold_book not in index.book_offsets:
        raise KeyError(
            f"gold_book {example.gold_book!r} is not a book of index {index.doc_id!r}"
        )
    offset = index.book_offsets[example.gold_book]
    return [offset + chunk_id for chunk_id in example.gold_evidence]


def evaluate_example(
    example: QAExample,
    retriever: Retriever,
    providers: Providers,
    config: MindscapeConfig,
    method: str,
    variant: str | None,
    seed: int,
) -> dict:
    """Runs one example and returns its report record; never raises."""
    record: dict[str, Any] = {
        "type": "example",
        "example_id": example.example_id,
        "seed": seed,
        "task_kind": example.task_kind,
        "language": example.language,
        "pair_id": example.pair_id,
        "gold": example.gold_answer,
        "prediction": None,
        "correct": False,
        "f1": 0.0 if example.task_kind == "open_qa" else None,
        "recall": None,
        "retrieved_ids": [],
        "update_calls": 0,
        "retrieval_calls": 0,
        "error": None,
    }
    try:
        if method in AGENT_METHODS:
            result: AgentRunResult = run_agent(
                example.question, retriever, providers.updater, providers.generator, config,
                task_kind=example.task_kind, options=example.options, variant=variant,
                method=method,
            )
        else:
            result = run_signature_rag(
                example.question, retriever, providers.generator, config, method,
                task_kind=example.task_kind, options=example.options, variant=variant,
            )
        correct, f1 = is_correct(example, result.answer_text)
        gold = _gold_ids(example, retriever.index)
        record.update(
            prediction=result.answer_text,
            correct=correct,
            f1=f1,
            recall=(
                recall_at_k(result.final_retrieved_ids, gold, config.evaluation.recall_k)
                if gold else None
            ),
            retrieved_ids=result.final_retrieved_ids,
            update_calls=result.update_calls,
            retrieval_calls=result.retrieval_calls,
            error=result.answer.error,
        )
    except Exception as e:
        logger.error(f"❌ Example {example.example_id} (seed {seed}) failed: {e}")
        record["error"] = f"{type(e).__name__}: {e}"
    return record


def run_benchmark(
    config: MindscapeConfig,
    out_path: str | Path,
    *,
    method: str | None = None,
    variant: str | None = None,
    seeds: Sequence[int] | None = None,
    embedder: EmbeddingProvider | None = None,
    providers: Providers | None = None,
    examples: Sequence[QAExample] | None = None,
) -> BenchReport:
    """Evaluates every (seed, example) and writes the JSON-lines report.

    Examples run on up to eval.workers threads; records are written in
    dataset order by a single writer. Per-example failures are recorded and
    counted, not raised.
    """
    started = time.perf_counter()
    eval_config = config.evaluation
    method = method or eval_config.method
    variant = variant or eval_config.variant
    report_variant = variant or default_variant(method, config).value
    seeds = list(seeds if seeds is not None else eval_config.seeds)
    if examples is None:
        if not eval_config.dataset:
            raise ValueError("eval.dataset is not configured")
        examples = load_dataset(eval_config.dataset)

    embedder = embedder or build_embedding_provider(config.embedding)
    providers = providers or Providers.from_config(config)
    indexes = prepare_indexes(config, embedder, providers.summarizer, [e.corpus_id for e in examples])
    retrievers = {doc_id: Retriever(index, embedder) for doc_id, index in indexes.items()}

    jobs = [(seed, example) for seed in seeds for example in examples]
    workers = 1 if providers.single_flight else eval_config.workers
    logger.info(f"🚀 Running {method} on {len(jobs)} examples with {workers} worker(s)")

    def job(item: tuple[int, QAExample]) -> dict:
        seed, example = item
        return evaluate_example(
            example, retrievers[example.corpus_id], providers, config, method, variant, seed
        )

    writer = _ReportWriter(Path(out_path))
    records: list[dict] = []
    committed = False
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for record in pool.map(job, jobs):
                writer.write(record)
                records.append(record)

        elapsed = time.perf_counter() - started
        aggregate = {
            "type": "aggregate",
            "method": method,
            "variant": report_variant,
            "n": len(records),
            "errors": sum(1 for r in records if r["error"]),
            "seeds": seeds,
            "metrics": compute_metrics(records, eval_config.recall_k),
            "config_fingerprint": config.fingerprint(),
            "runtime": {
                "seconds": round(elapsed, 3),
                "per_example_seconds": round(elapsed / max(len(records), 1), 4),
            },
        }
        writer.write(aggregate)
        committed = True
    finally:
        writer.close(commit=committed)
    logger.info(f"✅ Report written to {out_path}: {aggregate['metrics']}")
    return BenchReport(records=records, aggregate=aggregate, path=Path(out_path))


# --- Single-book vs series-book control ------------------------------------------


@dataclass
class SeriesControlResult:
    single: dict[int, float]
    series: dict[int, float]
    series_signature: dict[int, float]
    remapped_gold: list[int] = field(default_factory=list)

    def as_rows(self) -> list[list]:
        return [
            ["single-book", *[self.single[k] for k in sorted(self.single)]],
            ["series-book", *[self.series[k] for k in sorted(self.series)]],
            ["series-book + signature", *[self.series_signature[k] for k in sorted(self.series_signature)]],
        ]


def series_control(
    query: str,
    gold_book: Document,
    books: Sequence[Document],
    gold_ids: Sequence[int],
    embedder: EmbeddingProvider,
    summarizer: LLMProvider,
    ks: Sequence[int] = (5, 10),
    config: MindscapeConfig | None = None,
    series_id: str = "series",
) -> SeriesControlResult:
    """Recall of the gold chunks when the gold book is indexed alone or merged.

    gold_ids are chunk ids within gold_book. The signature-conditioned arm
    selects a step-0 signature on the series index and retrieves with
    retrieval.alpha.
    """
    config = config or MindscapeConfig()
    k_max = max(ks)
    single = build_index(gold_book, embedder, summarizer, config.index)
    series_doc = aggregate_series(books, series_id, config.index.chunk_words)
    series = build_series_index(series_doc, embedder, summarizer, config.index)
    remapped = [series_doc.remap(gold_book.doc_id, cid) for cid in gold_ids]

    single_ranked = query_only_retrieve(query, single, k_max, embedder)
    series_ranked = query_only_retrieve(query, series, k_max, embedder)
    init = initialize_signature(
        query,
        Retriever(series, embedder),
        mode=config.signature.mode,
        k0=config.signature.k0,
        k_sum=config.signature.k_sum,
        weights=ObjectiveWeights.from_tuple(config.signature.weights),
    )
    signature_ranked = mia_retrieve(
        query, init.signature, series, k_max, config.retrieval.alpha, embedder
    )
    return SeriesControlResult(
        single={k: recall_at_k(single_ranked, gold_ids, k) for k in ks},
        series={k: recall_at_k(series_ranked, remapped, k) for k in ks},
        series_signature={k: recall_at_k(signature_ranked, remapped, k) for k in ks},
        remapped_gold=remapped,
    )
