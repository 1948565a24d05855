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

"""Command line entry point: `mindscape <group> <command> ...`.

    mindscape index build --corpus books/ --out indexes/
    mindscape index inspect indexes/book1
    mindscape signature init --index indexes/book1 --query "..." --emit json
    mindscape retrieve --index indexes/book1 --query "..." --signature sig.json
    mindscape agent run --index indexes/book1 --question "..." --trace trace.json
    mindscape eval run --config eval.yaml --out report.jsonl
    mindscape eval table report.jsonl
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .agent_loop import initialize_signature, run_agent, write_trace
from .eval_harness import BenchReport, Providers, format_table, run_benchmark
from .mindscape_index import build_index, index_dir, load_corpus, load_corpus_indexes, save_index
from .retrieval import Retriever
from .shared.config import MindscapeConfig, load_config, with_overrides
from .shared.embeddings import EmbeddingProvider, build_embedding_provider
from .shared.errors import MindscapeError
from .signature_select import ObjectiveWeights, Signature, build_candidate_pool, signature_values

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] %(levelname)s (%(funcName)s) \t [%(pathname)s:%(lineno)d] %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _emit(payload: dict) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2))


def _load_retriever(args, embedder: EmbeddingProvider) -> Retriever:
    indexes = load_corpus_indexes(args.index)
    if not indexes:
        raise ValueError(f"No index found at {args.index}")
    if args.doc_id is None:
        if len(indexes) > 1:
            raise ValueError(f"--doc-id is required; {args.index} holds {sorted(indexes)}")
        index = next(iter(indexes.values()))
    else:
        index = indexes[args.doc_id]
    if index.embedder_fingerprint and index.embedder_fingerprint != embedder.fingerprint():
        logger.warning(
            f"⚠️ Index was embedded with {index.embedder_fingerprint}, "
            f"querying with {embedder.fingerprint()}"
        )
    return Retriever(index, embedder)


def _read_signature(path: str | None, k: int) -> Signature:
    """Signature from a `signature init --emit json` file or plain text."""
    if path is None:
        return Signature()
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError:
        return Signature.from_text(text, k=k)
    return Signature(
        selected=tuple(payload.get("selected", ())),
        rendered_text=payload["rendered_text"],
        k=max(k, len(payload.get("selected", ()))),
    )


# --- Commands ----------------------------------------------------------------------


def cmd_index_build(args, config: MindscapeConfig) -> int:
    index_config = config.index.model_copy(
        update={
            key: value
            for key, value in {
                "window_size": args.window,
                "chunk_words": args.chunk_words,
                "cache_dir": args.cache_dir,
                "workers": args.workers,
            }.items()
            if value is not None
        }
    )
    embedder = build_embedding_provider(config.embedding)
    providers = Providers.from_config(config)
    documents = load_corpus(args.corpus)
    out = Path(args.out)
    for document in documents:
        index = build_index(document, embedder, providers.summarizer, index_config)
        target = out if len(documents) == 1 and args.single else index_dir(out, document.doc_id)
        save_index(index, target)
    return 0


def cmd_index_inspect(args, config: MindscapeConfig) -> int:
    for doc_id, index in load_corpus_indexes(args.path).items():
        _emit(
            {
                "doc_id": doc_id,
                "chunks": index.num_chunks,
                "summaries": len(index.summaries),
                "window_size": index.window_size,
                "chunk_words": index.chunk_words,
                "dim": index.dim,
                "embedder": index.embedder_fingerprint,
                "summarizer": index.summarizer_fingerprint,
                "prompt_hash": index.prompt_hash,
                "book_offsets": index.book_offsets,
            }
        )
    return 0


def cmd_signature_init(args, config: MindscapeConfig) -> int:
    retriever = _load_retriever(args, build_embedding_provider(config.embedding))
    weights = ObjectiveWeights.parse(args.weights) if args.weights else ObjectiveWeights.from_tuple(
        config.signature.weights
    )
    k = args.k or config.signature.k_sum
    init = initialize_signature(
        args.query, retriever, mode=args.mode or config.signature.mode,
        k0=args.k0 or config.signature.k0, k_sum=k, weights=weights,
    )
    pool = build_candidate_pool(init.candidates, retriever.index)
    values = signature_values(init.signature, pool, retriever.embed(args.query))
    payload = {
        "selected": list(init.signature.selected),
        "values": {**values, "gain_trace": list(init.signature.gain_trace)},
        "rendered_text": init.signature.rendered_text,
    }
    if args.emit == "json":
        _emit(payload)
    else:
        print(init.signature.rendered_text)
    return 0


def cmd_retrieve(args, config: MindscapeConfig) -> int:
    retriever = _load_retriever(args, build_embedding_provider(config.embedding))
    signature = _read_signature(args.signature, config.signature.k_sum)
    if args.alpha is not None:
        config = with_overrides(config, retrieval={"alpha": args.alpha})
    alpha = config.retrieval.alpha
    ranked = retriever.retrieve(args.query, signature, args.k, alpha)
    if args.emit == "json":
        _emit(
            {
                "query": args.query,
                "alpha": alpha if not signature.is_empty else 0.0,
                "results": [
                    {"chunk_id": chunk_id, "score": score} for chunk_id, score in ranked.entries
                ],
            }
        )
    else:
        for chunk_id, score in ranked.entries:
            text = retriever.index.chunk(chunk_id).text
            print(f"{chunk_id}\t{score:.6f}\t{text[:100]}")
    return 0


def cmd_agent_run(args, config: MindscapeConfig) -> int:
    updates = {}
    if args.steps is not None:
        updates["steps"] = args.steps
    if args.rewrite is not None:
        updates["rewrite"] = args.rewrite == "on"
    if args.variant is not None:
        updates["variant"] = args.variant
    retrieval_updates = {} if args.alpha is None else {"alpha": args.alpha}
    config = with_overrides(config, agent=updates, retrieval=retrieval_updates)
    retriever = _load_retriever(args, build_embedding_provider(config.embedding))
    providers = Providers.from_config(config)
    options = [o.strip() for o in args.options.split(",")] if args.options else None
    result = run_agent(
        args.question, retriever, providers.updater, providers.generator, config,
        task_kind=args.task_kind, options=options, variant=args.variant, method=args.method,
    )
    if args.trace:
        write_trace(result, args.trace)
        logger.info(f"✅ Trace written to {args.trace}")
    print(result.answer_text if result.answer_text is not None else result.answer.raw)
    return 0


def cmd_eval_run(args, config: MindscapeConfig) -> int:
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    report = run_benchmark(
        config, args.out, method=args.method, variant=args.variant, seeds=seeds
    )
    print(format_table(report))
    return 0


def cmd_eval_table(args, config: MindscapeConfig) -> int:
    print(format_table([BenchReport.load(path) for path in args.reports]))
    return 0


# --- Parser ------------------------------------------------------------------------


def _add_index_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--index", required=True, help="Index directory or corpus root")
    parser.add_argument("--doc-id", default=None, help="Document to use under a corpus root")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mindscape", description="Signature-guided retrieval over long documents"
    )
    parser.add_argument("--config", default=None, help="YAML config (default: $MINDSCAPE_CONFIG)")
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    groups = parser.add_subparsers(dest="group", required=True)

    index = groups.add_parser("index", help="Build or inspect indexes").add_subparsers(
        dest="command", required=True
    )
    build = index.add_parser("build")
    build.add_argument("--corpus", required=True, help="Directory of *.txt or a JSON-lines file")
    build.add_argument("--out", required=True)
    build.add_argument("--window", type=int, default=None)
    build.add_argument("--chunk-words", type=int, default=None)
    build.add_argument("--cache-dir", default=None)
    build.add_argument("--workers", type=int, default=None)
    build.add_argument(
        "--single", action="store_true", help="Write a one-document corpus directly to --out"
    )
    build.set_defaults(handler=cmd_index_build)
    inspect = index.add_parser("inspect")
    inspect.add_argument("path")
    inspect.set_defaults(handler=cmd_index_inspect)

    signature = groups.add_parser("signature", help="Step-0 signatures").add_subparsers(
        dest="command", required=True
    )
    init = signature.add_parser("init")
    _add_index_args(init)
    init.add_argument("--query", required=True)
    init.add_argument("--k", type=int, default=None)
    init.add_argument("--k0", type=int, default=None)
    init.add_argument("--mode", choices=["coverage", "first-k"], default=None)
    init.add_argument("--weights", default=None, help="lambda_q,lambda_c,lambda_d")
    init.add_argument("--emit", choices=["json", "text"], default="json")
    init.set_defaults(handler=cmd_signature_init)

    retrieve = groups.add_parser("retrieve", help="Rank chunks for a query")
    _add_index_args(retrieve)
    retrieve.add_argument("--query", required=True)
    retrieve.add_argument("--signature", default=None, help="Signature JSON or text file")
    retrieve.add_argument("--k", type=int, default=10)
    retrieve.add_argument("--alpha", type=float, default=None)
    retrieve.add_argument("--emit", choices=["json", "text"], default="json")
    retrieve.set_defaults(handler=cmd_retrieve)

    agent = groups.add_parser("agent", help="Run the signature agent").add_subparsers(
        dest="command", required=True
    )
    run = agent.add_parser("run")
    _add_index_args(run)
    run.add_argument("--question", required=True)
    run.add_argument("--options", default=None, help="Comma-separated answer options")
    run.add_argument("--task-kind", choices=["detective", "open_qa", "claim"], default=None)
    run.add_argument("--steps", type=int, default=None)
    run.add_argument("--alpha", type=float, default=None)
    run.add_argument(
        "--variant", choices=["chunks", "chunks+sig", "chunks+evi", "chunks+sig+evi"], default=None
    )
    run.add_argument("--rewrite", choices=["on", "off"], default=None)
    run.add_argument("--method", choices=["agent", "agent-no-sig"], default="agent")
    run.add_argument("--trace", default=None)
    run.set_defaults(handler=cmd_agent_run)

    evaluate = groups.add_parser("eval", help="Benchmarks and reports").add_subparsers(
        dest="command", required=True
    )
    eval_run = evaluate.add_parser("run")
    eval_run.add_argument("--out", required=True)
    eval_run.add_argument(
        "--method", choices=["query-only", "mia-emb", "mia-rag", "agent", "agent-no-sig"], default=None
    )
    eval_run.add_argument(
        "--variant", choices=["chunks", "chunks+sig", "chunks+evi", "chunks+sig+evi"], default=None
    )
    eval_run.add_argument("--seeds", default=None, help="Comma-separated seeds")
    eval_run.set_defaults(handler=cmd_eval_run)
    table = evaluate.add_parser("table")
    table.add_argument("reports", nargs="+")
    table.set_defaults(handler=cmd_eval_table)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    # `--config` is accepted after the subcommand too.
    args, extra = parser.parse_known_args(argv)
    if extra:
        extra_parser = argparse.ArgumentParser(add_help=False)
        extra_parser.add_argument("--config", default=None)
        more, unknown = extra_parser.parse_known_args(extra)
        if unknown:
            parser.error(f"unrecognized arguments: {' '.join(unknown)}")
        args.config = more.config or args.config

    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT)
    try:
        config = load_config(args.config)
        if args.group == "agent" and args.task_kind is None:
            args.task_kind = "detective" if args.options else "open_qa"
        return args.handler(args, config)
    except MindscapeError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return 2
    except (ValueError, KeyError, FileNotFoundError) as e:
        logger.error(f"❌ {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
