"""Step-0 signature selection: objective terms, greedy, first-k and brute force."""

import math

import numpy as np
import pytest

from mindscape.mindscape_index import Chunk, SessionSummary
from mindscape.shared.embeddings import normalize
from mindscape.shared.errors import (
    AlreadySelectedError,
    EmptyPoolError,
    InvalidWeightsError,
    PoolTooLargeError,
)
from mindscape.signature_select import (
    CandidatePool,
    ObjectiveWeights,
    Signature,
    brute_force_select,
    build_candidate_pool,
    coverage_value,
    first_k_select,
    greedy_select,
    marginal_gain,
    objective_value,
    query_relevance,
    select_signature,
    signature_values,
)

DIM = 6


def _unit(rng: np.random.Generator, nonnegative: bool = False) -> np.ndarray:
    v = rng.random(DIM) if nonnegative else rng.normal(size=DIM)
    return normalize(v + (1e-3 if nonnegative else 0.0))


def _pool(rng, covers: list[set[int]], n_chunks: int, nonnegative=False) -> CandidatePool:
    """Pool over chunks 1..n_chunks ranked in id order; summary j covers covers[j-1]."""
    chunks = tuple(
        Chunk("doc", cid, f"chunk {cid}", _unit(rng, nonnegative))
        for cid in range(1, n_chunks + 1)
    )
    summaries = tuple(
        SessionSummary("doc", j, f"summary {j}", frozenset(cover), _unit(rng, nonnegative))
        for j, cover in enumerate(covers, start=1)
    )
    return CandidatePool(ranked_chunks=chunks, pool_summaries=summaries)


def _disjoint_covers(rng, n_summaries: int) -> tuple[list[set[int]], int]:
    sizes = rng.integers(1, 5, size=n_summaries)
    covers, start = [], 1
    for size in sizes:
        covers.append(set(range(start, start + int(size))))
        start += int(size)
    return covers, start - 1


def test_weights_validation():
    assert ObjectiveWeights.parse("0.3, 0.4, 0.3") == ObjectiveWeights()
    with pytest.raises(InvalidWeightsError):
        ObjectiveWeights(0.5, 0.5, 0.5)
    with pytest.raises(InvalidWeightsError):
        ObjectiveWeights(-0.2, 0.6, 0.6)
    with pytest.raises(InvalidWeightsError):
        ObjectiveWeights.parse("0.5,0.5")


def test_signature_bound_and_duplicates():
    with pytest.raises(ValueError):
        Signature(selected=(1, 2, 3), rendered_text="x", k=2)
    with pytest.raises(ValueError):
        Signature(selected=(1, 1), rendered_text="x", k=5)
    assert Signature().is_empty
    assert Signature.from_text(" compass ").is_refined


def test_greedy_within_bound_of_brute_force():
    """With lambda_d = 0 greedy reaches at least (1 - 1/e) of the optimum."""
    rng = np.random.default_rng(7)
    weights = ObjectiveWeights(0.5, 0.5, 0.0)
    for _ in range(30):
        n_summaries = int(rng.integers(3, 9))
        covers, n_chunks = _disjoint_covers(rng, n_summaries)
        pool = _pool(rng, covers, n_chunks, nonnegative=True)
        q = _unit(rng, nonnegative=True)
        K = int(rng.integers(1, 4))

        greedy = greedy_select(pool, q, K, weights)
        chosen = [pool.pool_summaries[pool.position[sid]] for sid in greedy.selected]
        greedy_value = objective_value(chosen, pool, q, weights, monotone_only=True)
        _, best_value = brute_force_select(pool, q, K, weights, monotone_only=True)
        assert greedy_value >= (1 - 1 / math.e) * best_value - 1e-9


def test_greedy_matches_brute_force_on_modular_objective():
    rng = np.random.default_rng(11)
    weights = ObjectiveWeights(0.4, 0.6, 0.0)
    covers, n_chunks = _disjoint_covers(rng, 10)
    pool = _pool(rng, covers, n_chunks, nonnegative=True)
    q = _unit(rng, nonnegative=True)
    greedy = greedy_select(pool, q, 3, weights)
    brute, _ = brute_force_select(pool, q, 3, weights, monotone_only=True)
    assert sorted(greedy.selected) == sorted(brute.selected)


def test_coverage_is_submodular_and_relevance_modular():
    rng = np.random.default_rng(3)
    for _ in range(500):
        n_chunks = int(rng.integers(4, 12))
        covers = [
            set(int(c) for c in rng.choice(np.arange(1, n_chunks + 1), size=rng.integers(1, 5), replace=False))
            for _ in range(6)
        ]
        pool = _pool(rng, covers, n_chunks)
        q = _unit(rng)
        members = list(pool.pool_summaries)
        order = rng.permutation(len(members))
        s = members[order[0]]
        b_size = int(rng.integers(0, 5))
        B = [members[i] for i in order[1:1 + b_size]]
        A = B[: int(rng.integers(0, b_size + 1))]

        gain_a = coverage_value(A + [s], pool) - coverage_value(A, pool)
        gain_b = coverage_value(B + [s], pool) - coverage_value(B, pool)
        assert gain_a >= gain_b - 1e-9

        rel_a = query_relevance(A + [s], q) - query_relevance(A, q)
        rel_b = query_relevance(B + [s], q) - query_relevance(B, q)
        assert rel_a == pytest.approx(rel_b, abs=1e-9)


def test_first_k_dedups_in_rank_order():
    """Ranked chunks mapping to summaries B, B, A, C, A select [B, A, C]."""
    rng = np.random.default_rng(0)
    A, B, C = 1, 2, 3
    chunk_to_summary = {10: B, 11: B, 2: A, 25: C, 3: A}
    ranked = tuple(Chunk("doc", cid, f"c{cid}", _unit(rng)) for cid in chunk_to_summary)
    summaries = tuple(
        SessionSummary(
            "doc", sid, f"s{sid}",
            frozenset(c for c, owner in chunk_to_summary.items() if owner == sid),
            _unit(rng),
        )
        for sid in (B, A, C)
    )
    pool = CandidatePool(ranked_chunks=ranked, pool_summaries=summaries)
    assert first_k_select(pool, 3).selected == (B, A, C)
    assert first_k_select(pool, 2).selected == (B, A)


def test_greedy_ties_go_to_lowest_summary_id():
    v = normalize([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    chunks = (Chunk("doc", 1, "a", v), Chunk("doc", 2, "b", v))
    summaries = (
        SessionSummary("doc", 3, "later", frozenset({2}), v),
        SessionSummary("doc", 2, "earlier", frozenset({1}), v),
    )
    pool = CandidatePool(ranked_chunks=chunks, pool_summaries=summaries)
    signature = greedy_select(pool, v, 1, ObjectiveWeights(1.0, 0.0, 0.0))
    assert signature.selected == (2,)


def test_greedy_with_non_positive_query_similarity():
    """Relevance drops out when no summary has positive query similarity."""
    e = np.eye(DIM)
    chunks = tuple(Chunk("doc", cid, f"c{cid}", e[cid - 1]) for cid in (1, 2, 3))
    summaries = tuple(
        SessionSummary("doc", j, f"s{j}", frozenset({j}), e[j - 1]) for j in (1, 2, 3)
    )
    pool = CandidatePool(ranked_chunks=chunks, pool_summaries=summaries)
    q = normalize([-1.0, -1.0, -1.0, 0.0, 0.0, 0.0])
    signature = greedy_select(pool, q, 2, ObjectiveWeights())
    # Orthogonal summaries, so coverage alone orders them by chunk rank.
    assert signature.selected == (1, 2)
    assert all(np.isfinite(signature.gain_trace))


def test_marginal_gain_rejects_selected_summary():
    rng = np.random.default_rng(1)
    pool = _pool(rng, [{1}, {2}], 2)
    s = pool.pool_summaries[0]
    with pytest.raises(AlreadySelectedError):
        marginal_gain(s, [s], pool, _unit(rng), ObjectiveWeights())


def test_marginal_gain_matches_greedy_first_step():
    rng = np.random.default_rng(9)
    covers, n_chunks = _disjoint_covers(rng, 5)
    pool = _pool(rng, covers, n_chunks)
    q = _unit(rng)
    weights = ObjectiveWeights()
    signature = greedy_select(pool, q, 1, weights)
    best = pool.pool_summaries[pool.position[signature.selected[0]]]
    assert signature.gain_trace[0] == pytest.approx(marginal_gain(best, [], pool, q, weights))


def test_empty_and_oversized_pools():
    empty = CandidatePool(ranked_chunks=(), pool_summaries=())
    q = normalize(np.ones(DIM))
    with pytest.raises(EmptyPoolError):
        greedy_select(empty, q, 3, ObjectiveWeights())
    with pytest.raises(EmptyPoolError):
        first_k_select(empty, 3)

    rng = np.random.default_rng(2)
    big = _pool(rng, [{i} for i in range(1, 17)], 16)
    with pytest.raises(PoolTooLargeError):
        brute_force_select(big, q, 2, ObjectiveWeights())


def test_select_signature_on_index(small_retriever):
    ranked = small_retriever.query_only("c12w0 c12w1 c12w2", 10)
    pool = build_candidate_pool(ranked, small_retriever.index)
    assert pool.ranked_ids == ranked.ids
    q = small_retriever.embed("c12w0 c12w1 c12w2")

    coverage = select_signature(pool, q, 2, mode="coverage")
    first_k = select_signature(pool, q, 2, mode="first-k")
    assert 1 <= len(coverage.selected) <= 2
    top_summary = small_retriever.index.summary_for_chunk(ranked.ids[0])
    assert first_k.selected[0] == top_summary.summary_id
    assert first_k.rendered_text.startswith(top_summary.text)

    values = signature_values(coverage, pool, q)
    assert set(values) == {"fq", "fc"}
    assert values["fc"] >= 0.0

    with pytest.raises(ValueError):
        select_signature(pool, q, 2, mode="random")


def _coverage_by_loops(selection, pool: CandidatePool) -> float:
    """Rank-weighted coverage evaluated chunk by chunk, summary by summary."""
    total = 0.0
    for rank, chunk in zip(pool.ranks, pool.ranked_chunks):
        best = 0.0
        for s in selection:
            if chunk.chunk_id in s.covered_chunks:
                best = max(best, max(0.0, float(np.dot(s.embedding, chunk.embedding))))
        total += best / (rank + 1)
    return total


def test_coverage_value_worked_example():
    """Three ranked chunks fully matched by one summary give 1/2 + 1/3 + 1/4."""
    v = normalize([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    chunks = tuple(Chunk("doc", cid, f"c{cid}", v) for cid in (1, 2, 3))
    summary = SessionSummary("doc", 1, "all", frozenset({1, 2, 3}), v)
    pool = CandidatePool(ranked_chunks=chunks, pool_summaries=(summary,))

    assert coverage_value([summary], pool) == pytest.approx(13 / 12)
    assert _coverage_by_loops([summary], pool) == pytest.approx(13 / 12)
    assert coverage_value([], pool) == 0.0


def test_coverage_value_matches_loop_evaluation():
    rng = np.random.default_rng(21)
    for _ in range(50):
        covers = [
            set(int(c) for c in rng.choice(np.arange(1, 9), size=rng.integers(1, 5), replace=False))
            for _ in range(4)
        ]
        pool = _pool(rng, covers, 8)
        members = list(pool.pool_summaries)
        selection = [members[i] for i in rng.permutation(4)[: int(rng.integers(0, 5))]]
        assert coverage_value(selection, pool) == pytest.approx(
            _coverage_by_loops(selection, pool), abs=1e-12
        )


def test_coverage_is_monotone():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n_chunks = int(rng.integers(4, 12))
        covers = [
            set(int(c) for c in rng.choice(np.arange(1, n_chunks + 1), size=rng.integers(1, 5), replace=False))
            for _ in range(6)
        ]
        pool = _pool(rng, covers, n_chunks)
        members = list(pool.pool_summaries)
        order = rng.permutation(len(members))
        A = [members[i] for i in order[1:1 + int(rng.integers(0, 5))]]
        s = members[order[0]]
        assert coverage_value(A + [s], pool) >= coverage_value(A, pool) - 1e-12


def test_greedy_coverage_only_picks_widest_summary_first():
    """Summary 2 covers 1.2 of weighted match, summary 1 only 0.3."""
    e = np.eye(DIM)
    chunks = tuple(Chunk("doc", cid, f"c{cid}", e[0]) for cid in range(1, 8))
    wide_match = 1.2 / sum(1 / (rank + 1) for rank in range(2, 8))
    narrow = SessionSummary("doc", 1, "narrow", frozenset({1}), 0.6 * e[0] + 0.8 * e[1])
    wide = SessionSummary(
        "doc", 2, "wide", frozenset(range(2, 8)),
        wide_match * e[0] + math.sqrt(1 - wide_match ** 2) * e[1],
    )
    pool = CandidatePool(ranked_chunks=chunks, pool_summaries=(narrow, wide))
    assert coverage_value([wide], pool) == pytest.approx(1.2)
    assert coverage_value([narrow], pool) == pytest.approx(0.3)

    weights = ObjectiveWeights(0.0, 1.0, 0.0)
    assert greedy_select(pool, e[2], 1, weights).selected == (2,)
    assert greedy_select(pool, e[2], 2, weights).selected == (2, 1)


@pytest.mark.parametrize("K", [1, 3])
def test_single_summary_pool_is_always_selected(K):
    """Even when its only scored term is zero, the lone summary is returned."""
    v = normalize([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    pool = CandidatePool(
        ranked_chunks=(Chunk("doc", 1, "a", v),),
        pool_summaries=(SessionSummary("doc", 1, "only", frozenset({1}), v),),
    )
    weights = ObjectiveWeights(1.0, 0.0, 0.0)

    brute, value = brute_force_select(pool, -v, K, weights)
    assert brute.selected == (1,)
    assert value == 0.0
    assert greedy_select(pool, -v, K, weights).selected == (1,)
