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

"""Step-0 signature selection over session summaries.

The query-only retriever returns ranked candidate chunks. Their summaries form
the pool, and up to K of them are picked by maximizing

    lambda_q * relevance + lambda_c * coverage + lambda_d * diversity

where relevance sums query cosines (modular), coverage is a rank-weighted
max-coverage of the candidate chunks by the chosen summaries (monotone
submodular), and diversity penalizes a summary's largest cosine to the ones
already chosen. greedy_select is the production selector; first_k_select is the
relevance-only shortcut that keeps the retriever's order; brute_force_select
enumerates small pools to certify the greedy bound.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np

from .mindscape_index import Chunk, MindscapeIndex, SessionSummary
from .shared.errors import (
    AlreadySelectedError,
    EmptyPoolError,
    InvalidWeightsError,
    PoolTooLargeError,
)

logger = logging.getLogger(__name__)

# Normalizer maxima at or below this are treated as zero.
NORMALIZER_EPS = 1e-12
BRUTE_FORCE_MAX_POOL = 15

SelectionMode = Literal["coverage", "first-k"]


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_q: float = 0.3
    lambda_c: float = 0.4
    lambda_d: float = 0.3

    def __post_init__(self):
        values = (self.lambda_q, self.lambda_c, self.lambda_d)
        if any(v < 0 for v in values):
            raise InvalidWeightsError(f"Weights must be nonnegative, got {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise InvalidWeightsError(f"Weights must sum to 1, got {values}")

    @classmethod
    def parse(cls, text: str) -> "ObjectiveWeights":
        """Parses "0.3,0.4,0.3"."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise InvalidWeightsError(f"Expected three comma-separated weights, got {text!r}")
        return cls(*(float(p) for p in parts))

    @classmethod
    def from_tuple(cls, values: Sequence[float]) -> "ObjectiveWeights":
        return cls(*values)


@dataclass(frozen=True)
class Signature:
    """The compact global state: selected summary ids and their rendered text.

    After agent refinement the signature is model-written prose, represented
    with an empty `selected` and the prose as rendered_text.
    """

    selected: tuple[int, ...] = ()
    rendered_text: str = ""
    k: int = 5
    gain_trace: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.selected) > self.k:
            raise ValueError(f"Signature holds {len(self.selected)} summaries, bound is {self.k}")
        if len(set(self.selected)) != len(self.selected):
            raise ValueError(f"Duplicate summary ids in signature: {self.selected}")

    @classmethod
    def from_summaries(
        cls, summaries: Sequence[SessionSummary], k: int, gain_trace: Sequence[float] = ()
    ) -> "Signature":
        return cls(
            selected=tuple(s.summary_id for s in summaries),
            rendered_text=render_signature_text(summaries),
            k=k,
            gain_trace=tuple(gain_trace),
        )

    @classmethod
    def from_text(cls, text: str, k: int = 5) -> "Signature":
        return cls(selected=(), rendered_text=text.strip(), k=k)

    @property
    def is_empty(self) -> bool:
        return not self.rendered_text.strip()

    @property
    def is_refined(self) -> bool:
        return not self.selected and not self.is_empty


def render_signature_text(summaries: Sequence[SessionSummary]) -> str:
    """Summary texts in selection order, separated by blank lines."""
    return "\n\n".join(s.text.strip() for s in summaries)


def render_signature(index: MindscapeIndex, selected: Sequence[int], k: int) -> Signature:
    """Rebuilds a signature from summary ids alone."""
    return Signature.from_summaries([index.summary(sid) for sid in selected], k)


@dataclass(frozen=True)
class CandidatePool:
    """Ranked candidate chunks and the summaries covering them.

    ranks default to 1..n in the given order; rank weights are 1 / (rank + 1).
    """

    ranked_chunks: tuple[Chunk, ...]
    pool_summaries: tuple[SessionSummary, ...]
    ranks: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.ranks:
            object.__setattr__(self, "ranks", tuple(range(1, len(self.ranked_chunks) + 1)))
        if len(self.ranks) != len(self.ranked_chunks):
            raise ValueError("One rank per ranked chunk is required")
        ids = [s.summary_id for s in self.pool_summaries]
        if len(set(ids)) != len(ids):
            raise ValueError("Pool summaries must be distinct")

    @classmethod
    def from_ranking(cls, chunk_ids: Sequence[int], index: MindscapeIndex) -> "CandidatePool":
        """Maps ranked chunk ids through the chunk -> summary mapping.

        Summaries keep the order in which their first chunk appears.
        """
        chunks = tuple(index.chunk(cid) for cid in chunk_ids)
        seen: dict[int, SessionSummary] = {}
        for chunk in chunks:
            summary = index.summary_for_chunk(chunk.chunk_id)
            seen.setdefault(summary.summary_id, summary)
        return cls(ranked_chunks=chunks, pool_summaries=tuple(seen.values()))

    @property
    def rank_weights(self) -> np.ndarray:
        return 1.0 / (np.asarray(self.ranks, dtype=np.float64) + 1.0)

    @cached_property
    def position(self) -> dict[int, int]:
        """summary_id -> row in pool_summaries."""
        return {s.summary_id: i for i, s in enumerate(self.pool_summaries)}

    @cached_property
    def summary_matrix(self) -> np.ndarray:
        return np.vstack([s.embedding for s in self.pool_summaries])

    @cached_property
    def cover_mask(self) -> np.ndarray:
        """(S, N) booleans: summary s covers candidate chunk i."""
        return np.array(
            [
                [c.chunk_id in s.covered_chunks for c in self.ranked_chunks]
                for s in self.pool_summaries
            ],
            dtype=bool,
        ).reshape(len(self.pool_summaries), len(self.ranked_chunks))

    @cached_property
    def match_matrix(self) -> np.ndarray:
        """(S, N) match scores max(0, e_s . e_c), zero where s does not cover c."""
        if not self.ranked_chunks:
            return np.zeros((len(self.pool_summaries), 0))
        chunk_matrix = np.vstack([c.embedding for c in self.ranked_chunks])
        match = np.maximum(0.0, self.summary_matrix @ chunk_matrix.T)
        return np.where(self.cover_mask, match, 0.0)

    @property
    def ranked_ids(self) -> list[int]:
        return [c.chunk_id for c in self.ranked_chunks]

    def summary_for(self, chunk: Chunk) -> SessionSummary | None:
        """First pool summary (in pool order) covering chunk."""
        for summary in self.pool_summaries:
            if chunk.chunk_id in summary.covered_chunks:
                return summary
        return None

    def rows(self, selection: Iterable[SessionSummary]) -> list[int]:
        rows = []
        for s in selection:
            if s.summary_id not in self.position:
                raise ValueError(f"Summary {s.summary_id} is not in the pool")
            rows.append(self.position[s.summary_id])
        return rows


def build_candidate_pool(ranked, index: MindscapeIndex) -> CandidatePool:
    """Pool from a query-only ranking (a RankedList or plain chunk ids)."""
    chunk_ids = getattr(ranked, "ids", ranked)
    return CandidatePool.from_ranking(list(chunk_ids), index)


# --- Objective terms ---------------------------------------------------------


def query_relevance(selection: Iterable[SessionSummary], q: np.ndarray) -> float:
    """Sum of query cosines over the selection (negative values kept)."""
    return float(sum(np.dot(s.embedding, q) for s in selection))


def coverage_value(selection: Iterable[SessionSummary], pool: CandidatePool) -> float:
    """Rank-weighted coverage: sum_i w_i * max over selected s covering c_i of m(s, c_i)."""
    rows = pool.rows(selection)
    if not rows or not pool.ranked_chunks:
        return 0.0
    best = pool.match_matrix[rows].max(axis=0)
    return float(np.dot(pool.rank_weights, best))


def diversity_gain(s: SessionSummary, selection: Sequence[SessionSummary]) -> float:
    """1 for an empty selection, else 1 - max cosine to a selected summary."""
    if not selection:
        return 1.0
    return 1.0 - max(float(np.dot(s.embedding, t.embedding)) for t in selection)


class _Normalized:
    """Per-call normalizers of the relevance and coverage terms."""

    def __init__(self, pool: CandidatePool, q: np.ndarray):
        self.pool = pool
        self.query_sims = pool.summary_matrix @ np.asarray(q, dtype=np.float64)
        weighted = pool.match_matrix * pool.rank_weights[None, :]
        self.weighted_match = weighted
        self.coverage = weighted.sum(axis=1)
        z_q = float(self.query_sims.max())
        z_c = float(self.coverage.max())
        self.z_q = z_q if z_q > NORMALIZER_EPS else None
        self.z_c = z_c if z_c > NORMALIZER_EPS else None

    def relevance(self, row: int) -> float:
        return 0.0 if self.z_q is None else float(self.query_sims[row] / self.z_q)

    def coverage_gain(self, row: int, covered: np.ndarray) -> float:
        if self.z_c is None:
            return 0.0
        return float(np.dot(self.weighted_match[row], (~covered).astype(np.float64)) / self.z_c)


def _covered_by(pool: CandidatePool, rows: Sequence[int]) -> np.ndarray:
    covered = np.zeros(len(pool.ranked_chunks), dtype=bool)
    for row in rows:
        covered |= pool.cover_mask[row]
    return covered


def marginal_gain(
    s: SessionSummary,
    selection: Sequence[SessionSummary],
    pool: CandidatePool,
    q: np.ndarray,
    weights: ObjectiveWeights,
) -> float:
    """Weighted gain of adding s to selection.

    Relevance and coverage are divided by their maxima over the pool. A chunk
    already covered by the selection earns s nothing, whatever its match score.

    Raises:
        AlreadySelectedError: s is in selection.
    """
    if any(t.summary_id == s.summary_id for t in selection):
        raise AlreadySelectedError(f"Summary {s.summary_id} is already selected")
    norm = _Normalized(pool, q)
    row = pool.rows([s])[0]
    covered = _covered_by(pool, pool.rows(selection))
    return (
        weights.lambda_q * norm.relevance(row)
        + weights.lambda_c * norm.coverage_gain(row, covered)
        + weights.lambda_d * diversity_gain(s, selection)
    )


def greedy_select(
    pool: CandidatePool, q: np.ndarray, K: int, weights: ObjectiveWeights
) -> Signature:
    """Greedy maximization of the weighted objective under |selection| <= K.

    Normalizers are fixed once for the call. Ties go to the lowest summary_id.

    Raises:
        EmptyPoolError: The pool has no summaries.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if not pool.pool_summaries:
        raise EmptyPoolError("Cannot select from an empty pool")

    norm = _Normalized(pool, q)
    # Candidates scanned by ascending summary_id so the first maximum wins ties.
    order = sorted(range(len(pool.pool_summaries)), key=lambda r: pool.pool_summaries[r].summary_id)
    covered = np.zeros(len(pool.ranked_chunks), dtype=bool)
    chosen: list[int] = []
    trace: list[float] = []

    while len(chosen) < K:
        selected = [pool.pool_summaries[r] for r in chosen]
        best_row, best_gain = None, -np.inf
        for row in order:
            if row in chosen:
                continue
            gain = (
                weights.lambda_q * norm.relevance(row)
                + weights.lambda_c * norm.coverage_gain(row, covered)
                + weights.lambda_d * diversity_gain(pool.pool_summaries[row], selected)
            )
            if gain > best_gain:
                best_row, best_gain = row, gain
        if best_row is None:
            break
        chosen.append(best_row)
        trace.append(float(best_gain))
        covered |= pool.cover_mask[best_row]

    summaries = [pool.pool_summaries[r] for r in chosen]
    logger.debug(f"Greedy picked {[s.summary_id for s in summaries]} gains={trace}")
    return Signature.from_summaries(summaries, K, gain_trace=trace)


def first_k_select(pool: CandidatePool, K: int) -> Signature:
    """First K distinct summaries met while walking the ranked chunks."""
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if not pool.pool_summaries:
        raise EmptyPoolError("Cannot select from an empty pool")
    picked: list[SessionSummary] = []
    seen: set[int] = set()
    for chunk in pool.ranked_chunks:
        summary = pool.summary_for(chunk)
        if summary is None or summary.summary_id in seen:
            continue
        seen.add(summary.summary_id)
        picked.append(summary)
        if len(picked) == K:
            break
    return Signature.from_summaries(picked, K)


def objective_value(
    selection: Sequence[SessionSummary],
    pool: CandidatePool,
    q: np.ndarray,
    weights: ObjectiveWeights,
    monotone_only: bool = False,
    exact_coverage: bool = False,
) -> float:
    """Set-function value of a selection, summaries taken in the given order.

    The coverage term follows the binary covered rule (a chunk is credited to
    the first summary covering it) unless exact_coverage, which uses the max
    match score per chunk. The diversity term is accumulated in order and is
    dropped when monotone_only.
    """
    norm = _Normalized(pool, q)
    rows = pool.rows(selection)
    value = weights.lambda_q * sum(norm.relevance(r) for r in rows)

    if exact_coverage:
        if norm.z_c is not None:
            value += weights.lambda_c * coverage_value(selection, pool) / norm.z_c
    else:
        covered = np.zeros(len(pool.ranked_chunks), dtype=bool)
        for row in rows:
            value += weights.lambda_c * norm.coverage_gain(row, covered)
            covered |= pool.cover_mask[row]

    if not monotone_only:
        for i, s in enumerate(selection):
            value += weights.lambda_d * diversity_gain(s, list(selection[:i]))
    return float(value)


def brute_force_select(
    pool: CandidatePool,
    q: np.ndarray,
    K: int,
    weights: ObjectiveWeights,
    monotone_only: bool = False,
    exact_coverage: bool = False,
) -> tuple[Signature, float]:
    """Exhaustive maximizer over all subsets of size <= K.

    Every pool yields a non-empty selection, even when no subset scores
    above zero.

    Subsets are evaluated in ascending summary_id order; with monotone_only the
    diversity weight is treated as zero. The first maximum in lexicographic
    enumeration order wins ties.

    Raises:
        PoolTooLargeError: More than 15 pool summaries.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if len(pool.pool_summaries) > BRUTE_FORCE_MAX_POOL:
        raise PoolTooLargeError(
            f"Brute force is limited to {BRUTE_FORCE_MAX_POOL} summaries, "
            f"pool has {len(pool.pool_summaries)}"
        )
    if not pool.pool_summaries:
        raise EmptyPoolError("Cannot select from an empty pool")

    candidates = sorted(pool.pool_summaries, key=lambda s: s.summary_id)
    best: tuple[SessionSummary, ...] = ()
    best_value = -np.inf
    for size in range(1, min(K, len(candidates)) + 1):
        for subset in itertools.combinations(candidates, size):
            value = objective_value(
                subset, pool, q, weights,
                monotone_only=monotone_only, exact_coverage=exact_coverage,
            )
            if value > best_value:
                best, best_value = subset, value
    return Signature.from_summaries(best, K), best_value


def select_signature(
    pool: CandidatePool,
    q: np.ndarray,
    K: int,
    weights: ObjectiveWeights | None = None,
    mode: SelectionMode = "coverage",
) -> Signature:
    """Dispatches to greedy_select (coverage) or first_k_select (first-k)."""
    if mode == "coverage":
        return greedy_select(pool, q, K, weights or ObjectiveWeights())
    if mode == "first-k":
        return first_k_select(pool, K)
    raise ValueError(f"Unknown selection mode: {mode}")


def signature_values(signature: Signature, pool: CandidatePool, q: np.ndarray) -> dict[str, float]:
    """Unnormalized relevance (fq) and coverage (fc) of a step-0 signature."""
    selection = [pool.pool_summaries[pool.position[sid]] for sid in signature.selected]
    return {
        "fq": query_relevance(selection, q),
        "fc": coverage_value(selection, pool),
    }
