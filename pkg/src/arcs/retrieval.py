"""Deterministic cosine top-k retrieval over a frozen snapshot.

All operations are pure functions of (query text, snapshot digest,
parameters). Ties are broken by ascending corpus index everywhere so that
results replay bit-exactly. Exact full scan, no approximate index: at desk
scale it is fast enough and removes a nondeterminism source.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .corpus import CorpusItem, CorpusSnapshot
from .embedding import EmbeddingProvider
from .errors import DimensionMismatchError, EmbedderMismatchError
from .util import json_digest

if TYPE_CHECKING:
    from .planner import Plan

log = logging.getLogger(__name__)

DEFAULT_DELTA = 0.85
DEFAULT_K = 10


@dataclass(frozen=True)
class RetrievalQuery:
    """A query string plus its retrieval budget."""

    text: str
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("retrieval budget k must be >= 1")
        if not self.text:
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class RetrievalResult:
    """Scored items in retrieval order plus provenance digests."""

    items: tuple[tuple[CorpusItem, float], ...]
    query_digest: str
    snapshot_digest: str

    def indices(self) -> list[int]:
        return [item.index for item, _ in self.items]

    def scores(self) -> list[float]:
        return [score for _, score in self.items]

    def to_jsonable(self) -> dict:
        return {
            "query_digest": self.query_digest,
            "snapshot_digest": self.snapshot_digest,
            "indices": self.indices(),
            "scores": self.scores(),
        }


def cosine_sim(v1: Sequence[float], v2: Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]; zero vectors compare as 0."""
    if len(v1) != len(v2):
        raise DimensionMismatchError(f"cosine over dimensions {len(v1)} and {len(v2)}")
    dot = 0.0
    n1 = 0.0
    n2 = 0.0
    for a, b in zip(v1, v2):
        dot += a * b
        n1 += a * a
        n2 += b * b
    if n1 == 0.0 or n2 == 0.0:
        log.warning("cosine similarity against a zero vector; defining it as 0.0")
        return 0.0
    return dot / (math.sqrt(n1) * math.sqrt(n2))


def _snapshot_arrays(snapshot: CorpusSnapshot) -> tuple[np.ndarray, np.ndarray]:
    cached = getattr(snapshot, "_retrieval_cache", None)
    if cached is None:
        matrix = np.array([item.embedding for item in snapshot.items], dtype=np.float64)
        norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
        cached = (matrix, norms)
        snapshot._retrieval_cache = cached
    return cached


def _score_all(snapshot: CorpusSnapshot, query_vector: Sequence[float]) -> np.ndarray:
    matrix, norms = _snapshot_arrays(snapshot)
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(
            f"query dimension {q.shape[0]} does not match snapshot dimension {matrix.shape[1]}"
        )
    qnorm = math.sqrt(float(q @ q))
    if qnorm == 0.0:
        log.warning("query embedded to the zero vector; all scores are 0")
        return np.zeros(len(snapshot.items), dtype=np.float64)
    raw = matrix @ q
    scores = np.zeros(len(snapshot.items), dtype=np.float64)
    nonzero = norms > 0.0
    scores[nonzero] = raw[nonzero] / (norms[nonzero] * qnorm)
    return scores


def signature_name(signature: str) -> str:
    """Leading identifier of a signature, used for denylist matching."""
    name = ""
    head = signature.split("(", 1)[0]
    for token in reversed(head.replace("*", " ").replace("&", " ").split()):
        if token and (token[0].isalpha() or token[0] == "_"):
            name = token
            break
    return name.split("::")[-1].split(".")[-1]


def load_denylist(path: str | Path) -> frozenset[str]:
    """One denylisted identifier per line; blank lines and # comments skipped."""
    entries = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            entries.add(stripped)
    return frozenset(entries)


def _check_embedder(snapshot: CorpusSnapshot, embedder: EmbeddingProvider) -> None:
    if embedder.embedder_id != snapshot.embedder_id:
        raise EmbedderMismatchError(
            f"snapshot was embedded with {snapshot.embedder_id!r}, query uses {embedder.embedder_id!r}"
        )


def _allowed_indices(snapshot: CorpusSnapshot, denylist: frozenset[str] | None) -> list[int]:
    if not denylist:
        return list(range(len(snapshot.items)))
    return [
        item.index
        for item in snapshot.items
        if signature_name(item.signature) not in denylist
    ]


def top_k(
    query: RetrievalQuery,
    snapshot: CorpusSnapshot,
    embedder: EmbeddingProvider,
    denylist: frozenset[str] | None = None,
) -> RetrievalResult:
    """Exact top-k scan: score descending, ties by ascending corpus index."""
    _check_embedder(snapshot, embedder)
    scores = _score_all(snapshot, embedder.embed(query.text))
    allowed = _allowed_indices(snapshot, denylist)
    order = sorted(allowed, key=lambda i: (-scores[i], i))[: min(query.k, len(allowed))]
    items = tuple((snapshot.items[i], float(scores[i])) for i in order)
    return RetrievalResult(
        items=items,
        query_digest=json_digest({"kind": "topk", "text": query.text, "k": query.k}),
        snapshot_digest=snapshot.content_digest,
    )


def filter_redundancy(items: Sequence[CorpusItem], delta: float = DEFAULT_DELTA) -> list[CorpusItem]:
    """Drop items whose similarity to a surviving earlier-index item exceeds delta.

    Survivors are decided by a greedy scan in ascending corpus-index order;
    the input's relative order is preserved in the output. The earliest-index
    item always survives.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must be in (0, 1]")
    scan_order = sorted(range(len(items)), key=lambda p: (items[p].index, p))
    kept: list[int] = []
    for position in scan_order:
        candidate = items[position]
        redundant = any(
            cosine_sim(candidate.embedding, items[q].embedding) > delta for q in kept
        )
        if not redundant:
            kept.append(position)
    kept_set = set(kept)
    return [items[p] for p in range(len(items)) if p in kept_set]


def plan_conditioned_retrieve(
    subgoals: Sequence[str],
    k_total: int,
    snapshot: CorpusSnapshot,
    embedder: EmbeddingProvider,
    delta: float = DEFAULT_DELTA,
    denylist: frozenset[str] | None = None,
) -> RetrievalResult:
    """Per-subgoal retrieval with ceil-split budgets, union, and filtering.

    Each non-empty subgoal gets budget ceil(k_total / n); results are
    deduplicated by corpus index keeping the best score, redundancy-filtered,
    and ordered by best score (ties by ascending index).
    """
    active = [s for s in subgoals if s.strip()]
    skipped = len(subgoals) - len(active)
    if skipped:
        log.warning("skipping %d empty subgoal string(s)", skipped)
    if not active:
        raise ValueError("at least one non-empty subgoal required")
    per_subgoal = math.ceil(k_total / len(active))
    best: dict[int, float] = {}
    by_index: dict[int, CorpusItem] = {}
    for subgoal in active:
        result = top_k(RetrievalQuery(subgoal, per_subgoal), snapshot, embedder, denylist)
        for item, score in result.items:
            if item.index not in best or score > best[item.index]:
                best[item.index] = score
            by_index[item.index] = item
    candidates = [by_index[i] for i in sorted(by_index)]
    survivors = filter_redundancy(candidates, delta)
    ordered = sorted(survivors, key=lambda item: (-best[item.index], item.index))
    return RetrievalResult(
        items=tuple((item, best[item.index]) for item in ordered),
        query_digest=json_digest({"kind": "plan", "subgoals": active, "k_total": k_total}),
        snapshot_digest=snapshot.content_digest,
    )


def refresh(
    q_next: str,
    plan_next: "Plan | None",
    k: int,
    snapshot: CorpusSnapshot,
    embedder: EmbeddingProvider,
    delta: float = DEFAULT_DELTA,
    denylist: frozenset[str] | None = None,
) -> RetrievalResult:
    """Re-retrieve evidence for the updated query; replaces the evidence set.

    Dispatches to plain top-k when no plan (or an empty plan) is present,
    otherwise to plan-conditioned retrieval over the subgoal names.
    """
    if plan_next is None or not plan_next.subgoals:
        return top_k(RetrievalQuery(q_next, k), snapshot, embedder, denylist)
    names = [name for name, _ in plan_next.subgoals]
    return plan_conditioned_retrieve(names, k, snapshot, embedder, delta, denylist)
