from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arcs.embedding import HashingEmbedder
from arcs.errors import DimensionMismatchError, EmbedderMismatchError
from arcs.planner import Plan
from arcs.retrieval import (
    RetrievalQuery,
    cosine_sim,
    filter_redundancy,
    plan_conditioned_retrieve,
    refresh,
    signature_name,
    top_k,
)

from helpers import make_item, normalized, snapshot_from_embeddings, unit_vector


def test_cosine_identical_unit_vectors():
    assert cosine_sim([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)


def test_cosine_orthogonal():
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)


def test_cosine_reference_value():
    # dot=32, norms sqrt(14) and sqrt(77)
    assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(0.974632, abs=1e-6)


def test_cosine_symmetry_and_range():
    rng = random.Random(7)
    for _ in range(50):
        a = [rng.uniform(-1, 1) for _ in range(8)]
        b = [rng.uniform(-1, 1) for _ in range(8)]
        forward = cosine_sim(a, b)
        assert forward == pytest.approx(cosine_sim(b, a))
        assert -1.0 - 1e-12 <= forward <= 1.0 + 1e-12


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        cosine_sim([1.0], [1.0, 2.0])


def test_cosine_zero_vector_is_zero():
    assert cosine_sim([0.0, 0.0], [1.0, 2.0]) == 0.0


def _id_embedder(dimension):
    embedder = HashingEmbedder(dimension)
    return embedder


def test_top_k_tie_break_by_ascending_index():
    # items 0 and 1 share an embedding, so they tie exactly on any query
    shared = unit_vector(4, 0)
    snap = snapshot_from_embeddings([shared, shared, unit_vector(4, 1)], embedder_id="hash4")
    embedder = _id_embedder(4)
    query_vector = embedder.embed("anything")
    # score via the items themselves: replace the query with a planted vector
    result = top_k(RetrievalQuery("anything", 2), snap, embedder)
    assert [item.index for item, _ in result.items] == [0, 1]


def test_top_k_budget_beyond_corpus_returns_all():
    snap = snapshot_from_embeddings(
        [unit_vector(4, i % 4) for i in range(3)], embedder_id="hash4"
    )
    result = top_k(RetrievalQuery("q", 50), snap, _id_embedder(4))
    assert len(result.items) == 3


def test_top_k_matches_brute_force_oracle():
    rng = random.Random(13)
    dimension = 16
    embedder = HashingEmbedder(dimension)
    texts = [f"function {i} handles case {rng.randrange(5)}" for i in range(50)]
    snap = snapshot_from_embeddings(
        [embedder.embed(t) for t in texts], embedder_id=embedder.embedder_id
    )
    query = "function handles case 3"
    result = top_k(RetrievalQuery(query, 5), snap, embedder)

    # independent oracle: pure-python cosine over every item, full sort
    query_vector = embedder.embed(query)
    scores = []
    for item in snap.items:
        dot = sum(a * b for a, b in zip(query_vector, item.embedding))
        qn = math.sqrt(sum(a * a for a in query_vector))
        en = math.sqrt(sum(b * b for b in item.embedding))
        scores.append(0.0 if qn == 0 or en == 0 else dot / (qn * en))
    expected = sorted(range(len(snap.items)), key=lambda i: (-scores[i], i))[:5]
    assert [item.index for item, _ in result.items] == expected


def test_top_k_rejects_mismatched_embedder():
    snap = snapshot_from_embeddings([unit_vector(4, 0)], embedder_id="hash4")
    with pytest.raises(EmbedderMismatchError):
        top_k(RetrievalQuery("q", 1), snap, HashingEmbedder(8))


def test_top_k_is_deterministic():
    embedder = HashingEmbedder(8)
    snap = snapshot_from_embeddings(
        [embedder.embed(f"item {i}") for i in range(20)], embedder_id="hash8"
    )
    first = top_k(RetrievalQuery("item query", 5), snap, embedder)
    second = top_k(RetrievalQuery("item query", 5), snap, embedder)
    assert first == second


def test_denylist_excludes_items_by_name():
    embedder = HashingEmbedder(8)
    items = [embedder.embed("alpha"), embedder.embed("beta")]
    snap = snapshot_from_embeddings(items, embedder_id="hash8")
    result = top_k(
        RetrievalQuery("alpha", 2), snap, embedder, denylist=frozenset({"item_0"})
    )
    assert [item.index for item, _ in result.items] == [1]


def test_signature_name_variants():
    assert signature_name("add(a, b)") == "add"
    assert signature_name("static int join(char *a)") == "join"
    assert signature_name("Accumulator(object)") == "Accumulator"


def _two_vectors_with_cosine(value):
    first = (1.0, 0.0)
    second = (value, math.sqrt(1.0 - value * value))
    return first, second


def test_filter_drops_later_index_above_delta():
    a, b = _two_vectors_with_cosine(0.9)
    items = [make_item(0, a), make_item(1, b)]
    survivors = filter_redundancy(items, delta=0.85)
    assert [item.index for item in survivors] == [0]


def test_filter_keeps_everything_at_or_below_delta():
    a, b = _two_vectors_with_cosine(0.5)
    items = [make_item(0, a), make_item(1, b)]
    assert filter_redundancy(items, delta=0.85) == items


def test_filter_collapses_exact_duplicates():
    vec = normalized([1.0, 2.0, 3.0])
    items = [make_item(0, vec), make_item(1, vec)]
    survivors = filter_redundancy(items, delta=0.85)
    assert [item.index for item in survivors] == [0]


def test_filter_survivor_set_ignores_input_order():
    a, b = _two_vectors_with_cosine(0.99)
    items = [make_item(1, b), make_item(0, a)]
    survivors = filter_redundancy(items, delta=0.85)
    # lower corpus index survives even when listed later
    assert [item.index for item in survivors] == [0]


def test_filter_greedy_prefix_chain():
    # a~b and b~c above delta, a~c below: b removed, then c survives via a
    a = (1.0, 0.0)
    b = (math.cos(math.radians(25)), math.sin(math.radians(25)))
    c = (math.cos(math.radians(50)), math.sin(math.radians(50)))
    items = [make_item(0, a), make_item(1, b), make_item(2, c)]
    assert cosine_sim(a, b) > 0.85 and cosine_sim(b, c) > 0.85 and cosine_sim(a, c) < 0.85
    survivors = filter_redundancy(items, delta=0.85)
    assert [item.index for item in survivors] == [0, 2]


@settings(deadline=None, max_examples=60)
@given(
    st.lists(
        st.lists(
            st.floats(min_value=-1.0, max_value=1.0, allow_nan=False, width=32),
            min_size=4,
            max_size=4,
        ),
        min_size=0,
        max_size=12,
    ),
    st.floats(min_value=0.05, max_value=1.0, allow_nan=False),
)
def test_filter_idempotent(vectors, delta):
    items = [make_item(i, tuple(vec)) for i, vec in enumerate(vectors)]
    once = filter_redundancy(items, delta)
    twice = filter_redundancy(once, delta)
    assert twice == once


def test_filter_monotone_in_delta_on_planted_pairs():
    rng = random.Random(5)
    originals = []
    for _ in range(8):
        vec = [rng.gauss(0, 1) for _ in range(32)]
        originals.append(normalized(vec))
    items = []
    for vec in originals:
        items.append(vec)
        noisy = [v + rng.gauss(0, 0.01) for v in vec]
        items.append(normalized(noisy))
    corpus = [make_item(i, vec) for i, vec in enumerate(items)]
    deltas = [0.5, 0.85, 0.9, 0.999]
    survivor_sets = [
        {item.index for item in filter_redundancy(corpus, delta)} for delta in deltas
    ]
    for tighter, looser in zip(survivor_sets, survivor_sets[1:]):
        assert tighter <= looser


def test_plan_conditioned_single_subgoal_equals_top_k():
    # holds when no retrieved pair exceeds delta (single-subgoal union is
    # still redundancy-filtered per the aggregation rule)
    words = ["gradient", "mutex", "parser", "socket", "quaternion", "ledger"]
    embedder = HashingEmbedder(64)
    vectors = [embedder.embed(word) for word in words]
    for i, a in enumerate(vectors):
        for b in vectors[i + 1 :]:
            assert cosine_sim(a, b) <= 0.85
    snap = snapshot_from_embeddings(vectors, embedder_id="hash64")
    merged = plan_conditioned_retrieve(["parser"], 4, snap, embedder)
    plain = top_k(RetrievalQuery("parser", 4), snap, embedder)
    assert [item.index for item, _ in merged.items] == [item.index for item, _ in plain.items]


def test_plan_conditioned_splits_budget_across_disjoint_clusters():
    # two orthogonal clusters; each subgoal should pull ceil(4/2)=2 from its own
    dimension = 8
    cluster_a = [unit_vector(dimension, 0), unit_vector(dimension, 1)]
    cluster_b = [unit_vector(dimension, 4), unit_vector(dimension, 5)]

    class PlantedEmbedder(HashingEmbedder):
        def embed(self, text):
            if "alpha" in text:
                return list(normalized([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
            if "beta" in text:
                return list(normalized([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]))
            return super().embed(text)

    embedder = PlantedEmbedder(dimension)
    snap = snapshot_from_embeddings(cluster_a + cluster_b, embedder_id="hash8")
    result = plan_conditioned_retrieve(["alpha", "beta"], 4, snap, embedder)
    indices = {item.index for item, _ in result.items}
    assert len(result.items) <= 4
    assert indices & {0, 1} and indices & {2, 3}


def test_plan_conditioned_union_deduplicates():
    embedder = HashingEmbedder(8)
    snap = snapshot_from_embeddings([embedder.embed("shared topic")], embedder_id="hash8")
    result = plan_conditioned_retrieve(["shared topic", "shared topic two"], 4, snap, embedder)
    assert [item.index for item, _ in result.items] == [0]


def test_plan_conditioned_skips_empty_subgoals():
    embedder = HashingEmbedder(8)
    snap = snapshot_from_embeddings([embedder.embed("thing")], embedder_id="hash8")
    result = plan_conditioned_retrieve(["", "thing"], 2, snap, embedder)
    assert len(result.items) == 1
    with pytest.raises(ValueError):
        plan_conditioned_retrieve(["", "  "], 2, snap, embedder)


def test_refresh_dispatches_on_plan_presence():
    embedder = HashingEmbedder(8)
    snap = snapshot_from_embeddings(
        [embedder.embed(f"topic {i}") for i in range(6)], embedder_id="hash8"
    )
    no_plan = refresh("topic 2", None, 3, snap, embedder)
    assert no_plan == top_k(RetrievalQuery("topic 2", 3), snap, embedder)

    plan = Plan(contract="", sketch="", subgoals=(("topic 1", ""), ("topic 4", "")))
    with_plan = refresh("ignored", plan, 3, snap, embedder)
    assert with_plan == plan_conditioned_retrieve(["topic 1", "topic 4"], 3, snap, embedder)

    empty_plan = Plan(contract="c", sketch="s", subgoals=())
    assert refresh("topic 2", empty_plan, 3, snap, embedder) == no_plan


def test_refresh_is_stable_across_identical_calls():
    embedder = HashingEmbedder(8)
    snap = snapshot_from_embeddings(
        [embedder.embed(f"topic {i}") for i in range(6)], embedder_id="hash8"
    )
    first = refresh("same question", None, 3, snap, embedder)
    second = refresh("same question", None, 3, snap, embedder)
    assert first.query_digest == second.query_digest
    assert first == second
