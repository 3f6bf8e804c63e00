from __future__ import annotations

import math

import pytest

from arcs.corpus import embed_metadata
from arcs.embedding import HashingEmbedder, RemoteEmbedder
from arcs.errors import DimensionMismatchError
from arcs.retrieval import cosine_sim


def test_empty_text_embeds_to_zero_vector(embedder):
    vector = embed_metadata("", embedder)
    assert vector == [0.0] * embedder.dimension


def test_identical_text_embeds_identically(embedder):
    first = embedder.embed("def add(a, b): return a + b")
    second = embedder.embed("def add(a, b): return a + b")
    assert first == second


def test_distinct_texts_have_cosine_below_one(embedder):
    a = embedder.embed("parse a csv line into fields")
    b = embedder.embed("multiply a matrix by a vector")
    assert cosine_sim(a, b) < 1.0


def test_nonempty_text_embeds_nonzero_even_for_single_token(embedder):
    vector = embedder.embed("f")
    norm = math.sqrt(sum(v * v for v in vector))
    assert norm == pytest.approx(1.0)


def test_embedder_id_tracks_dimension():
    assert HashingEmbedder(128).embedder_id == "hash128"
    assert HashingEmbedder().dimension == 384


def test_remote_embedder_uses_transport_and_checks_dimension():
    calls = []

    def transport(url, payload, timeout, token=None):
        calls.append((url, payload["text"]))
        return {"embedding": [1.0, 0.0, 0.0]}

    remote = RemoteEmbedder("https://embed.example/v1", dimension=3, transport=transport)
    assert remote.embed("hello") == [1.0, 0.0, 0.0]
    assert calls == [("https://embed.example/v1", "hello")]

    def short_transport(url, payload, timeout, token=None):
        return {"embedding": [1.0]}

    bad = RemoteEmbedder("https://embed.example/v1", dimension=3, transport=short_transport)
    with pytest.raises(DimensionMismatchError):
        bad.embed("hello")
