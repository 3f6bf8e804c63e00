"""Embedding providers: a deterministic built-in hasher and a remote adapter."""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
from abc import ABC, abstractmethod
from typing import Callable

from .errors import DimensionMismatchError
from .util import http_post_json

log = logging.getLogger(__name__)

DEFAULT_DIMENSION = 384
CREDENTIAL_ENV_VAR = "ARCS_API_TOKEN"

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


class EmbeddingProvider(ABC):
    """Maps text deterministically to a fixed-dimension real vector."""

    embedder_id: str
    dimension: int

    @abstractmethod
    def embed(self, text: str) -> list[float]:
        """Embed ``text``; identical text must yield identical vectors."""


class HashingEmbedder(EmbeddingProvider):
    """Feature-hashes 3-grams of the lowercase token stream into buckets.

    Text is normalized to lowercase alphanumeric/underscore tokens joined by
    single spaces and padded with one boundary space on each side; every
    character trigram of that stream is hashed to a bucket and bucket counts
    are L2-normalized. Subword shingles keep related identifiers close
    (``ints`` and ``integers`` share grams) while any non-empty token stream
    embeds non-zero. Empty text embeds to the zero vector.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.embedder_id = f"hash{dimension}"

    def embed(self, text: str) -> list[float]:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            return [0.0] * self.dimension
        stream = " " + " ".join(tokens) + " "
        counts = [0.0] * self.dimension
        for i in range(len(stream) - 2):
            counts[_bucket(stream[i : i + 3], self.dimension)] += 1.0
        norm = math.sqrt(sum(c * c for c in counts))
        return [c / norm for c in counts]


def _bucket(gram: str, dimension: int) -> int:
    raw = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(raw, "big") % dimension


class RemoteEmbedder(EmbeddingProvider):
    """Adapter for a remote embedding endpoint.

    Sends ``{"text": ...}`` and expects ``{"embedding": [...]}`` of the
    configured dimension. The credential, if any, comes from the
    ``ARCS_API_TOKEN`` environment variable and is never logged.
    """

    def __init__(
        self,
        endpoint: str,
        dimension: int = DEFAULT_DIMENSION,
        embedder_id: str = "remote",
        transport: Callable[..., dict] | None = None,
        timeout: float = 30.0,
    ):
        if not endpoint:
            raise ValueError("endpoint required")
        self.endpoint = endpoint
        self.dimension = dimension
        self.embedder_id = embedder_id
        self._transport = transport or http_post_json
        self._timeout = timeout

    def embed(self, text: str) -> list[float]:
        token = os.environ.get(CREDENTIAL_ENV_VAR)
        reply = self._transport(self.endpoint, {"text": text}, self._timeout, token=token)
        vector = reply.get("embedding")
        if not isinstance(vector, list) or len(vector) != self.dimension:
            raise DimensionMismatchError(
                f"endpoint returned {0 if not isinstance(vector, list) else len(vector)} "
                f"dimensions, expected {self.dimension}"
            )
        return [float(x) for x in vector]
