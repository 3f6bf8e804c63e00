from __future__ import annotations

import pytest

from arcs.corpus import ingest
from arcs.embedding import HashingEmbedder

THREE_FUNCTION_FILE = '''\
def add(a, b): "sum"


def scale(values, factor):
    """Multiply every value.

    Preserves input order.
    """
    # factor may be negative
    return [v * factor for v in values]


class Accumulator(object):
    """Running total."""

    def bump(self, amount):
        return amount
'''

SECOND_FILE = '''\
def parse_line(line):
    """Split a csv line."""
    return line.split(",")
'''


@pytest.fixture
def embedder():
    return HashingEmbedder()


@pytest.fixture
def corpus_dir(tmp_path):
    (tmp_path / "alpha.py").write_text(THREE_FUNCTION_FILE, encoding="utf-8")
    (tmp_path / "beta.py").write_text(SECOND_FILE, encoding="utf-8")
    return tmp_path


@pytest.fixture
def snapshot(corpus_dir, embedder):
    paths = sorted(str(p) for p in corpus_dir.glob("*.py"))
    return ingest(paths, embedder)
