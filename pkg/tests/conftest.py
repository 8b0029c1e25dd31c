"""Shared fixtures: the three-item toy graph and small random graphs."""

from __future__ import annotations

import numpy as np
import pytest

from unicorn_crs.graph import KnowledgeGraph, load_dataset
from unicorn_crs.pretrain import EmbeddingTable

TOY_ATTRS = "v1\tp1,p2\nv2\tp1,p3\nv3\tp2\n"
TOY_INTER = "u1\tv1\nu1\tv2\n"

# index constants for the toy graph (interned in file order)
U1 = 0
V1, V2, V3 = 0, 1, 2
P1, P2, P3 = 0, 1, 2


def write_toy(d):
    (d / "item_attributes.tsv").write_text(TOY_ATTRS, encoding="utf-8")
    (d / "interactions.tsv").write_text(TOY_INTER, encoding="utf-8")
    return d


@pytest.fixture
def toy_dir(tmp_path):
    return write_toy(tmp_path)


@pytest.fixture
def toy(toy_dir):
    g, pairs = load_dataset(toy_dir / "interactions.tsv", toy_dir / "item_attributes.tsv")
    return g


@pytest.fixture
def toy_pairs(toy_dir):
    return load_dataset(toy_dir / "interactions.tsv", toy_dir / "item_attributes.tsv")[1]


def random_table(g: KnowledgeGraph, dim: int = 8, seed: int = 0, scale: float = 0.5) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable(
        entities=rng.normal(scale=scale, size=(g.n_nodes, dim)),
        relations={r: rng.normal(size=dim) for r in g.relations},
        counts=(g.n_users, g.n_items, g.n_attrs),
    )


def zero_table(g: KnowledgeGraph, dim: int = 4) -> EmbeddingTable:
    return EmbeddingTable(np.zeros((g.n_nodes, dim)), {r: np.zeros(dim) for r in g.relations},
                          (g.n_users, g.n_items, g.n_attrs))


def random_graph(rng: np.random.Generator, max_nodes: int = 50) -> KnowledgeGraph:
    """Random graph with at most ``max_nodes`` nodes in total."""
    n_users = int(rng.integers(1, 6))
    n_attrs = int(rng.integers(2, 12))
    n_items = int(rng.integers(1, max_nodes - n_users - n_attrs + 1))
    item_attrs = []
    for _ in range(n_items):
        k = int(rng.integers(1, min(5, n_attrs) + 1))
        item_attrs.append(frozenset(int(p) for p in rng.choice(n_attrs, size=k, replace=False)))
    user_items = [frozenset(int(v) for v in rng.choice(n_items, size=int(rng.integers(0, n_items + 1)),
                                                       replace=False)) for _ in range(n_users)]
    return KnowledgeGraph(
        user_names=[f"u{i}" for i in range(n_users)],
        item_names=[f"v{i}" for i in range(n_items)],
        attr_names=[f"p{i}" for i in range(n_attrs)],
        item_attrs=item_attrs,
        user_items=user_items,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
