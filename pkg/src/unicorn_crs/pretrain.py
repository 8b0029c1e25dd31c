"""TransE pretraining of node embeddings.

Margin ranking over (head, relation, tail) triplets with filtered negative
sampling: one side of each positive is replaced by another entity of the same
kind such that the corrupted triplet is not a known positive. Entity vectors
are projected back onto the unit ball after every update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .graph import Kind, KnowledgeGraph, NodeId

log = logging.getLogger(__name__)

_KIND_TENSORS = {Kind.USER: "entity.user", Kind.ITEM: "entity.item", Kind.ATTRIBUTE: "entity.attribute"}


@dataclass
class TransEConfig:
    dim: int = 64
    margin: float = 1.0
    norm: str = "L2"
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.01
    negatives_per_positive: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.norm not in ("L1", "L2"):
            raise ValueError("norm must be 'L1' or 'L2'")
        if self.dim < 1:
            raise ValueError("dim must be positive")


@dataclass
class EmbeddingTable:
    """Entity rows are ordered users, then items, then attributes."""

    entities: np.ndarray
    relations: dict[str, np.ndarray]
    counts: tuple[int, int, int]
    loss_history: list[float] = field(default_factory=list, compare=False)

    @property
    def dim(self) -> int:
        return self.entities.shape[1]

    def row(self, node: NodeId) -> int:
        n_users, n_items, _ = self.counts
        return (0, n_users, n_users + n_items)[node.kind] + node.index

    def vector(self, node: NodeId) -> np.ndarray:
        return self.entities[self.row(node)]

    def block(self, kind: Kind) -> np.ndarray:
        n_users, n_items, n_attrs = self.counts
        start = (0, n_users, n_users + n_items)[kind]
        return self.entities[start:start + self.counts[kind]]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (
            self.counts == other.counts
            and np.array_equal(self.entities, other.entities)
            and self.relations.keys() == other.relations.keys()
            and all(np.array_equal(self.relations[k], other.relations[k]) for k in self.relations)
        )

    def tensors(self) -> dict[str, np.ndarray]:
        out = {name: self.block(kind) for kind, name in _KIND_TENSORS.items()}
        for label, vec in self.relations.items():
            out[f"relation.{label}"] = vec
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "EmbeddingTable":
        try:
            blocks = [np.asarray(tensors[name]) for name in _KIND_TENSORS.values()]
        except KeyError as exc:
            raise checkpoint.CheckpointError(f"missing embedding tensor {exc}") from None
        dims = {b.shape[1] for b in blocks if b.ndim == 2}
        if any(b.ndim != 2 for b in blocks) or len(dims) != 1:
            raise checkpoint.CheckpointError("embedding blocks have inconsistent shapes")
        relations = {k.split(".", 1)[1]: np.asarray(v) for k, v in tensors.items() if k.startswith("relation.")}
        return cls(
            entities=np.concatenate(blocks, axis=0),
            relations=relations,
            counts=tuple(b.shape[0] for b in blocks),
        )


def score(h: np.ndarray, r: np.ndarray, t: np.ndarray, norm: str = "L2") -> float:
    """Translation distance ||h + r - t||."""
    h, r, t = np.asarray(h, float), np.asarray(r, float), np.asarray(t, float)
    if not h.shape == r.shape == t.shape:
        raise ValueError(f"dimension mismatch: {h.shape}, {r.shape}, {t.shape}")
    diff = h + r - t
    return float(np.abs(diff).sum() if norm == "L1" else np.sqrt((diff * diff).sum()))


def margin_term(d_pos: float, d_neg: float, margin: float) -> float:
    return max(0.0, margin + d_pos - d_neg)


def _distances(ent, rel, idx, norm):
    h, r, t = idx[:, 0], idx[:, 1], idx[:, 2]
    diff = ent[h] + rel[r] - ent[t]
    if norm == "L1":
        return np.abs(diff).sum(axis=1), np.sign(diff)
    d = np.sqrt((diff * diff).sum(axis=1))
    safe = np.where(d > 0, d, 1.0)
    return d, diff / safe[:, None]


def hinge_loss_and_grad(
    ent: np.ndarray,
    rel: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    margin: float,
    norm: str = "L2",
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed hinge loss over paired (pos, neg) index triplets and its gradients.

    ``pos`` and ``neg`` are int arrays of shape (n, 3) holding
    (entity row, relation row, entity row).
    """
    d_pos, g_pos = _distances(ent, rel, pos, norm)
    d_neg, g_neg = _distances(ent, rel, neg, norm)
    viol = margin + d_pos - d_neg
    active = viol > 0
    loss = float(np.where(active, viol, 0.0).sum())
    g_ent = np.zeros_like(ent)
    g_rel = np.zeros_like(rel)
    a = active[:, None].astype(float)
    gp, gn = g_pos * a, g_neg * a
    np.add.at(g_ent, pos[:, 0], gp)
    np.add.at(g_rel, pos[:, 1], gp)
    np.add.at(g_ent, pos[:, 2], -gp)
    np.add.at(g_ent, neg[:, 0], -gn)
    np.add.at(g_rel, neg[:, 1], -gn)
    np.add.at(g_ent, neg[:, 2], gn)
    return loss, g_ent, g_rel


class _NegativeSampler:
    """Filtered corruption: never emits a triplet present in the positive set."""

    def __init__(self, idx: np.ndarray, kind_of: np.ndarray, kind_rows: dict[int, np.ndarray]):
        self.kind_of = kind_of
        self.kind_rows = kind_rows
        self.tails: dict[tuple[int, int], set[int]] = {}
        self.heads: dict[tuple[int, int], set[int]] = {}
        for h, r, t in idx:
            self.tails.setdefault((h, r), set()).add(t)
            self.heads.setdefault((r, t), set()).add(h)
        self._cache: dict[tuple, np.ndarray] = {}

    def _choices(self, side: str, h: int, r: int, t: int) -> np.ndarray:
        key = (side, h, r) if side == "tail" else (side, r, t)
        if key not in self._cache:
            if side == "tail":
                pool, taken = self.kind_rows[self.kind_of[t]], self.tails[(h, r)]
            else:
                pool, taken = self.kind_rows[self.kind_of[h]], self.heads[(r, t)]
            self._cache[key] = np.array([e for e in pool if e not in taken], dtype=np.int64)
        return self._cache[key]

    def corrupt(self, triplet: np.ndarray, rng: np.random.Generator) -> np.ndarray | None:
        h, r, t = (int(x) for x in triplet)
        sides = ["head", "tail"] if rng.random() < 0.5 else ["tail", "head"]
        for side in sides:
            choices = self._choices(side, h, r, t)
            if len(choices):
                e = int(choices[rng.integers(len(choices))])
                return np.array([e, r, t] if side == "head" else [h, r, e])
        return None


def _index_triplets(g: KnowledgeGraph, triplets, relations: list[str]) -> np.ndarray:
    rel_ix = {r: i for i, r in enumerate(relations)}
    return np.array(
        [(g.global_index(h), rel_ix[r], g.global_index(t)) for h, r, t in triplets], dtype=np.int64
    ).reshape(-1, 3)


def train_embeddings(
    g: KnowledgeGraph,
    cfg: TransEConfig,
    triplets: list[tuple[NodeId, str, NodeId]] | None = None,
) -> EmbeddingTable:
    """Fit TransE on ``triplets`` (default: every triplet the graph derives)."""
    if triplets is None:
        triplets = g.triplets()
    if not triplets:
        raise ValueError("cannot pretrain embeddings on a graph with zero triplets")
    relations = g.relations
    idx = _index_triplets(g, triplets, relations)
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(g.n_nodes, cfg.dim))
    rel = rng.uniform(-bound, bound, size=(len(relations), cfg.dim))
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)

    kind_of = np.array([g.node_at(i).kind for i in range(g.n_nodes)])
    kind_rows = {int(k): np.flatnonzero(kind_of == k) for k in Kind}
    sampler = _NegativeSampler(idx, kind_of, kind_rows)

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(idx))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = idx[order[start:start + cfg.batch_size]]
            pos, neg = [], []
            for trip in batch:
                for _ in range(cfg.negatives_per_positive):
                    c = sampler.corrupt(trip, rng)
                    if c is not None:
                        pos.append(trip)
                        neg.append(c)
            if not pos:
                continue
            loss, g_ent, g_rel = hinge_loss_and_grad(ent, rel, np.array(pos), np.array(neg), cfg.margin, cfg.norm)
            ent -= cfg.learning_rate * g_ent
            rel -= cfg.learning_rate * g_rel
            norms = np.linalg.norm(ent, axis=1, keepdims=True)
            ent /= np.maximum(norms, 1.0)
            total += loss
            count += len(pos)
        history.append(total / max(count, 1))
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.debug("transe epoch %d loss %.5f", epoch, history[-1])

    return EmbeddingTable(
        entities=ent,
        relations={r: rel[i].copy() for i, r in enumerate(relations)},
        counts=(g.n_users, g.n_items, g.n_attrs),
        loss_history=history,
    )


def mean_tail_rank(
    table: EmbeddingTable,
    g: KnowledgeGraph,
    triplets: list[tuple[NodeId, str, NodeId]],
    norm: str = "L2",
) -> tuple[float, float]:
    """Mean raw rank of each true tail among all entities of its kind.

    Returns ``(mean_rank, random_expectation)`` where the second value is the
    mean of ``(|candidates| + 1) / 2``, the expected rank under random scoring.
    """
    ranks, expected = [], []
    for h, r, t in triplets:
        cands = table.block(t.kind)
        query = table.vector(h) + table.relations[r]
        diff = query[None, :] - cands
        d = np.abs(diff).sum(axis=1) if norm == "L1" else np.sqrt((diff * diff).sum(axis=1))
        ranks.append(1 + int((d < d[t.index]).sum()))
        expected.append((len(cands) + 1) / 2)
    return float(np.mean(ranks)), float(np.mean(expected))


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    checkpoint.save(path, table.tensors())


def load_embeddings(
    path: str | Path,
    g: KnowledgeGraph | None = None,
    dim: int | None = None,
) -> EmbeddingTable:
    table = EmbeddingTable.from_tensors(checkpoint.load(path))
    check_embeddings(table, g, dim)
    return table


def check_embeddings(table: EmbeddingTable, g: KnowledgeGraph | None = None, dim: int | None = None) -> None:
    if dim is not None and table.dim != dim:
        raise checkpoint.CheckpointError(f"embedding dim {table.dim} does not match configured dim {dim}")
    if g is not None and table.counts != (g.n_users, g.n_items, g.n_attrs):
        raise checkpoint.CheckpointError(
            f"embedding table covers {table.counts} (users, items, attributes); graph has "
            f"{(g.n_users, g.n_items, g.n_attrs)}"
        )
