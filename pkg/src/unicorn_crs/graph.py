"""Typed user/item/attribute knowledge graph and candidate-set reasoning.

Node identifiers in the data files are arbitrary strings. They are interned
into dense per-kind integer indices in order of first appearance, so that a
given pair of files always produces the same graph.

Inside the library, history fields carry plain integer indices whose kind is
implied by the field (``accepted`` holds attribute indices, ``rejected_items``
holds item indices, ...). :class:`NodeId` is used wherever kinds mix, e.g. the
nodes of a subgraph or an action.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

INTERACT = "interact"
BELONG = "belong"


class Kind(enum.IntEnum):
    USER = 0
    ITEM = 1
    ATTRIBUTE = 2


class NodeId(NamedTuple):
    kind: Kind
    index: int

    def __repr__(self) -> str:
        return f"{self.kind.name[0].lower()}{self.index}"


def user(i: int) -> NodeId:
    return NodeId(Kind.USER, i)


def item(i: int) -> NodeId:
    return NodeId(Kind.ITEM, i)


def attribute(i: int) -> NodeId:
    return NodeId(Kind.ATTRIBUTE, i)


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class Split(enum.Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


@dataclass(frozen=True)
class InteractionSet:
    pairs: tuple[tuple[int, int], ...]
    split: Split | None = None

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class KnowledgeGraph:
    """Immutable after construction; share freely between sessions."""

    user_names: list[str]
    item_names: list[str]
    attr_names: list[str]
    item_attrs: list[frozenset[int]]
    user_items: list[frozenset[int]]
    extra_triplets: list[tuple[NodeId, str, NodeId]] = field(default_factory=list)
    attr_items: list[frozenset[int]] = field(init=False)
    item_users: list[frozenset[int]] = field(init=False)

    def __post_init__(self) -> None:
        if len(self.item_attrs) != len(self.item_names):
            raise DatasetError("item_attrs length does not match item count")
        for v, attrs in enumerate(self.item_attrs):
            if not attrs:
                raise DatasetError(f"item {self.item_names[v]!r} has no attributes")
            if max(attrs) >= len(self.attr_names) or min(attrs) < 0:
                raise DatasetError(f"item {self.item_names[v]!r} references an unknown attribute")
        attr_items: list[set[int]] = [set() for _ in self.attr_names]
        for v, attrs in enumerate(self.item_attrs):
            for p in attrs:
                attr_items[p].add(v)
        self.attr_items = [frozenset(s) for s in attr_items]
        item_users: list[set[int]] = [set() for _ in self.item_names]
        for u, items in enumerate(self.user_items):
            for v in items:
                if not 0 <= v < len(self.item_names):
                    raise DatasetError(f"user {self.user_names[u]!r} references an unknown item")
                item_users[v].add(u)
        self.item_users = [frozenset(s) for s in item_users]

    @property
    def n_users(self) -> int:
        return len(self.user_names)

    @property
    def n_items(self) -> int:
        return len(self.item_names)

    @property
    def n_attrs(self) -> int:
        return len(self.attr_names)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_attrs

    @property
    def relations(self) -> list[str]:
        rels = [INTERACT, BELONG]
        for _, r, _ in self.extra_triplets:
            if r not in rels:
                rels.append(r)
        return rels

    def global_index(self, node: NodeId) -> int:
        """Row of ``node`` in a table ordered users, items, attributes."""
        if node.kind is Kind.USER:
            return node.index
        if node.kind is Kind.ITEM:
            return self.n_users + node.index
        return self.n_users + self.n_items + node.index

    def node_at(self, g: int) -> NodeId:
        if g < self.n_users:
            return user(g)
        g -= self.n_users
        if g < self.n_items:
            return item(g)
        return attribute(g - self.n_items)

    def name(self, node: NodeId) -> str:
        names = (self.user_names, self.item_names, self.attr_names)[node.kind]
        return names[node.index]

    def count(self, kind: Kind) -> int:
        return (self.n_users, self.n_items, self.n_attrs)[kind]

    def triplets(self, pairs: Iterable[tuple[int, int]] | None = None) -> list[tuple[NodeId, str, NodeId]]:
        """Training triplets for embedding pretraining.

        ``pairs`` restricts the interaction relation to the given user/item
        pairs (the training split); by default every graph interaction is used.
        """
        if pairs is None:
            pairs = [(u, v) for u, items in enumerate(self.user_items) for v in sorted(items)]
        out = [(user(u), INTERACT, item(v)) for u, v in pairs]
        out += [(item(v), BELONG, attribute(p)) for v, attrs in enumerate(self.item_attrs) for p in sorted(attrs)]
        out += self.extra_triplets
        return out


def candidate_items(g: KnowledgeGraph, accepted: Iterable[int], rejected_items: Iterable[int] = ()) -> set[int]:
    """Items carrying every accepted attribute, minus rejected items."""
    accepted = list(accepted)
    if not accepted:
        return set(range(g.n_items)) - set(rejected_items)
    # intersect smallest first
    sets = sorted((g.attr_items[p] for p in accepted), key=len)
    out = set(sets[0])
    for s in sets[1:]:
        out &= s
    out.difference_update(rejected_items)
    return out


def candidate_attributes(
    g: KnowledgeGraph,
    cand_items: Iterable[int],
    accepted: Iterable[int] = (),
    rejected_attrs: Iterable[int] = (),
) -> set[int]:
    """Attributes of at least one candidate item, minus asked attributes."""
    out: set[int] = set()
    for v in cand_items:
        out |= g.item_attrs[v]
    out.difference_update(accepted)
    out.difference_update(rejected_attrs)
    return out


def _read_lines(path: Path) -> list[tuple[int, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetError(f"not valid UTF-8 ({exc})", path) from exc
    return [(n, line) for n, line in enumerate(text.splitlines(), start=1) if line.strip()]


def load_dataset(
    interactions_path: str | Path,
    attributes_path: str | Path,
    kg_path: str | Path | None = None,
) -> tuple[KnowledgeGraph, InteractionSet]:
    """Read the tab-separated dataset files into a graph and its interactions.

    Items and attributes are declared by the attributes file; users by the
    interactions file. An interaction naming an undeclared item is rejected.
    """
    item_ids: dict[str, int] = {}
    attr_ids: dict[str, int] = {}
    item_attrs: list[set[int]] = []
    for n, line in _read_lines(Path(attributes_path)):
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2 or not parts[0].strip():
            raise DatasetError("expected 'item_id<TAB>attr_id[,attr_id...]'", attributes_path, n)
        name = parts[0].strip()
        attrs = [a.strip() for a in parts[1].split(",") if a.strip()]
        if not attrs:
            raise DatasetError(f"item {name!r} has no attributes", attributes_path, n)
        if name in item_ids:
            v = item_ids[name]
        else:
            v = item_ids[name] = len(item_ids)
            item_attrs.append(set())
        for a in attrs:
            if a not in attr_ids:
                attr_ids[a] = len(attr_ids)
            item_attrs[v].add(attr_ids[a])

    user_ids: dict[str, int] = {}
    user_items: list[set[int]] = []
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for n, line in _read_lines(Path(interactions_path)):
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise DatasetError("expected 'user_id<TAB>item_id'", interactions_path, n)
        uname, vname = parts[0].strip(), parts[1].strip()
        if vname not in item_ids:
            raise DatasetError(f"unknown item {vname!r}", interactions_path, n)
        if uname not in user_ids:
            user_ids[uname] = len(user_ids)
            user_items.append(set())
        u, v = user_ids[uname], item_ids[vname]
        user_items[u].add(v)
        if (u, v) not in seen:
            seen.add((u, v))
            pairs.append((u, v))

    g = KnowledgeGraph(
        user_names=list(user_ids),
        item_names=list(item_ids),
        attr_names=list(attr_ids),
        item_attrs=[frozenset(s) for s in item_attrs],
        user_items=[frozenset(s) for s in user_items],
    )
    if kg_path is not None and Path(kg_path).exists():
        g.extra_triplets = _read_kg(g, Path(kg_path))
    return g, InteractionSet(tuple(pairs))


def _read_kg(g: KnowledgeGraph, path: Path) -> list[tuple[NodeId, str, NodeId]]:
    lookup: dict[str, NodeId] = {}
    for kind, names in ((Kind.USER, g.user_names), (Kind.ITEM, g.item_names), (Kind.ATTRIBUTE, g.attr_names)):
        for i, name in enumerate(names):
            lookup.setdefault(name, NodeId(kind, i))
    out = []
    for n, line in _read_lines(path):
        parts = [s.strip() for s in line.split("\t")]
        if len(parts) < 3:
            raise DatasetError("expected 'head<TAB>relation<TAB>tail'", path, n)
        head, rel, tail = parts[:3]
        if rel in (INTERACT, BELONG):
            continue  # already derived from the two main files
        if head not in lookup or tail not in lookup:
            raise DatasetError(f"dangling reference in triplet {head!r} {rel!r} {tail!r}", path, n)
        out.append((lookup[head], rel, lookup[tail]))
    return out


def split_interactions(
    interactions: InteractionSet,
    seed: int,
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
) -> dict[Split, InteractionSet]:
    """Seeded shuffle of the pairs into disjoint train/valid/test sets."""
    pairs = list(interactions.pairs)
    order = np.random.default_rng(seed).permutation(len(pairs))
    n_train = int(round(ratios[0] * len(pairs)))
    n_valid = int(round(ratios[1] * len(pairs)))
    shuffled = [pairs[i] for i in order]
    return {
        Split.TRAIN: InteractionSet(tuple(shuffled[:n_train]), Split.TRAIN),
        Split.VALID: InteractionSet(tuple(shuffled[n_train:n_train + n_valid]), Split.VALID),
        Split.TEST: InteractionSet(tuple(shuffled[n_train + n_valid:]), Split.TEST),
    }


def write_splits(g: KnowledgeGraph, splits: dict[Split, InteractionSet], path: str | Path) -> None:
    lines = []
    for split in Split:
        for u, v in splits[split].pairs:
            lines.append(f"{g.user_names[u]}\t{g.item_names[v]}\t{split.value}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_splits(g: KnowledgeGraph, path: str | Path) -> dict[Split, InteractionSet]:
    uid = {name: i for i, name in enumerate(g.user_names)}
    vid = {name: i for i, name in enumerate(g.item_names)}
    buckets: dict[Split, list[tuple[int, int]]] = {s: [] for s in Split}
    for n, line in _read_lines(Path(path)):
        parts = [s.strip() for s in line.split("\t")]
        if len(parts) != 3:
            raise DatasetError("expected 'user_id<TAB>item_id<TAB>split'", path, n)
        try:
            split = Split(parts[2])
        except ValueError:
            raise DatasetError(f"unknown split {parts[2]!r}", path, n) from None
        if parts[0] not in uid or parts[1] not in vid:
            raise DatasetError("dangling reference", path, n)
        buckets[split].append((uid[parts[0]], vid[parts[1]]))
    return {s: InteractionSet(tuple(p), s) for s, p in buckets.items()}
