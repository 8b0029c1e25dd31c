"""Rule-based simulated user answering from a ground-truth target item."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .graph import InteractionSet, KnowledgeGraph


class RepeatedAsk(RuntimeError):
    """The agent asked the same attribute twice in one session."""


@dataclass
class SimulatedUser:
    user: int
    target: int
    oracle_attrs: frozenset[int]
    _asked: set[int] = field(default_factory=set, repr=False)

    @classmethod
    def for_pair(cls, g: KnowledgeGraph, user: int, target: int) -> "SimulatedUser":
        attrs = g.item_attrs[target]
        if not attrs:
            raise ValueError(f"target item {target} has no attributes")
        return cls(user, target, frozenset(attrs))

    def check_initial(self, attr: int) -> None:
        if attr not in self.oracle_attrs:
            raise ValueError(f"initial attribute {attr} is not an attribute of the target item")
        self._asked.add(attr)

    def respond_ask(self, attr: int) -> bool:
        if attr in self._asked:
            raise RepeatedAsk(f"attribute {attr} was already asked in this session")
        self._asked.add(attr)
        return attr in self.oracle_attrs

    def respond_recommend(self, items) -> tuple[bool, int | None]:
        items = list(items)
        if not items:
            raise ValueError("empty recommendation list")
        if self.target in items:
            return True, items.index(self.target) + 1
        return False, None


def session_stream(
    g: KnowledgeGraph,
    interactions: InteractionSet,
    seed: int | None = None,
    cycle: bool = False,
) -> Iterator[SimulatedUser]:
    """One simulated user per interaction pair.

    With ``seed`` the pairs are shuffled; with ``cycle`` the stream restarts
    with a fresh shuffle each time it runs out. ``seed=None`` keeps file order.
    """
    pairs = list(interactions.pairs)
    if not pairs:
        if cycle:
            raise ValueError("cannot cycle over an empty interaction set")
        return
    rng = np.random.default_rng(seed) if seed is not None else None
    while True:
        order = rng.permutation(len(pairs)) if rng is not None else range(len(pairs))
        for i in order:
            u, v = pairs[i]
            yield SimulatedUser.for_pair(g, u, v)
        if not cycle:
            return
