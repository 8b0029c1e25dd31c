"""Candidate action pruning: top items by preference, top attributes by weighted entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .graph import KnowledgeGraph, NodeId, attribute, item

MAX_ENTROPY_SCORE = math.log2(math.e) / math.e


@dataclass(frozen=True)
class ActionSpace:
    item_actions: tuple[tuple[int, float], ...]
    attr_actions: tuple[tuple[int, float], ...]

    def nodes(self) -> list[NodeId]:
        return [item(v) for v, _ in self.item_actions] + [attribute(p) for p, _ in self.attr_actions]

    def __len__(self) -> int:
        return len(self.item_actions) + len(self.attr_actions)


def _top(scores: dict[int, float], k: int) -> tuple[tuple[int, float], ...]:
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(ranked[:k])


def select_items(cand_items, weights: dict[int, float], k_v: int = 10) -> tuple[tuple[int, float], ...]:
    return _top({v: weights[v] for v in cand_items}, k_v)


def attribute_entropy(g: KnowledgeGraph, p: int, cand_items, weights: dict[int, float]) -> float:
    """Weighted entropy score of asking ``p`` (base 2, 0 at prob 0 or 1)."""
    total = sum(weights[v] for v in cand_items)
    if total <= 0:
        raise ValueError("candidate items have zero total weight")
    covered = g.attr_items[p]
    prob = sum(weights[v] for v in cand_items if v in covered) / total
    if prob <= 0.0 or prob >= 1.0:
        return 0.0
    return -prob * math.log2(prob)


def attribute_scores(g: KnowledgeGraph, cand_attrs, cand_items, weights: dict[int, float]) -> dict[int, float]:
    cand_items = list(cand_items)
    if not cand_items:
        return {p: 0.0 for p in cand_attrs}
    total = sum(weights[v] for v in cand_items)
    mass: dict[int, float] = {p: 0.0 for p in cand_attrs}
    for v in cand_items:
        for p in g.item_attrs[v]:
            if p in mass:
                mass[p] += weights[v]
    out = {}
    for p, m in mass.items():
        prob = m / total
        out[p] = 0.0 if prob <= 0.0 or prob >= 1.0 else -prob * math.log2(prob)
    return out


def select_attributes(
    g: KnowledgeGraph,
    cand_attrs,
    cand_items,
    weights: dict[int, float],
    k_p: int = 10,
) -> tuple[tuple[int, float], ...]:
    return _top(attribute_scores(g, cand_attrs, cand_items, weights), k_p)


def action_space(g: KnowledgeGraph, state, weights: dict[int, float], k_v: int = 10, k_p: int = 10) -> ActionSpace:
    return ActionSpace(
        select_items(state.cand_items, weights, k_v),
        select_attributes(g, state.cand_attrs, state.cand_items, weights, k_p),
    )
