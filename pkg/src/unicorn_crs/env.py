"""Graph-based conversational MDP: state, weighted subgraph, transitions, rewards."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Union

import numpy as np
from scipy.special import expit

from .graph import Kind, KnowledgeGraph, NodeId, attribute, candidate_attributes, candidate_items, item, user
from .pretrain import EmbeddingTable


@dataclass(frozen=True)
class RewardScheme:
    rec_suc: float = 1.0
    rec_fail: float = -0.1
    ask_suc: float = 0.01
    ask_fail: float = -0.1
    quit: float = -0.3

    def __post_init__(self) -> None:
        if not (self.rec_suc > self.ask_suc > 0 > self.ask_fail and self.rec_fail > self.quit):
            raise ValueError(f"inconsistent reward scheme: {self}")


@dataclass(frozen=True)
class Ask:
    attribute: int


@dataclass(frozen=True)
class Recommend:
    items: tuple[int, ...]


Action = Union[Ask, Recommend]


class InvalidAction(ValueError):
    pass


class Responder(Protocol):
    def respond_ask(self, attr: int) -> bool: ...

    def respond_recommend(self, items: tuple[int, ...]) -> tuple[bool, int | None]: ...


@dataclass(frozen=True)
class ConversationState:
    user: int
    accepted: tuple[int, ...]
    rejected_attrs: frozenset[int] = frozenset()
    rejected_items: frozenset[int] = frozenset()
    turn: int = 0
    cand_items: frozenset[int] = frozenset()
    cand_attrs: frozenset[int] = frozenset()

    @classmethod
    def from_history(
        cls,
        g: KnowledgeGraph,
        user: int,
        accepted,
        rejected_attrs=(),
        rejected_items=(),
        turn: int = 0,
    ) -> "ConversationState":
        accepted = tuple(accepted)
        rejected_attrs = frozenset(rejected_attrs)
        rejected_items = frozenset(rejected_items)
        cand_v = candidate_items(g, accepted, rejected_items)
        cand_p = candidate_attributes(g, cand_v, accepted, rejected_attrs)
        return cls(user, accepted, rejected_attrs, rejected_items, turn, frozenset(cand_v), frozenset(cand_p))

    def history(self) -> tuple:
        return (self.accepted, self.rejected_attrs, self.rejected_items)


@dataclass
class WeightedSubgraph:
    nodes: list[NodeId]
    adjacency: np.ndarray
    item_weights: dict[int, float]
    position: dict[NodeId, int] = field(init=False)

    def __post_init__(self) -> None:
        self.position = {n: i for i, n in enumerate(self.nodes)}


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_state: ConversationState
    terminal: bool
    success: bool
    accepted: bool
    position: int | None = None


def reset(g: KnowledgeGraph, user_ix: int, target: int, rng: np.random.Generator | int) -> ConversationState:
    """Open a session whose first accepted attribute is drawn uniformly from the target's attributes."""
    if not 0 <= user_ix < g.n_users:
        raise ValueError(f"user {user_ix} is not in the graph")
    if not 0 <= target < g.n_items:
        raise ValueError(f"item {target} is not in the graph")
    rng = np.random.default_rng(rng)
    attrs = sorted(g.item_attrs[target])
    p0 = attrs[int(rng.integers(len(attrs)))]
    return ConversationState.from_history(g, user_ix, [p0])


def item_weight(
    emb: EmbeddingTable,
    user_ix: int,
    item_ix: int,
    accepted,
    rejected_attrs,
    item_attrs=None,
) -> float:
    """Preference score in (0, 1) for one item.

    Rejected attributes only count when the item carries them; pass
    ``item_attrs`` (the item's attribute set) to apply that restriction.
    """
    e_v = emb.vector(item(item_ix))
    logit = float(emb.vector(user(user_ix)) @ e_v)
    logit += sum(float(e_v @ emb.vector(attribute(p))) for p in accepted)
    rejected = set(rejected_attrs)
    if item_attrs is not None:
        rejected &= set(item_attrs)
    logit -= sum(float(e_v @ emb.vector(attribute(p))) for p in rejected)
    return float(expit(logit))


def item_weights(
    g: KnowledgeGraph,
    emb: EmbeddingTable,
    state: ConversationState,
    items=None,
) -> dict[int, float]:
    """Vectorised item scores for ``items`` (default: the candidate items)."""
    items = sorted(state.cand_items if items is None else items)
    if not items:
        return {}
    ev = emb.block(Kind.ITEM)[items]
    attrs = emb.block(Kind.ATTRIBUTE)
    logits = ev @ emb.block(Kind.USER)[state.user]
    logits += ev @ attrs[list(state.accepted)].sum(axis=0)
    if state.rejected_attrs:
        rej = sorted(state.rejected_attrs)
        dots = ev @ attrs[rej].T
        mask = np.array([[p in g.item_attrs[v] for p in rej] for v in items])
        logits -= (dots * mask).sum(axis=1)
    w = expit(logits)
    return {v: float(x) for v, x in zip(items, w)}


def build_subgraph(
    g: KnowledgeGraph,
    emb: EmbeddingTable,
    state: ConversationState,
    weights: dict[int, float] | None = None,
) -> WeightedSubgraph:
    """Dynamic weighted graph over the user, accepted and candidate nodes.

    User-item edges carry the item score, item-attribute edges weight 1,
    nothing else is connected.
    """
    if weights is None:
        weights = item_weights(g, emb, state)
    nodes = [user(state.user)]
    nodes += [attribute(p) for p in state.accepted]
    nodes += [attribute(p) for p in sorted(state.cand_attrs)]
    nodes += [item(v) for v in sorted(state.cand_items)]
    pos = {n: i for i, n in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)))
    for v in state.cand_items:
        i = pos[item(v)]
        adj[0, i] = adj[i, 0] = weights[v]
        for p in g.item_attrs[v]:
            j = pos.get(attribute(p))
            if j is not None:
                adj[i, j] = adj[j, i] = 1.0
    return WeightedSubgraph(nodes, adj, {v: weights[v] for v in state.cand_items})


def step(
    g: KnowledgeGraph,
    state: ConversationState,
    action: Action,
    responder: Responder,
    rewards: RewardScheme = RewardScheme(),
    max_turn: int = 15,
) -> StepOutcome:
    """Apply one system action and the user's response."""
    if state.turn >= max_turn:
        raise InvalidAction(f"session already reached the maximum of {max_turn} turns")
    success = False
    position = None
    accepted = list(state.accepted)
    rej_attrs = set(state.rejected_attrs)
    rej_items = set(state.rejected_items)
    if isinstance(action, Ask):
        p = action.attribute
        if p not in state.cand_attrs:
            raise InvalidAction(f"attribute {p} is not a candidate attribute")
        ok = responder.respond_ask(p)
        if ok:
            accepted.append(p)
            reward = rewards.ask_suc
        else:
            rej_attrs.add(p)
            reward = rewards.ask_fail
    elif isinstance(action, Recommend):
        items = tuple(action.items)
        if not items:
            raise InvalidAction("empty recommendation list")
        bad = [v for v in items if v not in state.cand_items]
        if bad:
            raise InvalidAction(f"items {bad} are not candidate items")
        ok, position = responder.respond_recommend(items)
        if ok:
            reward = rewards.rec_suc
            success = True
        else:
            rej_items.update(items)
            reward = rewards.rec_fail
    else:
        raise InvalidAction(f"unknown action {action!r}")

    nxt = ConversationState.from_history(g, state.user, accepted, rej_attrs, rej_items, state.turn + 1)
    terminal = success
    if not success and (nxt.turn >= max_turn or not (nxt.cand_items or nxt.cand_attrs)):
        reward = rewards.quit
        terminal = True
    return StepOutcome(reward, nxt, terminal, success, bool(ok), position)
