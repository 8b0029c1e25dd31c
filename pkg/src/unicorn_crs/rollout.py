"""Session loop shared by training, evaluation, baselines and interactive use."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from .actions import ActionSpace, action_space
from .env import Action, Ask, ConversationState, Recommend, Responder, RewardScheme, StepOutcome, item_weights, reset, step
from .graph import Kind, KnowledgeGraph, NodeId
from .pretrain import EmbeddingTable


@dataclass(frozen=True)
class EnvConfig:
    max_turn: int = 15
    rec_size: int = 10
    k_v: int = 10
    k_p: int = 10
    rewards: RewardScheme = RewardScheme()


@dataclass(frozen=True)
class Decision:
    action: Action
    node: NodeId  # the action-space entry the policy picked


class Policy(Protocol):
    def __call__(self, state: ConversationState, weights: dict[int, float], space: ActionSpace,
                 rng: np.random.Generator) -> Decision: ...


@dataclass(frozen=True)
class Transition:
    state: ConversationState
    space: ActionSpace
    decision: Decision
    outcome: StepOutcome
    next_weights: dict[int, float]
    next_space: ActionSpace


@dataclass
class EpisodeRecord:
    session_id: int
    user: str
    target: str
    turns: list[dict] = field(default_factory=list)
    success: bool = False
    length: int = 0
    success_turn: int | None = None
    success_position: int | None = None

    @property
    def total_reward(self) -> float:
        return float(sum(t["reward"] for t in self.turns))

    def to_json(self) -> dict:
        out = asdict(self)
        return {k: out[k] for k in ("session_id", "user", "target", "turns", "success", "length")}


EMPTY_SPACE = ActionSpace((), ())


def observe(g: KnowledgeGraph, emb: EmbeddingTable, state: ConversationState, cfg: EnvConfig):
    weights = item_weights(g, emb, state)
    return weights, action_space(g, state, weights, cfg.k_v, cfg.k_p)


def rollout(
    g: KnowledgeGraph,
    emb: EmbeddingTable,
    responder: Responder,
    user: int,
    target: int,
    policy: Policy,
    cfg: EnvConfig,
    rng: np.random.Generator,
    session_id: int = 0,
    hook: Callable[[Transition], None] | None = None,
    initial_attr: int | None = None,
) -> EpisodeRecord:
    """Run one conversation until success, quit, or the turn limit."""
    if initial_attr is None:
        state = reset(g, user, target, rng)
    else:
        state = ConversationState.from_history(g, user, [initial_attr])
    check = getattr(responder, "check_initial", None)
    if check is not None:
        check(state.accepted[0])
    record = EpisodeRecord(session_id, g.user_names[user], g.item_names[target] if target >= 0 else "")
    weights, space = observe(g, emb, state, cfg)
    while True:
        decision = policy(state, weights, space, rng)
        out = step(g, state, decision.action, responder, cfg.rewards, cfg.max_turn)
        if out.terminal:
            next_weights, next_space = {}, EMPTY_SPACE
        else:
            next_weights, next_space = observe(g, emb, out.next_state, cfg)
        if hook is not None:
            hook(Transition(state, space, decision, out, next_weights, next_space))
        a = decision.action
        record.turns.append({
            "action_kind": "ask" if isinstance(a, Ask) else "recommend",
            "node_ids": [g.attr_names[a.attribute]] if isinstance(a, Ask) else [g.item_names[v] for v in a.items],
            "reward": out.reward,
            "accepted": out.accepted,
        })
        state, weights, space = out.next_state, next_weights, next_space
        if out.terminal:
            record.success = out.success
            record.length = len(record.turns)
            if out.success:
                record.success_turn = record.length
                record.success_position = out.position
            return record


def recommend_by_score(space: ActionSpace, scores: dict[int, float], k: int, first: int | None = None) -> Recommend:
    """Recommend item actions ordered by ``scores`` (desc, ties by index), optionally forcing ``first`` to the front."""
    items = sorted((v for v, _ in space.item_actions), key=lambda v: (-scores[v], v))
    if first is not None:
        items.remove(first)
        items.insert(0, first)
    return Recommend(tuple(items[:k]))


def random_decision(space: ActionSpace, rng: np.random.Generator, k: int, item_scores: dict[int, float]) -> Decision:
    nodes = space.nodes()
    if not nodes:
        raise ValueError("empty action space")
    node = nodes[int(rng.integers(len(nodes)))]
    if node.kind is Kind.ITEM:
        return Decision(recommend_by_score(space, item_scores, k, first=node.index), node)
    return Decision(Ask(node.index), node)

