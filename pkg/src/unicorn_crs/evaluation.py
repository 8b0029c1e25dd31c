"""Success-rate, average-turn and hierarchical DCG metrics plus rule-based baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .actions import ActionSpace
from .env import Ask, ConversationState, Recommend
from .graph import InteractionSet, KnowledgeGraph, attribute, item
from .pretrain import EmbeddingTable
from .rollout import Decision, EnvConfig, EpisodeRecord, Policy, random_decision, rollout
from .simulator import session_stream


@dataclass(frozen=True)
class SessionResult:
    success: bool
    success_turn: int | None
    success_position: int | None
    length: int

    @classmethod
    def from_record(cls, rec: EpisodeRecord) -> "SessionResult":
        return cls(rec.success, rec.success_turn, rec.success_position, rec.length)


@dataclass
class MetricReport:
    sr_at: dict[int, float]
    at: float
    hdcg: float
    n_sessions: int

    def sr(self, t: int) -> float:
        return self.sr_at[t]

    def to_json(self) -> dict:
        return {
            "sr_at": {str(t): v for t, v in self.sr_at.items()},
            "at": self.at,
            "hdcg": self.hdcg,
            "n_sessions": self.n_sessions,
        }


def hdcg_session(t: int | None, k: int | None, max_turn: int = 15, rec_size: int = 10) -> float:
    """Gain of one session that succeeded at turn ``t`` with the target at position ``k`` (both 1-based).

    ``t=None`` means the session failed and scores 0.
    """
    if t is None:
        return 0.0
    if not 1 <= t <= max_turn:
        raise ValueError(f"success turn {t} outside [1, {max_turn}]")
    if k is None or not 1 <= k <= rec_size:
        raise ValueError(f"success position {k} outside [1, {rec_size}]")
    outer = 1.0 / math.log2(t + 2)
    return outer + (1.0 / math.log2(t + 1) - outer) / math.log2(k + 1)


def aggregate(results: Iterable[SessionResult], max_turn: int = 15, rec_size: int = 10) -> MetricReport:
    results = list(results)
    if not results:
        raise ValueError("no sessions to aggregate")
    n = len(results)
    turns = [r.success_turn for r in results if r.success]
    sr_at = {t: sum(1 for s in turns if s <= t) / n for t in range(1, max_turn + 1)}
    at = sum(r.length if r.success else max_turn for r in results) / n
    hdcg = sum(hdcg_session(r.success_turn, r.success_position, max_turn, rec_size) for r in results) / n
    return MetricReport(sr_at, at, hdcg, n)


def _top_items(state: ConversationState, weights: dict[int, float], k: int) -> tuple[int, ...]:
    return tuple(sorted(state.cand_items, key=lambda v: (-weights[v], v))[:k])


class AbsGreedy:
    """Recommend the top-K candidate items by preference score on every turn."""

    def __init__(self, rec_size: int = 10):
        self.rec_size = rec_size

    def __call__(self, state, weights, space, rng) -> Decision:
        if not state.cand_items:
            raise ValueError("no candidate items to recommend")
        items = _top_items(state, weights, self.rec_size)
        return Decision(Recommend(items), item(items[0]))


def binary_entropy(f: float) -> float:
    if f <= 0.0 or f >= 1.0:
        return 0.0
    return -f * math.log2(f) - (1 - f) * math.log2(1 - f)


def max_entropy_attribute(g: KnowledgeGraph, state: ConversationState) -> int | None:
    """Candidate attribute whose coverage of the candidate items is closest to half."""
    if not state.cand_attrs:
        return None
    n = len(state.cand_items)
    best, best_h = None, -1.0
    for p in sorted(state.cand_attrs):
        cover = len(g.attr_items[p] & state.cand_items)
        h = binary_entropy(cover / n) if n else 0.0
        if h > best_h:
            best, best_h = p, h
    return best


def linear_ask_schedule(max_turn: int) -> Callable[[int], float]:
    return lambda turn: max(0.0, 1.0 - turn / max_turn)


class MaxEntropy:
    """Ask the maximum-entropy attribute with probability ``ask_prob(turn)``, else recommend top-K."""

    def __init__(self, g: KnowledgeGraph, rec_size: int = 10, max_turn: int = 15,
                 ask_prob: Callable[[int], float] | None = None):
        self.g = g
        self.rec_size = rec_size
        self.ask_prob = ask_prob or linear_ask_schedule(max_turn)

    def __call__(self, state, weights, space, rng) -> Decision:
        q = self.ask_prob(state.turn)
        if q > 0 and state.cand_attrs and rng.random() < q:
            p = max_entropy_attribute(self.g, state)
            return Decision(Ask(p), attribute(p))
        if not state.cand_items:
            p = max_entropy_attribute(self.g, state)
            return Decision(Ask(p), attribute(p))
        items = _top_items(state, weights, self.rec_size)
        return Decision(Recommend(items), item(items[0]))


class RandomPolicy:
    """Uniform over the pruned action space; an item pick recommends the item actions."""

    def __init__(self, rec_size: int = 10):
        self.rec_size = rec_size

    def __call__(self, state, weights, space: ActionSpace, rng) -> Decision:
        return random_decision(space, rng, self.rec_size, weights)


def evaluate(
    g: KnowledgeGraph,
    emb: EmbeddingTable,
    policy: Policy,
    interactions: InteractionSet,
    env_cfg: EnvConfig = EnvConfig(),
    seed: int = 0,
) -> tuple[MetricReport, list[EpisodeRecord]]:
    """One session per interaction pair, in file order, with per-session seeded streams."""
    records = []
    for i, sim in enumerate(session_stream(g, interactions)):
        rng = np.random.default_rng([seed, 3, i])
        records.append(rollout(g, emb, sim, sim.user, sim.target, policy, env_cfg, rng, session_id=i))
    if not records:
        raise ValueError("evaluation split has no interaction pairs")
    report = aggregate((SessionResult.from_record(r) for r in records), env_cfg.max_turn, env_cfg.rec_size)
    return report, records


def mean_std(reports: list[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean and standard deviation of the headline metrics over seeds."""
    keys = {"sr@T": lambda r: r.sr_at[max(r.sr_at)], "at": lambda r: r.at, "hdcg": lambda r: r.hdcg}
    return {k: (float(np.mean([f(r) for r in reports])), float(np.std([f(r) for r in reports])))
            for k, f in keys.items()}
