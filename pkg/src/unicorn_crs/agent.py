"""Dueling double DQN with prioritized replay over the graph-enhanced state."""

from __future__ import annotations

import copy
import logging
from collections import deque
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .actions import ActionSpace
from .encoder import StateEncoder, StateFeatures, collate, featurize, gather_nodes
from .env import Ask, ConversationState
from .graph import InteractionSet, Kind, KnowledgeGraph
from .pretrain import EmbeddingTable
from .replay import PrioritizedReplay
from .rollout import Decision, EnvConfig, EpisodeRecord, Transition, random_decision, recommend_by_score, rollout
from .simulator import session_stream

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    dim: int = 64
    hidden: int = 100
    gcn_layers: int = 2
    tf_layers: int = 1
    heads: int = 1
    ffn_dim: int = 64
    positional: bool = True
    gamma: float = 0.999
    tau: float = 0.01
    eps_start: float = 1.0
    eps_decay: float = 0.999
    eps_min: float = 0.01
    batch_size: int = 128
    lr: float = 1e-4
    l2: float = 1e-6
    buffer_capacity: int = 50_000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    prio_eps: float = 1e-5
    canonical_dueling: bool = False
    pretrained_action_reps: bool = False
    float64: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")


def mlp(d_in: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Linear(hidden, 1))


class DuelingHeads(nn.Module):
    """Q(s, a) = value(a) + advantage([s; a]).

    With ``canonical=True`` the value net sees the state instead and the mean
    advantage over the action space is subtracted.
    """

    def __init__(self, dim: int = 64, hidden: int = 100, canonical: bool = False):
        super().__init__()
        self.canonical = canonical
        self.value = mlp(dim, hidden)
        self.advantage = mlp(2 * dim, hidden)

    def forward(self, state: torch.Tensor, actions: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """``state`` (B, d), ``actions`` (B, A, d) -> Q (B, A)."""
        pair = torch.cat([state.unsqueeze(1).expand(-1, actions.shape[1], -1), actions], dim=-1)
        adv = self.advantage(pair).squeeze(-1)
        if not self.canonical:
            return self.value(actions).squeeze(-1) + adv
        if mask is None:
            mask = torch.ones_like(adv, dtype=torch.bool)
        m = mask.to(adv.dtype)
        adv = adv - (adv * m).sum(1, keepdim=True) / m.sum(1, keepdim=True).clamp_min(1.0)
        return self.value(state) + adv


def q_value(state_rep, action_rep, heads: DuelingHeads) -> float:
    s = torch.as_tensor(state_rep, dtype=heads.value[0].weight.dtype).reshape(1, -1)
    a = torch.as_tensor(action_rep, dtype=s.dtype).reshape(1, 1, -1)
    with torch.no_grad():
        return float(heads(s, a)[0, 0])


def double_q_targets(
    rewards: torch.Tensor,
    terminal: torch.Tensor,
    q_online_next: torch.Tensor,
    q_target_next: torch.Tensor,
    gamma: float,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """y = r + gamma * Q'(s', argmax_a Q(s', a)), with y = r on terminal rows.

    A non-terminal row whose next action space is empty (mask all False) is
    treated as terminal.
    """
    if mask is None:
        mask = torch.ones_like(q_online_next, dtype=torch.bool)
    masked = q_online_next.masked_fill(~mask, float("-inf"))
    best = masked.argmax(dim=1, keepdim=True)
    boot = q_target_next.gather(1, best).squeeze(1)
    alive = (~terminal) & mask.any(dim=1)
    return rewards + gamma * torch.where(alive, boot, torch.zeros_like(boot))


@torch.no_grad()
def soft_update(online: nn.Module, target: nn.Module, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, parameter by parameter."""
    for p, q in zip(online.parameters(), target.parameters()):
        if p.shape != q.shape:
            raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(q.shape)}")
        q.mul_(1.0 - tau).add_(p, alpha=tau)


@dataclass
class Experience:
    state: ConversationState
    feats: StateFeatures
    action: int  # position of the chosen node in the action space
    reward: float
    next_state: ConversationState
    next_feats: StateFeatures | None
    terminal: bool


class Agent:
    def __init__(self, g: KnowledgeGraph, emb: EmbeddingTable, cfg: AgentConfig = AgentConfig(),
                 env_cfg: EnvConfig = EnvConfig(), seed: int = 0):
        if emb.dim != cfg.dim:
            raise ValueError(f"embedding dim {emb.dim} does not match model dim {cfg.dim}")
        self.g, self.emb, self.cfg, self.env_cfg, self.seed = g, emb, cfg, env_cfg, seed
        self.dtype = torch.float64 if cfg.float64 else torch.float32
        torch.manual_seed(seed)
        self.encoder = StateEncoder(cfg.dim, cfg.gcn_layers, cfg.tf_layers, cfg.heads, cfg.ffn_dim,
                                    cfg.positional).to(self.dtype)
        self.heads = DuelingHeads(cfg.dim, cfg.hidden, cfg.canonical_dueling).to(self.dtype)
        self.target_heads = copy.deepcopy(self.heads).requires_grad_(False)
        self.table = torch.tensor(emb.entities, dtype=self.dtype)
        self.optimizer = torch.optim.Adam(self.parameters(), lr=cfg.lr, weight_decay=cfg.l2)
        self.buffer = PrioritizedReplay(cfg.buffer_capacity, cfg.alpha, cfg.prio_eps)
        self.rng = np.random.default_rng([seed, 1])
        self.episode = 0
        self.epsilon = cfg.eps_start
        self.beta = cfg.beta_start
        self._cache: tuple[ConversationState, StateFeatures] | None = None
        self.last_loss: float | None = None

    def parameters(self) -> list[nn.Parameter]:
        return [*self.encoder.parameters(), *self.heads.parameters()]

    # -- forward -------------------------------------------------------------

    def features(self, state: ConversationState, weights: dict[int, float], space: ActionSpace) -> StateFeatures:
        if self._cache is not None and self._cache[0] is state:
            return self._cache[1]
        feats = featurize(self.g, self.emb, state, space, weights or None)
        self._cache = (state, feats)
        return feats

    def forward(self, feats: list[StateFeatures], heads: nn.Module | None = None):
        """Q over each state's action space: returns (Q (B, A), action mask (B, A))."""
        batch = collate(feats, self.table)
        state_rep, nodes = self.encoder(batch)
        src = batch.x if self.cfg.pretrained_action_reps else nodes
        acts = gather_nodes(src, batch.action_idx)
        return (heads or self.heads)(state_rep, acts, batch.action_mask), batch.action_mask

    def q_values(self, state, weights, space) -> dict:
        feats = self.features(state, weights, space)
        with torch.no_grad():
            q, _ = self.forward([feats])
        return dict(zip(feats.action_nodes, q[0, : len(feats.action_nodes)].tolist()))

    # -- acting --------------------------------------------------------------

    def act(self, state, weights, space, rng: np.random.Generator, epsilon: float = 0.0) -> Decision:
        if len(space) == 0:
            raise ValueError("empty action space")
        q = self.q_values(state, weights, space)
        item_q = {n.index: v for n, v in q.items() if n.kind is Kind.ITEM}
        if epsilon > 0 and rng.random() < epsilon:
            return random_decision(space, rng, self.env_cfg.rec_size, item_q)
        best = min(q, key=lambda n: (-q[n], n))
        if best.kind is Kind.ATTRIBUTE:
            return Decision(Ask(best.index), best)
        return Decision(recommend_by_score(space, item_q, self.env_cfg.rec_size), best)

    def infer_next_action(self, state, weights, space) -> Decision:
        return self.act(state, weights, space, self.rng, 0.0)

    def policy(self, epsilon: float | None = None) -> Callable:
        def decide(state, weights, space, rng):
            return self.act(state, weights, space, rng, self.epsilon if epsilon is None else epsilon)
        return decide

    # -- learning ------------------------------------------------------------

    def remember(self, t: Transition) -> Experience:
        feats = self.features(t.state, {}, t.space)
        action = t.space.nodes().index(t.decision.node)
        next_feats = None
        if not t.outcome.terminal:
            next_feats = self.features(t.outcome.next_state, t.next_weights, t.next_space)
        exp = Experience(t.state, feats, action, t.outcome.reward, t.outcome.next_state, next_feats,
                         t.outcome.terminal)
        self.buffer.add(exp)
        return exp

    def targets(self, exps: list[Experience]) -> torch.Tensor:
        rewards = torch.tensor([e.reward for e in exps], dtype=self.dtype)
        terminal = torch.tensor([e.terminal or e.next_feats is None for e in exps])
        live = [e.next_feats for e in exps if e.next_feats is not None]
        n_act = max([len(f.action_pos) for f in live], default=1) or 1
        q_on = torch.zeros(len(exps), n_act, dtype=self.dtype)
        q_tg = torch.zeros(len(exps), n_act, dtype=self.dtype)
        mask = torch.zeros(len(exps), n_act, dtype=torch.bool)
        if live:
            rows = torch.tensor([i for i, e in enumerate(exps) if e.next_feats is not None])
            with torch.no_grad():
                batch = collate(live, self.table)
                state_rep, nodes = self.encoder(batch)
                src = batch.x if self.cfg.pretrained_action_reps else nodes
                acts = gather_nodes(src, batch.action_idx)
                width = acts.shape[1]
                q_on[rows, :width] = self.heads(state_rep, acts, batch.action_mask)
                q_tg[rows, :width] = self.target_heads(state_rep, acts, batch.action_mask)
                mask[rows, :width] = batch.action_mask
        return double_q_targets(rewards, terminal, q_on, q_tg, self.cfg.gamma, mask)

    def td_loss(self, exps: list[Experience], targets: torch.Tensor, weights=None) -> tuple[torch.Tensor, torch.Tensor]:
        """Importance-weighted mean squared TD error; ``targets`` are treated as constants."""
        q, _ = self.forward([e.feats for e in exps])
        idx = torch.tensor([e.action for e in exps]).unsqueeze(1)
        q_sa = q.gather(1, idx).squeeze(1)
        delta = targets.detach() - q_sa
        w = torch.ones_like(delta) if weights is None else torch.as_tensor(weights, dtype=delta.dtype)
        return (w * delta * delta).mean(), delta.detach()

    def train_step(self) -> float | None:
        if len(self.buffer) < self.cfg.batch_size:
            return None
        idx, exps, w = self.buffer.sample(self.cfg.batch_size, self.rng, self.beta)
        y = self.targets(exps)
        loss, delta = self.td_loss(exps, y, w)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.buffer.update_errors(idx, delta.abs().tolist())
        self.last_loss = float(loss.detach())
        return self.last_loss

    def soft_update(self) -> None:
        soft_update(self.heads, self.target_heads, self.cfg.tau)

    def learn_hook(self, losses: list[float]) -> Callable[[Transition], None]:
        def hook(t: Transition) -> None:
            self.remember(t)
            loss = self.train_step()
            if loss is not None:
                losses.append(loss)
            self.soft_update()
        return hook

    # -- persistence ---------------------------------------------------------

    def tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.emb.tensors())
        for prefix, module in (("gcn.", self.encoder.gcn), ("tf.", self.encoder.tf),
                               ("head.", self.heads), ("target.", self.target_heads)):
            for name, p in module.named_parameters():
                out[prefix + name] = p.detach().to(torch.float64).numpy().copy()
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        from .checkpoint import CheckpointError

        for prefix, module in (("gcn.", self.encoder.gcn), ("tf.", self.encoder.tf),
                               ("head.", self.heads), ("target.", self.target_heads)):
            for name, p in module.named_parameters():
                key = prefix + name
                if key not in tensors:
                    raise CheckpointError(f"checkpoint is missing tensor {key!r}")
                value = torch.as_tensor(tensors[key])
                if tuple(value.shape) != tuple(p.shape):
                    raise CheckpointError(f"tensor {key!r} has shape {tuple(value.shape)}, expected {tuple(p.shape)}")
                with torch.no_grad():
                    p.copy_(value.to(p.dtype))

    def metadata(self) -> dict:
        return {
            "episode": self.episode,
            "epsilon": self.epsilon,
            "beta": self.beta,
            "seed": self.seed,
            "buffer": {"size": len(self.buffer), "capacity": self.buffer.capacity},
            "agent_config": asdict(self.cfg),
        }


@dataclass
class TrainLogRow:
    episode: int
    total_reward: float
    epsilon: float
    loss: float | None
    success: bool
    length: int
    sr_moving_avg: float

    def to_json(self) -> dict:
        return asdict(self)


def train(
    agent: Agent,
    interactions: InteractionSet,
    episodes: int,
    seed: int,
    on_episode: Callable[[TrainLogRow, EpisodeRecord], None] | None = None,
    window: int = 100,
) -> list[TrainLogRow]:
    """Online training against simulated users drawn from ``interactions``."""
    g, emb = agent.g, agent.emb
    if not interactions.pairs:
        raise ValueError("no interaction pairs to simulate sessions from")
    stream = session_stream(g, interactions, seed=seed, cycle=True)
    recent: deque[bool] = deque(maxlen=window)
    rows = []
    start = agent.episode
    for ep in range(start, start + episodes):
        sim = next(stream)
        rng = np.random.default_rng([seed, 2, ep])
        losses: list[float] = []
        rec = run_episode(agent, sim, rng, train=True, session_id=ep, losses=losses)
        agent.episode = ep + 1
        recent.append(rec.success)
        row = TrainLogRow(
            episode=ep,
            total_reward=rec.total_reward,
            epsilon=agent.epsilon,
            loss=float(np.mean(losses)) if losses else None,
            success=rec.success,
            length=rec.length,
            sr_moving_avg=float(np.mean(recent)),
        )
        rows.append(row)
        agent.epsilon = max(agent.cfg.eps_min, agent.epsilon * agent.cfg.eps_decay)
        frac = min(1.0, (ep + 1 - start) / max(episodes, 1))
        agent.beta = agent.cfg.beta_start + frac * (agent.cfg.beta_end - agent.cfg.beta_start)
        if on_episode is not None:
            on_episode(row, rec)
    return rows


def run_episode(agent: Agent, sim, rng: np.random.Generator, train: bool = False, session_id: int = 0,
                losses: list[float] | None = None) -> EpisodeRecord:
    """One session. Training explores with the current epsilon and learns every turn."""
    hook = agent.learn_hook([] if losses is None else losses) if train else None
    eps = agent.epsilon if train else 0.0
    return rollout(agent.g, agent.emb, sim, sim.user, sim.target, agent.policy(eps), agent.env_cfg, rng,
                   session_id=session_id, hook=hook)
