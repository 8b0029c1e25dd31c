"""Graph-enhanced state encoder.

A GCN refines the pretrained node embeddings over the per-turn weighted
subgraph; the refined embeddings of the accepted attributes, in acceptance
order, go through a Transformer block and are mean-pooled into the state
vector. The Transformer block is::

    X* = MultiHead(X, X, X)
    X' = LayerNorm(FFN(X*) + X)

i.e. a single residual around attention+FFN and a single LayerNorm.

Forward passes are batched over padded subgraphs; gradients come from torch
autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .actions import ActionSpace
from .env import ConversationState, build_subgraph
from .graph import KnowledgeGraph, NodeId, attribute
from .pretrain import EmbeddingTable


def normalize_adjacency(adj):
    """Symmetric normalisation D^-1/2 A D^-1/2; zero-degree rows and columns stay zero.

    Accepts a numpy array or a (batched) torch tensor.
    """
    if isinstance(adj, torch.Tensor):
        deg = adj.sum(dim=-1)
        inv = torch.where(deg > 0, deg.clamp_min(1e-300).rsqrt(), torch.zeros_like(deg))
        return inv.unsqueeze(-1) * adj * inv.unsqueeze(-2)
    adj = np.asarray(adj, dtype=float)
    deg = adj.sum(axis=-1)
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[..., :, None] * adj * inv[..., None, :]


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class GCN(nn.Module):
    """``e_i <- ReLU(sum_j Lam_ij e_j W + e_i B)`` per layer (no biases)."""

    def __init__(self, dim: int = 64, num_layers: int = 2):
        super().__init__()
        self.weights = nn.ParameterList()
        self.self_weights = nn.ParameterList()
        for _ in range(num_layers):
            self.weights.append(nn.Parameter(torch.empty(dim, dim)))
            self.self_weights.append(nn.Parameter(torch.empty(dim, dim)))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for w in [*self.weights, *self.self_weights]:
            nn.init.xavier_uniform_(w)

    def forward(self, x: torch.Tensor, lam: torch.Tensor) -> torch.Tensor:
        for w, b in zip(self.weights, self.self_weights):
            x = torch.relu(lam @ (x @ w) + x @ b)
        return x


class TransformerBlock(nn.Module):
    def __init__(self, dim: int = 64, heads: int = 1, ffn_dim: int = 64):
        super().__init__()
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.ffn_in = nn.Linear(dim, ffn_dim)
        self.ffn_out = nn.Linear(ffn_dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.last_attention: torch.Tensor | None = None

    def attend(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, n, d = x.shape
        h = self.heads

        def split(t):
            return t.view(b, n, h, d // h).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        self.last_attention = attn.detach()
        ctx = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(ctx)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        mixed = self.attend(x, mask)
        return self.norm(self.ffn_out(torch.relu(self.ffn_in(mixed))) + x)


class SequenceEncoder(nn.Module):
    def __init__(self, dim: int = 64, num_layers: int = 1, heads: int = 1, ffn_dim: int = 64,
                 positional: bool = True, max_len: int = 64):
        super().__init__()
        self.layers = nn.ModuleList(TransformerBlock(dim, heads, ffn_dim) for _ in range(num_layers))
        self.positional = positional
        self.register_buffer("pe", torch.tensor(sinusoidal_encoding(max_len, dim), dtype=torch.get_default_dtype()),
                             persistent=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if self.positional:
            x = x + self.pe[: x.shape[1]].to(x.dtype)
        for layer in self.layers:
            x = layer(x, mask)
        return x


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(x.dtype).unsqueeze(-1)
    return (x * m).sum(dim=1) / m.sum(dim=1)


class StateEncoder(nn.Module):
    def __init__(self, dim: int = 64, gcn_layers: int = 2, tf_layers: int = 1, heads: int = 1,
                 ffn_dim: int = 64, positional: bool = True):
        super().__init__()
        self.gcn = GCN(dim, gcn_layers)
        self.tf = SequenceEncoder(dim, tf_layers, heads, ffn_dim, positional)

    def forward(self, batch: "GraphBatch") -> tuple[torch.Tensor, torch.Tensor]:
        """Return (pooled state vectors (B, d), refined node embeddings (B, N, d))."""
        nodes = self.gcn(batch.x, batch.lam)
        seq = torch.gather(nodes, 1, batch.seq_idx.unsqueeze(-1).expand(-1, -1, nodes.shape[-1]))
        out = self.tf(seq, batch.seq_mask)
        return masked_mean(out, batch.seq_mask), nodes


@dataclass
class StateFeatures:
    """Everything needed to encode one state and score its action space."""

    nodes: list[NodeId]
    rows: np.ndarray  # embedding-table rows of ``nodes``
    lam: np.ndarray
    seq_pos: np.ndarray  # positions of accepted attributes, acceptance order
    action_nodes: list[NodeId]
    action_pos: np.ndarray


def featurize(
    g: KnowledgeGraph,
    emb: EmbeddingTable,
    state: ConversationState,
    space: ActionSpace,
    weights: dict[int, float] | None = None,
) -> StateFeatures:
    sub = build_subgraph(g, emb, state, weights)
    action_nodes = space.nodes()
    return StateFeatures(
        nodes=sub.nodes,
        rows=np.array([emb.row(n) for n in sub.nodes], dtype=np.int64),
        lam=normalize_adjacency(sub.adjacency),
        seq_pos=np.array([sub.position[attribute(p)] for p in state.accepted], dtype=np.int64),
        action_nodes=action_nodes,
        action_pos=np.array([sub.position[n] for n in action_nodes], dtype=np.int64),
    )


@dataclass
class GraphBatch:
    x: torch.Tensor
    lam: torch.Tensor
    seq_idx: torch.Tensor
    seq_mask: torch.Tensor
    action_idx: torch.Tensor
    action_mask: torch.Tensor


def collate(feats: list[StateFeatures], table: torch.Tensor) -> GraphBatch:
    """Pad a list of states into one batch. ``table`` is the embedding matrix as a tensor."""
    b = len(feats)
    n = max(len(f.nodes) for f in feats)
    length = max(len(f.seq_pos) for f in feats)
    n_act = max(1, max(len(f.action_pos) for f in feats))
    rows = np.zeros((b, n), dtype=np.int64)
    node_mask = np.zeros((b, n), dtype=bool)
    lam = np.zeros((b, n, n))
    seq_idx = np.zeros((b, length), dtype=np.int64)
    seq_mask = np.zeros((b, length), dtype=bool)
    act_idx = np.zeros((b, n_act), dtype=np.int64)
    act_mask = np.zeros((b, n_act), dtype=bool)
    for i, f in enumerate(feats):
        k = len(f.nodes)
        rows[i, :k] = f.rows
        node_mask[i, :k] = True
        lam[i, :k, :k] = f.lam
        seq_idx[i, : len(f.seq_pos)] = f.seq_pos
        seq_mask[i, : len(f.seq_pos)] = True
        act_idx[i, : len(f.action_pos)] = f.action_pos
        act_mask[i, : len(f.action_pos)] = True
    dtype = table.dtype
    x = table[torch.from_numpy(rows)] * torch.from_numpy(node_mask).to(dtype).unsqueeze(-1)
    return GraphBatch(
        x=x,
        lam=torch.from_numpy(lam).to(dtype),
        seq_idx=torch.from_numpy(seq_idx),
        seq_mask=torch.from_numpy(seq_mask),
        action_idx=torch.from_numpy(act_idx),
        action_mask=torch.from_numpy(act_mask),
    )


def gather_nodes(nodes: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """Pick rows ``idx`` (B, A) out of ``nodes`` (B, N, d)."""
    return torch.gather(nodes, 1, idx.unsqueeze(-1).expand(-1, -1, nodes.shape[-1]))
