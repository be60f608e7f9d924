"""Graph convolution over fused tokens, node max-pooling, GRU memory and the accident head."""

from __future__ import annotations

import math

import torch
from torch import nn

from .encoders import EMBED_DIM, uniform_init_

CONTEXT_DIM = 512
HIDDEN_DIM = 256
FC_DIM = 64


def pairwise_distance(x: torch.Tensor) -> torch.Tensor:
    """Euclidean distances between rows of ``x`` (…, n, c); exactly zero on the diagonal."""
    norms = (x * x).sum(-1)
    sq = norms.unsqueeze(-1) + norms.unsqueeze(-2) - 2.0 * (x @ x.transpose(-1, -2))
    n = x.shape[-2]
    off = ~torch.eye(n, dtype=torch.bool, device=x.device)
    positive = off & (sq > 0)
    # sqrt is not differentiable at 0: route those entries through a dummy 1
    return torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def adjacency_kernel(tokens: torch.Tensor) -> torch.Tensor:
    """exp(-||x_i - x_j||): symmetric, unit diagonal, before normalization."""
    return torch.exp(-pairwise_distance(tokens))


def build_adjacency(tokens: torch.Tensor) -> torch.Tensor:
    a = adjacency_kernel(tokens)
    return a / a.sum(-1, keepdim=True)


def pool_max(context: torch.Tensor) -> torch.Tensor:
    """Column-wise maximum over the node dimension: (…, 64, K) -> (…, K)."""
    return context.max(dim=-2).values


class GCN(nn.Module):
    """One graph convolution ``relu(A X W)`` without bias."""

    def __init__(self, in_dim: int = EMBED_DIM, out_dim: int = CONTEXT_DIM):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim).uniform_(-bound, bound))

    def forward(self, tokens: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        if adjacency.shape[-1] != tokens.shape[-2] or adjacency.shape[-2] != tokens.shape[-2]:
            raise ValueError("adjacency must be (n, n) for n tokens")
        if tokens.shape[-1] != self.weight.shape[0]:
            raise ValueError(f"expected {self.weight.shape[0]} token channels")
        return torch.relu(adjacency @ tokens @ self.weight)


class GRUCell(nn.Module):
    """Gated recurrent unit.

    r = σ(W_ir s + b_ir + W_hr h + b_hr)
    z = σ(W_iz s + b_iz + W_hz h + b_hz)
    n = tanh(W_in s + b_in + r ⊙ (W_hn h + b_hn))
    h' = (1 - z) ⊙ n + z ⊙ h
    """

    def __init__(self, input_dim: int = CONTEXT_DIM, hidden_dim: int = HIDDEN_DIM):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.input_proj = nn.Linear(input_dim, 3 * hidden_dim)
        self.hidden_proj = nn.Linear(hidden_dim, 3 * hidden_dim)
        uniform_init_(self)

    def forward(self, s: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        gi = self.input_proj(s)
        gh = self.hidden_proj(h)
        i_r, i_z, i_n = gi.chunk(3, dim=-1)
        h_r, h_z, h_n = gh.chunk(3, dim=-1)
        r = torch.sigmoid(i_r + h_r)
        z = torch.sigmoid(i_z + h_z)
        n = torch.tanh(i_n + r * h_n)
        return (1.0 - z) * n + z * h

    def initial_state(self, *lead: int, dtype=None) -> torch.Tensor:
        return torch.zeros(*lead, self.hidden_dim, dtype=dtype or self.hidden_proj.weight.dtype)


class AccidentHead(nn.Module):
    """Two stacked fully connected layers and a two-way softmax; returns the accident probability."""

    def __init__(self, hidden_dim: int = HIDDEN_DIM, fc_dim: int = FC_DIM):
        super().__init__()
        self.fc1 = nn.Linear(hidden_dim, fc_dim)
        self.fc2 = nn.Linear(fc_dim, 2)
        uniform_init_(self)

    def logits(self, h: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.fc1(h))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(h), dim=-1)[..., 1]


class ContextHead(nn.Module):
    def __init__(self, dim: int = EMBED_DIM, context_dim: int = CONTEXT_DIM, hidden_dim: int = HIDDEN_DIM,
                 fc_dim: int = FC_DIM):
        super().__init__()
        self.gcn = GCN(dim, context_dim)
        self.gru = GRUCell(context_dim, hidden_dim)
        self.head = AccidentHead(hidden_dim, fc_dim)

    def context(self, fused: torch.Tensor) -> torch.Tensor:
        """Per-frame semantic context S_t: (T, 64, m) -> (T, 64, K)."""
        return self.gcn(fused, build_adjacency(fused))

    def scores(self, pooled: torch.Tensor, h0: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Run the recurrence over frames in order: (T, K) -> (p_hat (T,), hidden (T, H))."""
        h = self.gru.initial_state(dtype=pooled.dtype) if h0 is None else h0
        hidden = []
        for t in range(pooled.shape[0]):
            h = self.gru(pooled[t], h)
            hidden.append(h)
        hs = torch.stack(hidden)
        return self.head(hs), hs
