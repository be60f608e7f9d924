"""Text-to-image shift fusion layers with position-aware cross-attention.

Fused token layout is ``[vision (49 rows); text (15 rows)]`` so that the
vision block is rows 0..48 and the text block rows 49..63.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .encoders import EMBED_DIM, HEADS, N_FUSED, N_TEXT, N_VISION, uniform_init_

DROPOUT = 0.1


class GlobalSummary(nn.Module):
    """Per-token MLP m -> m -> 2m -> m/h producing the key/value source for every head."""

    def __init__(self, dim: int = EMBED_DIM, heads: int = HEADS, dropout: float = DROPOUT):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(dim, 2 * dim),
            nn.Dropout(dropout),
            nn.Linear(2 * dim, dim // heads),
        )
        uniform_init_(self)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return self.net(fused)


class PaCa(nn.Module):
    """Position-aware cross-attention over a (…, 64, m) fused token matrix.

    Each of the ``h`` channel slices (64 x m/h) queries the shared global
    summary; queries and keys both carry the learned position embedding.
    Projections are per head.
    """

    def __init__(self, dim: int = EMBED_DIM, heads: int = HEADS, n_tokens: int = N_FUSED, dropout: float = DROPOUT):
        super().__init__()
        if dim % heads:
            raise ValueError(f"heads ({heads}) must divide dim ({dim})")
        self.dim, self.heads, self.head_dim, self.n_tokens = dim, heads, dim // heads, n_tokens
        d = self.head_dim
        self.summary = GlobalSummary(dim, heads, dropout)
        bound = 1.0 / math.sqrt(d)
        self.pos_embed = nn.Parameter(torch.empty(n_tokens, d).uniform_(-bound, bound))
        self.w_q = nn.Parameter(torch.empty(heads, d, d).uniform_(-bound, bound))
        self.w_k = nn.Parameter(torch.empty(heads, d, d).uniform_(-bound, bound))
        self.w_v = nn.Parameter(torch.empty(heads, d, d).uniform_(-bound, bound))
        self.b_q = nn.Parameter(torch.empty(heads, d).uniform_(-bound, bound))
        self.b_k = nn.Parameter(torch.empty(heads, d).uniform_(-bound, bound))
        self.b_v = nn.Parameter(torch.empty(heads, d).uniform_(-bound, bound))

    def forward(self, fused: torch.Tensor, return_weights: bool = False):
        if fused.shape[-2:] != (self.n_tokens, self.dim):
            raise ValueError(f"expected (..., {self.n_tokens}, {self.dim}), got {tuple(fused.shape)}")
        if not torch.isfinite(fused).all():
            raise ValueError("non-finite input to PaCa")
        *lead, n, _ = fused.shape
        local = fused.reshape(*lead, n, self.heads, self.head_dim).transpose(-3, -2)  # (…, h, 64, d)
        summary = self.summary(fused).unsqueeze(-3)  # (…, 1, 64, d)
        pe = self.pos_embed
        q = (local + pe) @ self.w_q + self.b_q.unsqueeze(-2)
        k = (summary + pe) @ self.w_k + self.b_k.unsqueeze(-2)
        v = summary @ self.w_v + self.b_v.unsqueeze(-2)
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = (w @ v).transpose(-3, -2).reshape(*lead, n, self.dim)
        return (out, w) if return_weights else out


def split_fused(fused: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(…, 64, m) -> (vision (…, 49, m), text (…, 15, m))."""
    return fused[..., :N_VISION, :], fused[..., N_VISION:, :]


class T2ISFLayer(nn.Module):
    def __init__(self, dim: int = EMBED_DIM, heads: int = HEADS, dropout: float = DROPOUT):
        super().__init__()
        self.paca = PaCa(dim, heads, dropout=dropout)

    def forward(self, text: torch.Tensor, vision: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if text.shape[-2] != N_TEXT or vision.shape[-2] != N_VISION:
            raise ValueError(f"expected {N_TEXT} text and {N_VISION} vision tokens")
        if text.shape[:-2] != vision.shape[:-2]:
            text = text.expand(*vision.shape[:-2], *text.shape[-2:])
        vision_in = vision
        fused = torch.cat([vision_in, text], dim=-2)
        vision_out, text_out = split_fused(self.paca(fused))
        # cross-layer shift: re-inject this layer's vision input multiplicatively
        vision_out = vision_out * (1.0 + vision_in)
        return text_out, vision_out


@dataclass
class FusionState:
    layer_outputs: list[tuple[torch.Tensor, torch.Tensor]] = field(default_factory=list)

    @property
    def text(self) -> torch.Tensor:
        return self.layer_outputs[-1][0]

    @property
    def vision(self) -> torch.Tensor:
        return self.layer_outputs[-1][1]

    def fused(self) -> torch.Tensor:
        return torch.cat([self.vision, self.text], dim=-2)


class FusionStack(nn.Module):
    def __init__(self, layers: int = 3, dim: int = EMBED_DIM, heads: int = HEADS, dropout: float = DROPOUT):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one fusion layer")
        self.layers = nn.ModuleList(T2ISFLayer(dim, heads, dropout) for _ in range(layers))

    def forward(self, text0: torch.Tensor, vision0: torch.Tensor) -> FusionState:
        if text0.shape[:-2] != vision0.shape[:-2]:
            text0 = text0.expand(*vision0.shape[:-2], *text0.shape[-2:])
        state = FusionState([(text0, vision0)])
        text, vision = text0, vision0
        for layer in self.layers:
            text, vision = layer(text, vision)
            state.layer_outputs.append((text, vision))
        return state
