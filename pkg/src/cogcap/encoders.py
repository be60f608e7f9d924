"""Patch and text embeddings followed by a weight-shared multi-head self-attention."""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .text import MAX_TOKENS, UNK_ID, pad_ids

IMAGE_SIZE = 224
PATCH = 16
PATCH_CHANNELS = PATCH * PATCH * 3  # 768
PATCH_GRID = IMAGE_SIZE // PATCH  # 14
TOKEN_GRID = 7
N_VISION = TOKEN_GRID * TOKEN_GRID  # 49
N_TEXT = MAX_TOKENS  # 15
N_FUSED = N_VISION + N_TEXT  # 64
EMBED_DIM = 120
HEADS = 8


def fan_in(module: nn.Module) -> int:
    if isinstance(module, nn.Linear):
        return module.in_features
    if isinstance(module, nn.Conv2d):
        return module.in_channels * module.kernel_size[0] * module.kernel_size[1] // module.groups
    if isinstance(module, nn.ConvTranspose2d):
        return module.in_channels * module.kernel_size[0] * module.kernel_size[1]
    raise TypeError(type(module).__name__)


def uniform_init_(module: nn.Module) -> nn.Module:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every linear/conv weight and bias below ``module``."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            bound = 1.0 / math.sqrt(fan_in(m))
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.uniform_(m.bias, -bound, bound)
    return module


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention without positional terms or residual."""

    def __init__(self, dim: int = EMBED_DIM, heads: int = HEADS):
        super().__init__()
        if dim % heads:
            raise ValueError(f"heads ({heads}) must divide dim ({dim})")
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        uniform_init_(self)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.heads, self.head_dim).transpose(-3, -2)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {x.shape[-1]}")
        if not torch.isfinite(x).all():
            raise ValueError("non-finite input to self-attention")
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = (w @ v).transpose(-3, -2)
        out = self.o(out.reshape(*out.shape[:-2], self.dim))
        return (out, w) if return_weights else out


class PatchEmbed(nn.Module):
    """224x224x3 image -> 16x16/16 conv (14x14x768) -> 7x7 grid -> 1x1 conv to ``dim`` -> 49 tokens.

    The 14->7 reduction is a 2x2 mean over neighbouring patches. Both it and
    the patch conv are linear, so the forward pass averages the 2x2 pixel
    patches first and applies the patch weights once per 7x7 cell; the result
    equals pooling the full 14x14x768 grid (see ``patch_grid``).
    """

    def __init__(self, dim: int = EMBED_DIM):
        super().__init__()
        self.patch = nn.Conv2d(3, PATCH_CHANNELS, PATCH, stride=PATCH)
        self.down = nn.Conv2d(PATCH_CHANNELS, dim, 1)
        uniform_init_(self)

    @staticmethod
    def _check(images: torch.Tensor) -> None:
        if images.dim() != 4 or images.shape[-3:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValueError(f"expected (B, 224, 224, 3) images, got {tuple(images.shape)}")

    def patch_grid(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 224, 224, 3) -> (B, 768, 14, 14)."""
        self._check(images)
        return self.patch(images.permute(0, 3, 1, 2))

    def pooled_grid(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 224, 224, 3) -> (B, 768, 7, 7), the 2x2-averaged patch grid."""
        return self.embed_pooled_pixels(pool_patch_pixels(images))

    def embed_pooled_pixels(self, pixels: torch.Tensor) -> torch.Tensor:
        """(B, 7, 16, 7, 16, 3) cell-averaged pixels -> (B, 768, 7, 7)."""
        b = pixels.shape[0]
        x = pixels.permute(0, 1, 3, 5, 2, 4).reshape(b * N_VISION, PATCH_CHANNELS)  # (c, kh, kw) order
        w = self.patch.weight.reshape(PATCH_CHANNELS, PATCH_CHANNELS)
        out = torch.addmm(self.patch.bias, x, w.t())
        return out.reshape(b, TOKEN_GRID, TOKEN_GRID, PATCH_CHANNELS).permute(0, 3, 1, 2)

    def tokens_from_pooled_pixels(self, pixels: torch.Tensor) -> torch.Tensor:
        tokens = self.down(self.embed_pooled_pixels(pixels))  # (B, dim, 7, 7)
        return tokens.flatten(2).transpose(1, 2)  # row-major: token i*7+j

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.tokens_from_pooled_pixels(pool_patch_pixels(images))


def pool_patch_pixels(images: torch.Tensor) -> torch.Tensor:
    """(B, 224, 224, 3) -> (B, 7, 16, 7, 16, 3): each 16x16 patch averaged with its 2x2 cell-mates."""
    PatchEmbed._check(images)
    b = images.shape[0]
    # axes: cell row, sub-row, pixel row, cell col, sub-col, pixel col, rgb
    x = images.reshape(b, TOKEN_GRID, 2, PATCH, TOKEN_GRID, 2, PATCH, 3)
    return x.mean(dim=(2, 5))


class TextEncoder(Protocol):
    """Anything mapping (B, 15) token ids to (B, 15, dim) embeddings."""

    def __call__(self, ids: torch.Tensor) -> torch.Tensor: ...


class LookupTextEncoder(nn.Module):
    def __init__(self, vocab_size: int, dim: int = EMBED_DIM):
        super().__init__()
        self.vocab_size = vocab_size
        self.table = nn.Embedding(vocab_size, dim)
        bound = 1.0 / math.sqrt(dim)
        nn.init.uniform_(self.table.weight, -bound, bound)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        ids = torch.where((ids >= 0) & (ids < self.vocab_size), ids, torch.full_like(ids, UNK_ID))
        return self.table(ids)


def ids_tensor(ids: Sequence[int] | Sequence[Sequence[int]]) -> torch.Tensor:
    """Pad/truncate one id list (or a batch of them) to the fixed text length."""
    if len(ids) and isinstance(ids[0], (list, tuple)):
        return torch.tensor([pad_ids(list(row)) for row in ids], dtype=torch.long)
    return torch.tensor([pad_ids(list(ids))], dtype=torch.long)


class Encoders(nn.Module):
    """Vision and text embeddings sharing one self-attention block."""

    def __init__(self, vocab_size: int, dim: int = EMBED_DIM, heads: int = HEADS, text_encoder=None):
        super().__init__()
        self.patch_embed = PatchEmbed(dim)
        self.text_encoder = text_encoder if text_encoder is not None else LookupTextEncoder(vocab_size, dim)
        self.mhsa = MultiHeadSelfAttention(dim, heads)

    def embed_vision(self, images: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(images)

    def embed_text(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[-1] != N_TEXT:
            raise ValueError(f"expected {N_TEXT} token ids, got {ids.shape[-1]}")
        return self.text_encoder(ids)

    def forward(self, images: torch.Tensor, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (vision (B, 49, m), text (B', 15, m)) after the shared attention."""
        vision = self.mhsa(self.embed_vision(images))
        text = self.mhsa(self.embed_text(ids))
        return vision, text

