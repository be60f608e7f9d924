"""Driver-attention map reconstruction from the semantic context.

Shape pipeline per frame::

    (64, 512) --self-attention--> (64, 512) --row-major--> 8x8x512
    --dconv 3x3, 64--> 8x8x64 --BN, relu--> --upsample x4--> 32x32x64
    --dconv 3x3, 16--> 32x32x16 --relu--> --dconv 5x5, 1, stride 2--> 64x64 --relu-->

then a 3x3 Gaussian (sigma 1.5) smoothing.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .context_head import CONTEXT_DIM
from .encoders import HEADS, MultiHeadSelfAttention, uniform_init_

MAP_SIZE = 64
GRID = 8
SIGMA = 1.5


def gaussian_kernel(size: int = 3, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def gaussian_smooth(maps: torch.Tensor, sigma: float = SIGMA) -> torch.Tensor:
    """3x3 Gaussian filter over the last two dims.

    The one-pixel border is mirrored including the edge pixel (half-sample
    symmetric), which for a one-pixel pad equals edge replication; with this
    border the filter preserves total mass exactly.
    """
    lead = maps.shape[:-2]
    x = maps.reshape(-1, 1, *maps.shape[-2:])
    k = torch.as_tensor(gaussian_kernel(3, sigma), dtype=maps.dtype, device=maps.device)
    x = F.pad(x, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(x, k.view(1, 1, 3, 3)).reshape(*lead, *maps.shape[-2:])


def normalize_map(maps: torch.Tensor) -> torch.Tensor:
    """Scale each map to sum 1; an all-zero map becomes uniform."""
    if (maps < 0).any():
        raise ValueError("attention maps must be non-negative")
    total = maps.sum(dim=(-2, -1), keepdim=True)
    uniform = torch.full_like(maps, 1.0 / (maps.shape[-1] * maps.shape[-2]))
    safe = torch.where(total > 0, total, torch.ones_like(total))
    return torch.where(total > 0, maps / safe, uniform)


class AttentionDecoder(nn.Module):
    def __init__(self, context_dim: int = CONTEXT_DIM, heads: int = HEADS):
        super().__init__()
        self.attn = MultiHeadSelfAttention(context_dim, heads)
        self.dconv1 = nn.ConvTranspose2d(context_dim, 64, 3, padding=1)
        self.bn = nn.BatchNorm2d(64)
        self.dconv2 = nn.ConvTranspose2d(64, 16, 3, padding=1)
        self.dconv3 = nn.ConvTranspose2d(16, 1, 5, stride=2, padding=2, output_padding=1)
        uniform_init_(self.dconv1)
        uniform_init_(self.dconv2)
        uniform_init_(self.dconv3)

    def raw(self, context: torch.Tensor, trace: list | None = None) -> torch.Tensor:
        """(B, 64, 512) -> (B, 64, 64) unsmoothed, non-negative."""
        b = context.shape[0]
        s = self.attn(context)
        grid = s.reshape(b, GRID, GRID, -1).permute(0, 3, 1, 2)
        x = torch.relu(self.bn(self.dconv1(grid)))
        up = F.interpolate(x, scale_factor=4, mode="nearest")
        x2 = torch.relu(self.dconv2(up))
        out = torch.relu(self.dconv3(x2))
        if trace is not None:
            trace.extend(t.shape for t in (grid, x, up, x2, out))
        return out[:, 0]

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        """Smoothed, normalized attention maps (B, 64, 64)."""
        return normalize_map(gaussian_smooth(self.raw(context)))


def downsample_map(gt: np.ndarray, size: int = MAP_SIZE) -> np.ndarray:
    """Area-average a (…, H, W) map with H, W multiples of ``size`` and renormalize."""
    h, w = gt.shape[-2:]
    if h % size or w % size:
        raise ValueError(f"map {h}x{w} is not a multiple of {size}")
    fh, fw = h // size, w // size
    x = gt.reshape(*gt.shape[:-2], size, fh, size, fw).mean(axis=(-3, -1))
    s = x.sum(axis=(-2, -1), keepdims=True)
    return np.where(s > 0, x / np.where(s > 0, s, 1.0), 1.0 / (size * size))


def to_uint8_image(amap: np.ndarray) -> np.ndarray:
    """Max-scaled 8-bit grayscale rendering of one map."""
    m = float(amap.max())
    if m <= 0 or not math.isfinite(m):
        return np.zeros(amap.shape, dtype=np.uint8)
    return np.round(255.0 * amap / m).astype(np.uint8)
