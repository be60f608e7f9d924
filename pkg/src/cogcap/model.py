"""The full network: encoders, fusion stack, context head and attention decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention_decoder import AttentionDecoder
from .context_head import ContextHead, pool_max
from .encoders import EMBED_DIM, HEADS, PATCH, TOKEN_GRID, Encoders
from .fusion import DROPOUT, FusionStack
from .synthdata import upsample_indices

GROUPS = ("self_attention", "t2i", "gru", "decoder")


@dataclass
class ClipOutput:
    p_hat: torch.Tensor  # (T,)
    maps: torch.Tensor | None  # (T, 64, 64), normalized
    context: torch.Tensor  # (T, 64, 512)
    fused: torch.Tensor  # (T, 64, m)


class CAPModel(nn.Module):
    def __init__(self, vocab_size: int, t2i_layers: int = 3, dim: int = EMBED_DIM, heads: int = HEADS,
                 dropout: float = DROPOUT, fc_dim: int = 64, init_gain: float = 1.0):
        super().__init__()
        self.encoders = Encoders(vocab_size, dim, heads)
        self.fusion = FusionStack(t2i_layers, dim, heads, dropout)
        self.context_head = ContextHead(dim, fc_dim=fc_dim)
        self.decoder = AttentionDecoder()
        if init_gain != 1.0:
            scale_init_(self, init_gain)

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        owners = {
            "self_attention": self.encoders,
            "t2i": self.fusion,
            "gru": self.context_head,
            "decoder": self.decoder,
        }
        groups = {g: [] for g in GROUPS}
        prefix = {"self_attention": "encoders.", "t2i": "fusion.", "gru": "context_head.", "decoder": "decoder."}
        for g, mod in owners.items():
            groups[g] = [(prefix[g] + n, p) for n, p in mod.named_parameters()]
        check_partition(self, groups)
        return groups

    def forward_clip(self, images: torch.Tensor, ids: torch.Tensor, with_maps: bool = True,
                     pooled_pixels: torch.Tensor | None = None) -> ClipOutput:
        """``images`` (T, 224, 224, 3), ``ids`` (15,) or (1, 15) -> per-frame scores and maps.

        ``pooled_pixels`` (from ``frames_to_pooled_pixels``) may replace ``images``.
        """
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        enc = self.encoders
        if pooled_pixels is not None:
            vision = enc.mhsa(enc.patch_embed.tokens_from_pooled_pixels(pooled_pixels))
            text = enc.mhsa(enc.embed_text(ids))
        else:
            vision, text = enc(images, ids)
        state = self.fusion(text, vision)
        fused = state.fused()
        context = self.context_head.context(fused)
        p_hat, _ = self.context_head.scores(pool_max(context))
        maps = self.decoder(context) if with_maps else None
        return ClipOutput(p_hat, maps, context, fused)


@torch.no_grad()
def scale_init_(model: nn.Module, gain: float) -> None:
    """Widen the init bound of every weight matrix and kernel by ``gain``.

    Biases, norm parameters and the token table keep their bounds. With
    ``gain = sqrt(3)`` a linear map preserves activation variance, which the
    plain 1/sqrt(fan_in) bound shrinks by sqrt(3) per layer.
    """
    for name, p in model.named_parameters():
        if p.dim() >= 2 and not name.endswith("table.weight"):
            p.mul_(gain)


def check_partition(model: nn.Module, groups: dict[str, list[tuple[str, nn.Parameter]]]) -> None:
    """Every parameter of ``model`` in exactly one group."""
    seen: dict[int, str] = {}
    for g, params in groups.items():
        for name, p in params:
            if id(p) in seen:
                raise AssertionError(f"parameter {name} in both {seen[id(p)]} and {g}")
            seen[id(p)] = g
    orphans = [n for n, p in model.named_parameters() if id(p) not in seen]
    if orphans:
        raise AssertionError(f"parameters without a learning-rate group: {orphans}")


_UP = upsample_indices()


def _pooling_matrix(src: int = 64) -> np.ndarray:
    """(112, src) matrix mapping a source axis to cell-averaged, nearest-upsampled pixel rows."""
    idx = upsample_indices(src)
    m = np.zeros((TOKEN_GRID * PATCH, src))
    for cell in range(TOKEN_GRID):
        for u in range(PATCH):
            for sub in range(2):
                m[cell * PATCH + u, idx[cell * 2 * PATCH + sub * PATCH + u]] += 0.5
    return m


_POOL = {}


def standardize(frames_u8: np.ndarray) -> np.ndarray:
    """Per-frame zero mean and unit variance over all pixels and channels.

    The std is floored at 1/sqrt(n) so a flat frame stays finite. Removes global
    brightness and contrast, which otherwise dominate the patch tokens.
    """
    x = np.asarray(frames_u8, dtype=np.float64) / 255.0
    axes = tuple(range(1, x.ndim))
    n = int(np.prod(x.shape[1:]))
    mu = x.mean(axis=axes, keepdims=True)
    sd = np.maximum(x.std(axis=axes, keepdims=True), 1.0 / math.sqrt(n))
    return (x - mu) / sd


def _as_float(frames_u8: np.ndarray, dtype, standardized: bool) -> torch.Tensor:
    if standardized:
        return torch.from_numpy(standardize(frames_u8)).to(dtype)
    return torch.from_numpy(np.ascontiguousarray(frames_u8)).to(dtype) / 255.0


def frames_to_pooled_pixels(frames_u8: np.ndarray, dtype=torch.float32, standardized: bool = False) -> torch.Tensor:
    """(T, 64, 64, 3) uint8 -> (T, 7, 16, 7, 16, 3), equal to pooling the upsampled 224x224 images."""
    src = frames_u8.shape[1]
    if src not in _POOL:
        _POOL[src] = torch.from_numpy(_pooling_matrix(src))
    m = _POOL[src].to(dtype)
    x = _as_float(frames_u8, dtype, standardized)
    out = torch.einsum("ps,tsqc,rq->tprc", m, x, m)
    t = x.shape[0]
    return out.reshape(t, TOKEN_GRID, PATCH, TOKEN_GRID, PATCH, 3)


def frames_to_images(frames_u8: np.ndarray, dtype=torch.float32, standardized: bool = False) -> torch.Tensor:
    """(T, 64, 64, 3) uint8 -> (T, 224, 224, 3) nearest-upsampled floats (in [0, 1] unless standardized)."""
    x = _as_float(frames_u8, dtype, standardized)
    return x[:, _UP][:, :, _UP]
