"""Attention-reconstruction, anticipation and combined training losses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

EPSILON = 1e-4
LAMBDA = 5.0
P_CLAMP = 1e-7
NORM_TOL = 1e-4


@dataclass(frozen=True)
class LossBreakdown:
    L_d: float
    L_a: float
    L_total: float
    lam: float = LAMBDA
    epsilon: float = EPSILON
    fps: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def kl_floor(n_pixels: int, epsilon: float = EPSILON) -> float:
    """Lower bound of the per-frame attention loss.

    Σ D log(ε + D/(ε+D̂)) ≥ Σ D log(D/(ε+D̂)) ≥ -log Σ (ε + D̂) = -log(1 + Nε) by Jensen.
    """
    return -math.log1p(n_pixels * epsilon)


def attention_loss(gt: torch.Tensor, pred: torch.Tensor, epsilon: float = EPSILON, reduction: str = "sum") -> torch.Tensor:
    """Σ_maps Σ_pixels D log(ε + D/(ε + D̂)) over any leading (sample, frame) dims."""
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch {tuple(gt.shape)} vs {tuple(pred.shape)}")
    for name, m in (("ground truth", gt), ("prediction", pred)):
        sums = m.detach().sum(dim=(-2, -1))
        if (m.detach() < 0).any() or not torch.allclose(sums, torch.ones_like(sums), atol=NORM_TOL):
            raise ValueError(f"{name} maps must be normalized distributions")
    per_map = (gt * torch.log(epsilon + gt / (epsilon + pred))).sum(dim=(-2, -1))
    if reduction == "sum":
        return per_map.sum()
    if reduction == "mean":
        return per_map.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def earliness_weights(n_frames: int, t_ai: float, fps: float, dtype=torch.float64) -> torch.Tensor:
    """exp(-max(0, (t_ai - t)/fps)) for t = 0..n_frames-1."""
    t = torch.arange(n_frames, dtype=dtype)
    return torch.exp(-torch.clamp((t_ai - t) / fps, min=0.0))


def anticipation_loss(p_hat: torch.Tensor, positive: bool, t_ai: int | None = None, fps: float = 30.0) -> torch.Tensor:
    """Exponentially weighted log-loss for positives, plain cross-entropy for negatives."""
    if not torch.isfinite(p_hat).all():
        raise ValueError("non-finite accident probabilities")
    p = p_hat.clamp(P_CLAMP, 1.0 - P_CLAMP)
    if not positive:
        return -torch.log1p(-p).sum()
    if t_ai is None:
        raise ValueError("positive clips need t_ai")
    w = earliness_weights(p.shape[-1], float(t_ai), fps, dtype=p.dtype)
    return -(w * torch.log(p)).sum()


def joint_objective(L_d, L_a, lam: float = LAMBDA):
    """L_d + λ·L_a on tensors (the quantity that is back-propagated)."""
    return L_d + lam * L_a


def total_loss(
    L_d: float, L_a: float, lam: float = LAMBDA, epsilon: float = EPSILON, fps: float | None = None
) -> LossBreakdown:
    L_d, L_a = float(L_d), float(L_a)
    if not (math.isfinite(L_d) and math.isfinite(L_a)):
        raise ValueError("loss components must be finite")
    return LossBreakdown(L_d, L_a, L_d + lam * L_a, lam, epsilon, fps)
