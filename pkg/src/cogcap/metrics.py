"""Video-level accident metrics (AP, AUC, TTA, mTTA) and saliency-map metrics.

The ranking and threshold-sweep kernels come from a compiled extension when
it is built; otherwise the numpy versions are used. Set ``COGCAP_PURE_PYTHON=1``
to force the fallback.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels_py

if os.environ.get("COGCAP_PURE_PYTHON", "") not in ("", "0"):
    _kernels = _kernels_py
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _kernels = _kernels_py

KERNEL_BACKEND = "compiled" if _kernels is not _kernels_py else "numpy"

THRESHOLDS = np.linspace(0.0, 1.0, 101)
TTA_THRESHOLD = 0.5
EPSILON = 1e-4
SALIENCY_KEYS = ("kldiv", "cc", "sim", "s_auc")


def _positive_series(p_hat, t_ai_local) -> np.ndarray:
    if t_ai_local is None:
        raise ValueError("TTA is defined for positive clips only")
    p = np.asarray(p_hat, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p_hat must be one-dimensional")
    return p


def tta(p_hat, t_ai_local: int | None, fps: float, threshold: float = TTA_THRESHOLD) -> float:
    """Seconds between the first frame scoring above ``threshold`` and t_ai; 0 on a miss."""
    p = _positive_series(p_hat, t_ai_local)
    t_a = int(_kernels.first_crossings(p, np.array([threshold], dtype=np.float64))[0])
    if t_a < 0:
        return 0.0
    return max(0, t_ai_local - t_a) / fps


def tta_curve(p_hat, t_ai_local: int | None, fps: float, thresholds=THRESHOLDS) -> np.ndarray:
    p = _positive_series(p_hat, t_ai_local)
    t_a = _kernels.first_crossings(p, np.asarray(thresholds, dtype=np.float64))
    return np.where(t_a < 0, 0.0, np.maximum(0, t_ai_local - t_a) / fps)


def mtta(p_hat, t_ai_local: int | None, fps: float, thresholds=THRESHOLDS) -> float:
    return float(tta_curve(p_hat, t_ai_local, fps, thresholds).mean())


def _scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and of equal length")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s, y


def average_precision(scores, labels) -> float:
    s, y = _scores_labels(scores, labels)
    if not y.any():
        raise ValueError("average precision needs at least one positive")
    return float(_kernels.average_precision(s, y))


def auc(scores, labels) -> float:
    s, y = _scores_labels(scores, labels)
    if y.all() or not y.any():
        raise ValueError("AUC needs at least one positive and one negative")
    return float(_kernels.auc(s, y))


def video_score(p_hat, statistic: str = "max") -> float:
    p = np.asarray(p_hat, dtype=np.float64)
    if statistic == "max":
        return float(p.max())
    if statistic == "mean":
        return float(p.mean())
    raise ValueError(f"unknown video statistic {statistic!r}")


# saliency ------------------------------------------------------------------

def fixations(gt_map: np.ndarray, fraction: float = 0.5) -> np.ndarray:
    """Pixel coordinates (k, 2) where the map reaches ``fraction`` of its peak."""
    gt = np.asarray(gt_map, dtype=np.float64)
    peak = gt.max()
    if peak <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.argwhere(gt >= fraction * peak)


def kldiv(gt: np.ndarray, pred: np.ndarray, epsilon: float = EPSILON) -> float:
    return float((gt * np.log(epsilon + gt / (epsilon + pred))).sum())


def cc(gt: np.ndarray, pred: np.ndarray) -> float:
    a = gt - gt.mean()
    b = pred - pred.mean()
    den = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    return float((a * b).sum() / den) if den > 0 else 0.0


def sim(gt: np.ndarray, pred: np.ndarray) -> float:
    return float(np.minimum(gt, pred).sum())


def shuffled_auc(pred: np.ndarray, fixation_points: np.ndarray, other_fixations: np.ndarray) -> float:
    """ROC area of predicted values at true fixations against values at other maps' fixations."""
    fx = np.asarray(fixation_points, dtype=np.int64).reshape(-1, 2)
    ox = np.asarray(other_fixations, dtype=np.int64).reshape(-1, 2)
    if len(fx) == 0:
        raise ValueError("s-AUC needs at least one fixation")
    if len(ox) == 0:
        raise ValueError("s-AUC needs fixations from other maps")
    pos = pred[fx[:, 0], fx[:, 1]]
    neg = pred[ox[:, 0], ox[:, 1]]
    values = np.concatenate([pos, neg])
    labels = np.r_[np.ones(len(pos), dtype=bool), np.zeros(len(neg), dtype=bool)]
    return float(_kernels.auc(values, labels))


def saliency_metrics(gt_map, pred_map, fixation_points, other_fixations, epsilon: float = EPSILON) -> dict[str, float]:
    gt = np.asarray(gt_map, dtype=np.float64)
    pred = np.asarray(pred_map, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch {gt.shape} vs {pred.shape}")
    return {
        "kldiv": kldiv(gt, pred, epsilon),
        "cc": cc(gt, pred),
        "sim": sim(gt, pred),
        "s_auc": shuffled_auc(pred, fixation_points, other_fixations),
    }


def per_clip_saliency(gts: Sequence[np.ndarray], preds: Sequence[np.ndarray],
                      n_others: int = 8) -> list[tuple[dict[str, float], int]]:
    """Per-clip mean saliency metrics and the number of frames that entered each mean.

    ``gts[i]`` and ``preds[i]`` are (T_i, H, W). For frame t of clip i the
    shuffled negatives are the fixations of frame t in the next ``n_others``
    clips (cyclically), so the result is deterministic.
    """
    if len(gts) != len(preds) or not gts:
        raise ValueError("need matching, non-empty map sequences")
    if len(gts) < 2:
        raise ValueError("s-AUC needs maps from at least two clips")
    fix = [[fixations(g) for g in clip] for clip in gts]
    k = min(n_others, len(gts) - 1)
    out = []
    for i, (g_clip, p_clip) in enumerate(zip(gts, preds)):
        sums = dict.fromkeys(SALIENCY_KEYS, 0.0)
        count = 0
        for t in range(len(g_clip)):
            others = []
            for j in range(1, k + 1):
                f = fix[(i + j) % len(gts)]
                others.append(f[min(t, len(f) - 1)])
            other = np.concatenate(others)
            if len(fix[i][t]) == 0 or len(other) == 0:
                continue
            m = saliency_metrics(g_clip[t], p_clip[t], fix[i][t], other)
            for key in SALIENCY_KEYS:
                sums[key] += m[key]
            count += 1
        out.append(({key: sums[key] / count for key in SALIENCY_KEYS} if count else {}, count))
    return out


def clip_saliency(gts: Sequence[np.ndarray], preds: Sequence[np.ndarray], n_others: int = 8) -> dict[str, float]:
    """Frame-weighted mean of ``per_clip_saliency`` over all clips."""
    rows = per_clip_saliency(gts, preds, n_others)
    total = sum(n for _, n in rows)
    if total == 0:
        raise ValueError("no frame had fixations")
    return {key: sum(m[key] * n for m, n in rows if n) / total for key in SALIENCY_KEYS}


# reports -------------------------------------------------------------------

@dataclass
class MetricReport:
    AP: float | None
    AUC: float | None
    TTA_05: float | None
    mTTA: float | None
    saliency: dict[str, float] = field(default_factory=dict)
    group_key: tuple[str, str] | None = None
    n_videos: int = 0
    n_positive: int = 0

    def __post_init__(self):
        for name in ("AP", "AUC"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("TTA_05", "mTTA"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name}={v} is negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_key"] = list(self.group_key) if self.group_key else None
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        d = dict(d)
        if d.get("group_key") is not None:
            d["group_key"] = tuple(d["group_key"])
        return cls(**d)


@dataclass(frozen=True)
class VideoPrediction:
    video_id: str
    label: bool
    p_hat: np.ndarray
    t_ai_local: int | None
    fps: float

    def __post_init__(self):
        if self.label and self.t_ai_local is None:
            raise ValueError(f"positive clip {self.video_id} lacks t_ai_local")


def report(predictions: Sequence[VideoPrediction], saliency: dict[str, float] | None = None,
           group_key: tuple[str, str] | None = None, statistic: str = "max") -> MetricReport:
    """Metrics over a set of clip predictions; undefined entries are None."""
    scores = np.array([video_score(p.p_hat, statistic) for p in predictions])
    labels = np.array([p.label for p in predictions], dtype=bool)
    ap = average_precision(scores, labels) if labels.any() else None
    au = auc(scores, labels) if labels.any() and not labels.all() else None
    positives = [p for p in predictions if p.label]
    tta05 = float(np.mean([tta(p.p_hat, p.t_ai_local, p.fps) for p in positives])) if positives else None
    mt = float(np.mean([mtta(p.p_hat, p.t_ai_local, p.fps) for p in positives])) if positives else None
    return MetricReport(ap, au, tta05, mt, dict(saliency or {}), group_key, len(predictions), int(labels.sum()))


def group_by_attribute(predictions: Sequence[VideoPrediction], records: Mapping[str, object], attribute: str,
                       saliency_by_video: Mapping[str, dict[str, float]] | None = None) -> list[MetricReport]:
    """One report per value of ``attribute``; ``records`` maps video id to its annotation."""
    from .annotations import AnnotationRecord, ENUMS

    names = set(ENUMS) | {"accident_category"}
    if attribute not in names:
        raise ValueError(f"unknown attribute {attribute!r}; expected one of {sorted(names)}")
    groups: dict[str, list[VideoPrediction]] = {}
    for p in predictions:
        if p.video_id not in records:
            raise KeyError(f"no annotation for {p.video_id}")
        rec: AnnotationRecord = records[p.video_id]  # type: ignore[assignment]
        groups.setdefault(str(getattr(rec, attribute)), []).append(p)
    out = []
    for value in sorted(groups):
        members = groups[value]
        sal = None
        if saliency_by_video:
            rows = [saliency_by_video[p.video_id] for p in members if p.video_id in saliency_by_video]
            if rows:
                sal = {k: float(np.mean([r[k] for r in rows])) for k in SALIENCY_KEYS}
        out.append(report(members, sal, (attribute, value)))
    return out


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def format_reports(reports: Iterable[MetricReport]) -> str:
    """Plain-text table, one row per report."""
    head = ["group", "videos", "pos", "AP", "AUC", "TTA@0.5", "mTTA", *SALIENCY_KEYS]
    rows = [head]
    for r in reports:
        group = "all" if r.group_key is None else f"{r.group_key[0]}={r.group_key[1]}"
        rows.append([group, str(r.n_videos), str(r.n_positive), _fmt(r.AP), _fmt(r.AUC), _fmt(r.TTA_05),
                     _fmt(r.mTTA), *(_fmt(r.saliency.get(k)) for k in SALIENCY_KEYS)])
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows) + "\n"


def dump_reports(reports: Sequence[MetricReport], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")
