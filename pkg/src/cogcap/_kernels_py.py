"""Vectorized numpy versions of the metric kernels (fallback when the extension is absent)."""

from __future__ import annotations

import numpy as np


def first_crossings(p_hat: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Index of the first frame with ``p_hat > thr`` for every threshold, -1 if never."""
    p = np.asarray(p_hat, dtype=np.float64)
    thr = np.asarray(thresholds, dtype=np.float64)
    if p.size == 0:
        return np.full(thr.shape, -1, dtype=np.int64)
    # running maximum is non-decreasing, so the first crossing is a sorted search
    run = np.maximum.accumulate(p)
    idx = np.searchsorted(run, thr, side="right")
    return np.where(idx < p.size, idx, -1).astype(np.int64)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean over positives of the precision among items scoring at least as high."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each tie block gives the counts at threshold >= score
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    block_end = np.repeat(last, np.diff(np.r_[-1, last]))
    tp = np.cumsum(y)[block_end]
    prec = tp / (block_end + 1.0)
    return float(prec[y].mean())


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    starts = np.r_[0, np.flatnonzero(xs[1:] != xs[:-1]) + 1]
    ends = np.r_[starts[1:], xs.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney U / (n_pos n_neg) with ties counted one half."""
    y = np.asarray(labels, dtype=bool)
    r = midranks(scores)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
