"""Fixed-length positive/negative clip sampling from annotated videos.

Two strategies:

* ``mini``: positives are the window ending at ``t_co`` (falling back to a
  seeded draw among windows that contain ``t_ai`` and end no later than
  ``t_co`` when the accident window is longer than a clip); negatives are
  seeded draws lying entirely inside ``[0, t_ai)``. Positives and negatives
  may overlap freely.
* ``full``: positives end at ``t_co`` and additionally require at least
  ``ceil(horizon_s * fps)`` frames before ``t_ai`` in the source video;
  negatives overlap the positive window by at most ``window_len // 2`` frames.

Every video draws from its own generator seeded by ``(seed, crc32(video_id))``,
so the output for one video never depends on which other videos are sampled.
"""

from __future__ import annotations

import json
import logging
import math
import os
import zlib
from dataclasses import asdict, dataclass
from typing import Iterable, Literal

import numpy as np

from .annotations import AnnotationRecord, InvalidRecordError, validate

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class ClipSample:
    video_id: str
    start: int
    length: int
    label: Literal["positive", "negative"]
    t_ai_local: int | None
    t_co_local: int | None
    fps: float

    @property
    def stop(self) -> int:
        return self.start + self.length

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SamplerConfig:
    window_len: int = 150
    strategy: Literal["mini", "full"] = "mini"
    horizon_s: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.window_len <= 0:
            raise ValueError("window_len must be positive")
        if self.horizon_s <= 0:
            raise ValueError("horizon_s must be positive")
        if self.strategy not in ("mini", "full"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


def video_rng(seed: int, video_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(video_id.encode("utf-8"))])


def _check(record: AnnotationRecord, config: SamplerConfig) -> bool:
    bad = validate(record)
    if bad:
        raise InvalidRecordError(record.video_id, bad)
    if record.n_frames < config.window_len:
        log.warning(
            "skipping %s: %d frames < window_len %d", record.video_id, record.n_frames, config.window_len
        )
        return False
    return True


def _clip(record: AnnotationRecord, start: int, length: int) -> ClipSample:
    stop = start + length
    contains = record.is_accident and start <= record.t_ai < stop
    if contains:
        t_co_local = record.t_co - start if record.t_co <= stop else None
        return ClipSample(record.video_id, start, length, POSITIVE, record.t_ai - start, t_co_local, record.fps)
    return ClipSample(record.video_id, start, length, NEGATIVE, None, None, record.fps)


def _negative_limit(record: AnnotationRecord) -> int:
    """Exclusive end of the accident-free prefix."""
    return record.t_ai if record.is_accident else record.n_frames


def _positive_start(record: AnnotationRecord, L: int, rng: np.random.Generator) -> int | None:
    if not record.is_accident or record.t_co < L or record.t_ai >= record.t_co:
        return None
    start = record.t_co - L
    if start <= record.t_ai:
        return start
    # accident window longer than a clip: any window holding t_ai and ending by t_co
    lo, hi = max(0, record.t_ai - L + 1), min(record.t_ai, record.t_co - L)
    return int(rng.integers(lo, hi + 1))


def sample_mini(record: AnnotationRecord, config: SamplerConfig) -> list[ClipSample]:
    if not _check(record, config):
        return []
    L = config.window_len
    rng = video_rng(config.seed, record.video_id)
    out = []
    pos = _positive_start(record, L, rng)
    if pos is not None:
        out.append(_clip(record, pos, L))
    limit = _negative_limit(record)
    if limit >= L:
        out.append(_clip(record, int(rng.integers(0, limit - L + 1)), L))
    return out


def sample_full(record: AnnotationRecord, config: SamplerConfig) -> list[ClipSample]:
    if not _check(record, config):
        return []
    L = config.window_len
    rng = video_rng(config.seed, record.video_id)
    out = []
    pos = None
    if record.is_accident and record.t_co >= L and record.t_co - L <= record.t_ai < record.t_co:
        if record.t_ai >= math.ceil(config.horizon_s * record.fps - 1e-9):
            pos = record.t_co - L
            out.append(_clip(record, pos, L))
    hi = _negative_limit(record) - L
    if pos is not None:
        # overlap with [pos, pos+L) is s + L - pos for s > pos - L
        hi = min(hi, pos - L + L // 2)
    if hi >= 0:
        out.append(_clip(record, int(rng.integers(0, hi + 1)), L))
    return out


def sample(record: AnnotationRecord, config: SamplerConfig) -> list[ClipSample]:
    fn = sample_mini if config.strategy == "mini" else sample_full
    return fn(record, config)


def sample_corpus(records: Iterable[AnnotationRecord], config: SamplerConfig) -> list[ClipSample]:
    out: list[ClipSample] = []
    for rec in records:
        out.extend(sample(rec, config))
    return out


def save_manifest(clips: Iterable[ClipSample], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in clips:
            fh.write(json.dumps(c.to_dict()) + "\n")


def load_manifest(path: str | os.PathLike) -> list[ClipSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(ClipSample(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return out
