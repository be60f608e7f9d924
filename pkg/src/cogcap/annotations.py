"""Accident-video annotation records: schema, validation, JSONL storage, statistics.

Frame indices are 0-based. A window ``[a, b)`` has ``b - a`` frames, so the
five frame ratios are plain differences of the three time stamps divided by
``n_frames``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable

import numpy as np

WEATHER = ("sunny", "rainy", "snowy", "foggy")
LIGHT = ("daytime", "nighttime")
OCCASION = ("highway", "urban", "rural", "mountain", "tunnel")
ROAD_TYPE = ("main_lane", "curve_road", "intersection", "t_road", "ramp")

# Spellings seen in published attribute tables, normalized on load.
ALIASES = {
    "weather": {"fogy": "foggy"},
    "light": {"dt": "daytime", "nt": "nighttime"},
    "road_type": {"m-lane": "main_lane", "cur-rd": "curve_road", "intsec": "intersection", "t-rd": "t_road"},
}

ENUMS = {"weather": WEATHER, "light": LIGHT, "occasion": OCCASION, "road_type": ROAD_TYPE}
TEXT_FIELDS = ("fact", "effect", "reason", "introspection")
N_CATEGORIES = 58


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    n_frames: int
    fps: float
    t_ai: int
    t_co: int
    t_ae: int
    fact: str
    effect: str
    reason: str
    introspection: str
    accident_category: int | None
    weather: str
    light: str
    occasion: str
    road_type: str
    is_accident: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


FIELD_NAMES = tuple(f.name for f in fields(AnnotationRecord))
REQUIRED_FIELDS = tuple(n for n in FIELD_NAMES if n != "is_accident")


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


@dataclass(frozen=True)
class FrameRatios:
    r_pre: float
    r_ai_co: float
    r_ai_ae: float
    r_co_ae: float
    r_post: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.r_pre, self.r_ai_co, self.r_ai_ae, self.r_co_ae, self.r_post)


class InvalidRecordError(ValueError):
    def __init__(self, record_id: Any, violations: list[Violation]):
        self.violations = violations
        joined = "; ".join(str(v) for v in violations)
        super().__init__(f"record {record_id!r} is invalid: {joined}")


class CorpusFormatError(ValueError):
    """Raised when a corpus file has malformed lines; ``errors`` maps line number to reason."""

    def __init__(self, path: Any, errors: list[tuple[int, str]]):
        self.errors = errors
        detail = "; ".join(f"line {n}: {msg}" for n, msg in errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        super().__init__(f"{path}: {len(errors)} malformed record(s): {detail}{more}")


def _is_int(x: Any) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _is_real(x: Any) -> bool:
    return (_is_int(x) or isinstance(x, (float, np.floating))) and math.isfinite(float(x))


def validate(record: Any) -> list[Violation]:
    """Check every schema rule on ``record``; never raises."""
    out: list[Violation] = []
    get = lambda name: getattr(record, name, None)  # noqa: E731

    if not isinstance(get("video_id"), str) or not get("video_id"):
        out.append(Violation("video_id", "non-empty string"))
    n = get("n_frames")
    n_ok = _is_int(n) and n > 0
    if not n_ok:
        out.append(Violation("n_frames", "positive integer"))
    fps = get("fps")
    if not (_is_real(fps) and float(fps) > 0):
        out.append(Violation("fps", "positive real"))

    stamps_ok = True
    for name in ("t_ai", "t_co", "t_ae"):
        v = get(name)
        if not _is_int(v):
            out.append(Violation(name, "integer frame index"))
            stamps_ok = False
    if stamps_ok:
        t_ai, t_co, t_ae = get("t_ai"), get("t_co"), get("t_ae")
        if t_ai < 0:
            out.append(Violation("t_ai", "0 ≤ t_ai"))
        if t_co < t_ai:
            out.append(Violation("t_co", "t_ai ≤ t_co"))
        if t_ae < t_co:
            out.append(Violation("t_ae", "t_co ≤ t_ae"))
        if n_ok and t_ae > n:
            out.append(Violation("t_ae", "t_ae ≤ n_frames"))

    is_accident = get("is_accident")
    if not isinstance(is_accident, bool):
        out.append(Violation("is_accident", "boolean"))
        is_accident = True
    for name in TEXT_FIELDS:
        v = get(name)
        if not isinstance(v, str):
            out.append(Violation(name, "string"))
        elif is_accident and not v.strip():
            out.append(Violation(name, "non-empty for accident videos"))

    cat = get("accident_category")
    if is_accident or cat is not None:
        if not (_is_int(cat) and 1 <= cat <= N_CATEGORIES):
            out.append(Violation("accident_category", f"integer in [1, {N_CATEGORIES}]"))

    for name, allowed in ENUMS.items():
        if get(name) not in allowed:
            out.append(Violation(name, "one of " + "|".join(allowed)))
    return out


def frame_ratios(record: AnnotationRecord) -> FrameRatios:
    violations = validate(record)
    if violations:
        raise InvalidRecordError(getattr(record, "video_id", None), violations)
    n = record.n_frames
    return FrameRatios(
        r_pre=record.t_ai / n,
        r_ai_co=(record.t_co - record.t_ai) / n,
        r_ai_ae=(record.t_ae - record.t_ai) / n,
        r_co_ae=(record.t_ae - record.t_co) / n,
        r_post=(n - record.t_ae) / n,
    )


RATIO_NAMES = ("r_pre", "r_ai_co", "r_ai_ae", "r_co_ae", "r_post")


def ratio_histogram(records: Iterable[AnnotationRecord], bins: int = 10) -> dict[str, list[int]]:
    """Per-ratio histogram counts over ``bins`` equal-width bins of [0, 1]."""
    ratios = np.array([frame_ratios(r).as_tuple() for r in records], dtype=float).reshape(-1, 5)
    edges = np.linspace(0.0, 1.0, bins + 1)
    return {
        name: np.histogram(ratios[:, i], bins=edges)[0].astype(int).tolist()
        for i, name in enumerate(RATIO_NAMES)
    }


def record_from_dict(data: Any) -> AnnotationRecord:
    """Structural parse of one JSON object. Raises ``ValueError`` on bad shape."""
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    unknown = sorted(set(data) - set(FIELD_NAMES))
    if unknown:
        raise ValueError(f"unknown key(s): {', '.join(unknown)}")
    missing = [k for k in REQUIRED_FIELDS if k not in data]
    if missing:
        raise ValueError(f"missing key(s): {', '.join(missing)}")
    values = dict(data)
    for name, table in ALIASES.items():
        v = values.get(name)
        if isinstance(v, str):
            values[name] = table.get(v.lower(), v.lower())
    for name in ("n_frames", "t_ai", "t_co", "t_ae"):
        if not _is_int(values[name]):
            raise ValueError(f"{name} must be an integer")
    if values["accident_category"] is not None and not _is_int(values["accident_category"]):
        raise ValueError("accident_category must be an integer or null")
    if not _is_real(values["fps"]):
        raise ValueError("fps must be a finite number")
    values["fps"] = float(values["fps"])
    for name in ("video_id",) + TEXT_FIELDS + tuple(ENUMS):
        if not isinstance(values[name], str):
            raise ValueError(f"{name} must be a string")
    if not isinstance(values.get("is_accident", True), bool):
        raise ValueError("is_accident must be a boolean")
    return AnnotationRecord(**values)


def load_corpus(path: str | os.PathLike, strict: bool = True) -> list[AnnotationRecord]:
    """Read a JSONL corpus. All malformed lines are collected and reported together.

    With ``strict`` the schema invariants are enforced too, so a partially valid
    file never yields a partial list.
    """
    records: list[AnnotationRecord] = []
    errors: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = record_from_dict(json.loads(line))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                errors.append((lineno, str(exc)))
                continue
            if strict:
                bad = validate(rec)
                if bad:
                    errors.append((lineno, "; ".join(map(str, bad))))
                    continue
            records.append(rec)
    if errors:
        raise CorpusFormatError(path, errors)
    return records


def save_corpus(records: Iterable[AnnotationRecord], path: str | os.PathLike) -> None:
    """Write records as JSONL; the target is replaced atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=False))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
