"""Synthetic collision-scenario videos with driver-attention ground truth.

A scene is a 64x64 dashcam-like frame: sky band, grey road, a fixed ego
marker at the bottom centre and one moving road agent drawn as a coloured
disk whose radius grows linearly with its distance below the horizon, so an
agent nearing the ego car looms larger. Accident videos move the agent on a straight line into the ego
marker; the collision frame ``t_co`` is the first frame whose rendered disk
overlaps the marker and ``t_ai`` is the first frame the disk centre is inside
the central corridor. Non-accident videos move the agent across the far part
of the road, never near the marker.

Attention maps are isotropic Gaussians on the agent, normalized to sum to 1.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rawio
from .annotations import LIGHT, OCCASION, ROAD_TYPE, WEATHER, AnnotationRecord, load_corpus, save_corpus

SIZE = 64
PATCH_SIZE = 224
FPS = 30.0

EGO_ROWS = (56, 64)  # [lo, hi)
EGO_COLS = (28, 36)
EGO_CENTER = (59.5, 31.5)  # (row, col) of the marker's centre
CORRIDOR_HALF_WIDTH = 14.0
HORIZON = 18
AGENT_RADIUS = 3.5  # radius at REFERENCE_ROW
REFERENCE_ROW = 28.0
LOOM_RATE = 0.2  # radius gained per row below the horizon
ATTENTION_SIGMA = 3.0

AGENTS = {
    # name: (rgb, accident category used for this agent's collisions)
    "pedestrian": ((0.85, 0.15, 0.15), 1),
    "car": ((0.95, 0.85, 0.10), 12),
    "cyclist": ((0.15, 0.75, 0.25), 5),
    "motorcyclist": ((0.80, 0.20, 0.80), 8),
    "truck": ((0.95, 0.55, 0.10), 18),
}
VERBS = ("is crossing the road", "is moving ahead", "stays on the motorway", "is turning", "drives in the lane")
EFFECTS = "the ego car hits a {agent}"
REASONS = ("a {agent} crosses the road suddenly", "a {agent} does not notice the ego car", "the ego car drives in speeding")
INTROSPECTIONS = (
    "the ego car should slow down when a {agent} is near",
    "the {agent} should not cross the road suddenly",
    "the ego car should keep a safe distance",
)


@dataclass
class SyntheticScenario:
    frames_u8: np.ndarray  # (n, 64, 64, 3) uint8
    attention_gt: np.ndarray  # (n, 64, 64) float32, each frame sums to 1
    record: AnnotationRecord
    agent_track: np.ndarray  # (n, 2) float64 (row, col) centres
    agent: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def frames(self) -> np.ndarray:
        """Frames as float32 images in [0, 1]."""
        return self.frames_u8.astype(np.float32) / 255.0

    @property
    def n_frames(self) -> int:
        return self.frames_u8.shape[0]


_EGO_PIXELS = np.array(
    [(r, c) for r in range(*EGO_ROWS) for c in range(*EGO_COLS)], dtype=np.float64
)


def agent_radius(row: float) -> float:
    """Perspective radius of the agent disk centred on ``row``."""
    return max(1.0, AGENT_RADIUS + LOOM_RATE * (row - REFERENCE_ROW))


def disk_overlaps_ego(center: np.ndarray, radius: float | None = None) -> bool:
    """True if the rendered agent disk at ``center`` (row, col) covers any ego-marker pixel."""
    if radius is None:
        radius = agent_radius(center[0])
    d2 = ((_EGO_PIXELS - np.asarray(center, dtype=np.float64)) ** 2).sum(axis=1)
    return bool((d2 <= radius**2).any())


def in_corridor(center: np.ndarray) -> bool:
    return abs(center[1] - EGO_CENTER[1]) <= CORRIDOR_HALF_WIDTH


def _background(rng: np.random.Generator, light: str, weather: str) -> np.ndarray:
    img = np.empty((SIZE, SIZE, 3), dtype=np.float64)
    horizon = HORIZON
    img[:horizon] = (0.55, 0.70, 0.90)
    img[horizon:] = (0.42, 0.42, 0.44)
    # lane edges converging to the horizon
    rows = np.arange(horizon, SIZE)
    spread = (rows - horizon) / (SIZE - horizon)
    for side in (-1, 1):
        cols = np.round(31.5 + side * (4 + 26 * spread)).astype(int)
        img[rows, np.clip(cols, 0, SIZE - 1)] = (0.9, 0.9, 0.9)
    img *= 0.95 + 0.1 * rng.random()
    if light == "nighttime":
        img *= 0.45
    if weather in ("foggy", "snowy"):
        img = 0.6 * img + 0.4 * 0.8
    elif weather == "rainy":
        img *= 0.85
    return img


def _gaussian_map(center: np.ndarray, sigma: float = ATTENTION_SIGMA) -> np.ndarray:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    g = np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2 * sigma**2))
    return g / g.sum()


def _render(bg: np.ndarray, track: np.ndarray, color, rng: np.random.Generator) -> np.ndarray:
    n = track.shape[0]
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    frames = np.empty((n, SIZE, SIZE, 3), dtype=np.float64)
    ego = np.zeros((SIZE, SIZE), dtype=bool)
    ego[EGO_ROWS[0] : EGO_ROWS[1], EGO_COLS[0] : EGO_COLS[1]] = True
    for t in range(n):
        img = bg.copy()
        img[ego] = (0.10, 0.20, 0.65)
        mask = (yy - track[t, 0]) ** 2 + (xx - track[t, 1]) ** 2 <= agent_radius(track[t, 0]) ** 2
        img[mask] = color
        img += rng.normal(0.0, 0.02, size=img.shape)
        frames[t] = img
    return np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)


def _accident_track(rng: np.random.Generator, n: int, min_t_co: int) -> tuple[np.ndarray, int, int]:
    """Straight approach into the marker; returns (track, t_ai, t_co)."""
    for _ in range(200):
        side = rng.choice((-1.0, 1.0))
        start = np.array([rng.uniform(20.0, 30.0), 31.5 + side * rng.uniform(24.0, 29.0)])
        target = np.array([EGO_CENTER[0] - 2.0, EGO_CENTER[1] + side * rng.uniform(0.0, 3.0)])
        t_arrive = int(rng.integers(n - 30, n - 4))
        steps = np.minimum(np.arange(n), t_arrive) / t_arrive
        track = start + steps[:, None] * (target - start)
        hits = [t for t in range(n) if disk_overlaps_ego(track[t])]
        inside = [t for t in range(n) if in_corridor(track[t])]
        if not hits or not inside:
            continue
        t_co, t_ai = hits[0], inside[0]
        if t_ai < t_co and t_co >= min_t_co:
            return track, t_ai, t_co
    raise RuntimeError("could not place an accident track")


def _safe_track(rng: np.random.Generator, n: int) -> np.ndarray:
    """Lateral motion across the far road; never reaches the marker."""
    row0 = rng.uniform(20.0, 30.0)
    row1 = row0 + rng.uniform(-3.0, 3.0)
    side = rng.choice((-1.0, 1.0))
    col0 = 31.5 + side * rng.uniform(20.0, 29.0)
    col1 = 31.5 - side * rng.uniform(0.0, 29.0)
    steps = np.arange(n) / (n - 1)
    track = np.stack([row0 + steps * (row1 - row0), col0 + steps * (col1 - col0)], axis=1)
    assert not any(disk_overlaps_ego(p) for p in track)
    return track


def generate_one(
    seed: int, index: int, accident: bool, n_frames_range=(220, 261), min_t_co: int = 150
) -> SyntheticScenario:
    rng = np.random.default_rng([seed, index, 7919])
    n = int(rng.integers(*n_frames_range))
    agent = str(rng.choice(sorted(AGENTS)))
    color, category = AGENTS[agent]
    weather = str(rng.choice(WEATHER, p=(0.7, 0.1, 0.1, 0.1)))
    light = str(rng.choice(LIGHT, p=(0.8, 0.2)))
    occasion = str(rng.choice(OCCASION))
    road_type = str(rng.choice(ROAD_TYPE))
    # fact text never depends on the label, so text alone cannot separate classes
    fact = f"a {agent} {rng.choice(VERBS)}"

    if accident:
        track, t_ai, t_co = _accident_track(rng, n, min_t_co)
        t_ae = min(n, t_co + int(rng.integers(10, 30)))
        effect = EFFECTS.format(agent=agent)
        reason = str(rng.choice(REASONS)).format(agent=agent)
        intro = str(rng.choice(INTROSPECTIONS)).format(agent=agent)
    else:
        track = _safe_track(rng, n)
        t_ai = t_co = t_ae = n
        effect = reason = intro = ""
        category = None

    record = AnnotationRecord(
        video_id=f"syn{seed:04d}_{index:05d}",
        n_frames=n,
        fps=FPS,
        t_ai=t_ai,
        t_co=t_co,
        t_ae=t_ae,
        fact=fact,
        effect=effect,
        reason=reason,
        introspection=intro,
        accident_category=category,
        weather=weather,
        light=light,
        occasion=occasion,
        road_type=road_type,
        is_accident=accident,
    )
    bg = _background(rng, light, weather)
    frames = _render(bg, track, color, rng)
    att = np.stack([_gaussian_map(p) for p in track]).astype(np.float32)
    att /= att.sum(axis=(1, 2), keepdims=True)
    return SyntheticScenario(frames, att, record, track, agent)


def generate(seed: int, n_videos: int, class_mix: float = 0.6, **kwargs) -> list[SyntheticScenario]:
    """``class_mix`` is the fraction of accident videos (rounded, then shuffled by seed)."""
    if n_videos < 1:
        raise ValueError("n_videos must be at least 1")
    if not 0.0 <= class_mix <= 1.0:
        raise ValueError("class_mix must lie in [0, 1]")
    n_acc = int(round(class_mix * n_videos))
    labels = np.zeros(n_videos, dtype=bool)
    labels[:n_acc] = True
    labels = np.random.default_rng([seed, 1]).permutation(labels)
    return [generate_one(seed, i, bool(labels[i]), **kwargs) for i in range(n_videos)]


def upsample_indices(src: int = SIZE, dst: int = PATCH_SIZE) -> np.ndarray:
    return (np.arange(dst) * src) // dst


def render_patchable(scenario: SyntheticScenario, t: int) -> np.ndarray:
    """Nearest-neighbour upsample of frame ``t`` to 224x224x3 float32."""
    if not 0 <= t < scenario.n_frames:
        raise IndexError(f"frame {t} outside [0, {scenario.n_frames})")
    idx = upsample_indices(scenario.frames_u8.shape[1])
    return scenario.frames_u8[t][np.ix_(idx, idx)].astype(np.float32) / 255.0


def save_scenarios(scenarios: list[SyntheticScenario], directory: str | os.PathLike) -> Path:
    """Write ``annotations.jsonl`` plus ``<video_id>.{frames,attention,track}.cten`` tensors."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_corpus([s.record for s in scenarios], d / "annotations.jsonl")
    agents = {}
    for s in scenarios:
        vid = s.record.video_id
        rawio.save_tensor(d / f"{vid}.frames.cten", s.frames_u8)
        rawio.save_tensor(d / f"{vid}.attention.cten", s.attention_gt.astype(np.float32))
        rawio.save_tensor(d / f"{vid}.track.cten", s.agent_track.astype(np.float64))
        agents[vid] = s.agent
    (d / "agents.json").write_text(json.dumps(agents, indent=0, sort_keys=True))
    return d


def load_scenarios(directory: str | os.PathLike) -> list[SyntheticScenario]:
    d = Path(directory)
    records = load_corpus(d / "annotations.jsonl")
    agents_path = d / "agents.json"
    agents = json.loads(agents_path.read_text()) if agents_path.exists() else {}
    out = []
    for rec in records:
        vid = rec.video_id
        frames = rawio.load_tensor(d / f"{vid}.frames.cten")
        att = rawio.load_tensor(d / f"{vid}.attention.cten")
        track = rawio.load_tensor(d / f"{vid}.track.cten")
        if not (frames.shape[0] == att.shape[0] == rec.n_frames):
            raise ValueError(f"{vid}: tensor lengths disagree with n_frames")
        out.append(SyntheticScenario(frames, att, rec, track, agents.get(vid, "")))
    return out
