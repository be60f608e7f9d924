"""Training loop, checkpoints and evaluation for the full model on scenario directories."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
import torch

from . import rawio
from .annotations import AnnotationRecord
from .attention_decoder import downsample_map
from .clip_sampler import ClipSample, SamplerConfig, sample_corpus
from .encoders import ids_tensor
from .losses import EPSILON, anticipation_loss, attention_loss, joint_objective, total_loss
from .metrics import MetricReport, VideoPrediction, clip_saliency, group_by_attribute, per_clip_saliency, report
from .model import GROUPS, CAPModel, frames_to_pooled_pixels
from .synthdata import SyntheticScenario
from .text import PLACEHOLDER_TEXT, Vocabulary, pad_ids

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.cnpk"
LOG_NAME = "train_log.jsonl"
VOCAB_NAME = "vocab.txt"


@dataclass(frozen=True)
class TrainConfig:
    lr_self_attention: float = 1e-6
    lr_t2i: float = 1e-6
    lr_gru: float = 1e-5
    lr_decoder: float = 1e-4
    epochs: int = 10
    batch_size: int = 2
    batch_average: bool = False
    t2i_layers: int = 3
    lam: float = 5.0
    seed: int = 0
    placeholder_text_mode: bool = False
    optimizer: str = "sgd"
    dropout: float = 0.1
    loss_reduction: str = "sum"
    window_len: int = 150
    strategy: str = "mini"
    horizon_s: float = 5.0
    video_statistic: str = "max"
    init_gain: float = 1.0
    standardize_frames: bool = False

    def __post_init__(self):
        for name in ("lr_self_attention", "lr_t2i", "lr_gru", "lr_decoder"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.t2i_layers < 1:
            raise ValueError("t2i_layers must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.init_gain > 0:
            raise ValueError("init_gain must be positive")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown loss reduction {self.loss_reduction!r}")

    @property
    def learning_rates(self) -> dict[str, float]:
        return {g: getattr(self, f"lr_{g}") for g in GROUPS}

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.window_len, self.strategy, self.horizon_s, self.seed)  # type: ignore[arg-type]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class NonFiniteLossError(RuntimeError):
    def __init__(self, sample_id: str, breakdown: Mapping[str, float]):
        super().__init__(f"non-finite loss on sample {sample_id}: {dict(breakdown)}")
        self.sample_id = sample_id


def clip_id(clip: ClipSample) -> str:
    return f"{clip.video_id}@{clip.start}"


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


# data ------------------------------------------------------------------------

@dataclass
class ClipData:
    clip: ClipSample
    pixels: torch.Tensor  # pooled pixels (T, 7, 16, 7, 16, 3)
    attention: torch.Tensor  # (T, 64, 64), normalized
    ids: torch.Tensor  # (15,)


def clip_text(record: AnnotationRecord, placeholder: bool) -> str:
    return PLACEHOLDER_TEXT if placeholder else record.fact


def build_vocabulary(records: Sequence[AnnotationRecord]) -> Vocabulary:
    return Vocabulary.build(r.fact for r in records)


def load_clip(scenario: SyntheticScenario, clip: ClipSample, vocab: Vocabulary, placeholder: bool,
              dtype=torch.float32, standardized: bool = False) -> ClipData:
    if clip.stop > scenario.n_frames:
        raise ValueError(f"clip {clip_id(clip)} runs past the end of its video")
    sl = slice(clip.start, clip.stop)
    att = scenario.attention_gt[sl]
    if att.shape[-1] != 64:
        att = downsample_map(att.astype(np.float64))
    att = att.astype(np.float64)
    att = att / att.sum(axis=(-2, -1), keepdims=True)
    ids = ids_tensor(pad_ids(vocab.encode(clip_text(scenario.record, placeholder))))
    return ClipData(clip, frames_to_pooled_pixels(scenario.frames_u8[sl], dtype, standardized),
                    torch.as_tensor(att, dtype=dtype), ids)


def iter_clips(scenarios: Mapping[str, SyntheticScenario], clips: Sequence[ClipSample], vocab: Vocabulary,
               placeholder: bool, dtype=torch.float32, standardized: bool = False) -> Iterator[ClipData]:
    for c in clips:
        if c.video_id not in scenarios:
            raise KeyError(f"clip refers to unknown video {c.video_id}")
        yield load_clip(scenarios[c.video_id], c, vocab, placeholder, dtype, standardized)


# checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    model: CAPModel
    config: TrainConfig
    vocab: Vocabulary
    epoch: int
    rng_state: bytes
    optimizer_state: dict[str, np.ndarray]


def _text_array(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def _array_text(a: np.ndarray) -> str:
    return a.astype(np.uint8).tobytes().decode("utf-8")


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in ckpt.model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    for name, b in ckpt.model.named_buffers():
        arrays[f"buffer/{name}"] = b.detach().cpu().numpy()
    for name, a in ckpt.optimizer_state.items():
        arrays[f"optim/{name}"] = a
    arrays["meta/config"] = _text_array(json.dumps(ckpt.config.to_dict(), sort_keys=True))
    arrays["meta/vocab"] = _text_array("\n".join(ckpt.vocab.itos))
    arrays["meta/epoch"] = np.array([ckpt.epoch], dtype=np.int64)
    arrays["meta/rng_state"] = np.frombuffer(ckpt.rng_state, dtype=np.uint8)
    rawio.save_bundle(path, arrays)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    arrays = rawio.load_bundle(path)
    config = TrainConfig.from_dict(json.loads(_array_text(arrays["meta/config"])))
    vocab = Vocabulary(_array_text(arrays["meta/vocab"]).split("\n"))
    model = CAPModel(len(vocab), t2i_layers=config.t2i_layers, dropout=config.dropout, init_gain=config.init_gain)
    state = {}
    for key, a in arrays.items():
        kind, _, name = key.partition("/")
        if kind in ("param", "buffer"):
            state[name] = torch.from_numpy(np.array(a))
    model.load_state_dict(state, strict=True)
    optim = {k.partition("/")[2]: v for k, v in arrays.items() if k.startswith("optim/")}
    return Checkpoint(model, config, vocab, int(arrays["meta/epoch"][0]), arrays["meta/rng_state"].tobytes(), optim)


# optimization ----------------------------------------------------------------

class GroupOptimizer:
    """One optimizer over the four learning-rate groups; state exportable as named arrays."""

    def __init__(self, model: CAPModel, config: TrainConfig):
        self.groups = model.param_groups()
        self.names = {id(p): n for g in self.groups.values() for n, p in g}
        rates = config.learning_rates
        param_groups = [{"params": [p for _, p in self.groups[g]], "lr": rates[g], "name": g} for g in GROUPS]
        if config.optimizer == "adam":
            self.opt: torch.optim.Optimizer = torch.optim.Adam(param_groups)
        else:
            self.opt = torch.optim.SGD(param_groups, lr=rates["decoder"])

    def zero_grad(self) -> None:
        self.opt.zero_grad(set_to_none=True)

    def step(self, scale: float = 1.0) -> None:
        if scale != 1.0:
            for group in self.opt.param_groups:
                for p in group["params"]:
                    if p.grad is not None:
                        p.grad.mul_(scale)
        self.opt.step()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for p, st in self.opt.state.items():
            for key, v in st.items():
                out[f"{self.names[id(p)]}/{key}"] = torch.as_tensor(v).detach().cpu().numpy()
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        by_name = {n: p for g in self.groups.values() for n, p in g}
        for key, a in arrays.items():
            name, _, slot = key.rpartition("/")
            self.opt.state[by_name[name]][slot] = torch.from_numpy(np.array(a))


def clip_losses(model: CAPModel, data: ClipData, config: TrainConfig):
    out = model.forward_clip(None, data.ids, pooled_pixels=data.pixels)
    L_d = attention_loss(data.attention, out.maps, reduction=config.loss_reduction)
    c = data.clip
    L_a = anticipation_loss(out.p_hat, c.is_positive, c.t_ai_local, c.fps)
    return L_d, L_a, out


def train(
    scenarios: Sequence[SyntheticScenario],
    config: TrainConfig,
    out_dir: str | os.PathLike,
    resume: str | os.PathLike | None = None,
    stop_after_epoch: int | None = None,
    clips: Sequence[ClipSample] | None = None,
) -> Checkpoint:
    """Sample-level training; writes the log, per-epoch checkpoints and the vocabulary to ``out_dir``.

    ``stop_after_epoch`` ends the run early (the checkpoint still records the
    epoch reached, so a later ``resume`` continues to ``config.epochs``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {s.record.video_id: s for s in scenarios}
    if clips is None:
        clips = sample_corpus([s.record for s in scenarios], config.sampler)
    if not clips:
        raise ValueError("no training clips could be sampled")

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config != config:
            raise ValueError("resume config differs from the checkpoint config")
        model, vocab, start_epoch = ckpt.model, ckpt.vocab, ckpt.epoch
        set_determinism(config.seed)
        torch.set_rng_state(torch.from_numpy(np.frombuffer(ckpt.rng_state, dtype=np.uint8).copy()))
        opt = GroupOptimizer(model, config)
        opt.load_state_arrays(ckpt.optimizer_state)
        log_mode = "a"
    else:
        set_determinism(config.seed)
        vocab = build_vocabulary([s.record for s in scenarios])
        model = CAPModel(len(vocab), t2i_layers=config.t2i_layers, dropout=config.dropout, init_gain=config.init_gain)
        opt = GroupOptimizer(model, config)
        start_epoch = 0
        log_mode = "w"
    vocab.save(out / VOCAB_NAME)

    last = config.epochs if stop_after_epoch is None else min(config.epochs, stop_after_epoch)
    step = start_epoch * len(clips)
    batch = config.batch_size if config.batch_average else 1
    with open(out / LOG_NAME, log_mode, encoding="utf-8") as log_fh:
        for epoch in range(start_epoch, last):
            model.train()
            order = np.random.default_rng([config.seed, epoch]).permutation(len(clips))
            epoch_clips = [clips[i] for i in order]
            pending = 0
            opt.zero_grad()
            for data in iter_clips(by_id, epoch_clips, vocab, config.placeholder_text_mode,
                                   standardized=config.standardize_frames):
                L_d, L_a, _ = clip_losses(model, data, config)
                d, a = float(L_d.detach()), float(L_a.detach())
                if not (math.isfinite(d) and math.isfinite(a)):
                    raise NonFiniteLossError(clip_id(data.clip), {"L_d": d, "L_a": a})
                joint_objective(L_d, L_a, config.lam).backward()
                pending += 1
                step += 1
                entry = {"epoch": epoch + 1, "step": step, "sample": clip_id(data.clip),
                         "label": data.clip.label, **total_loss(d, a, config.lam, EPSILON, data.clip.fps).to_dict()}
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                if pending == batch:
                    opt.step(1.0 / pending)
                    opt.zero_grad()
                    pending = 0
            if pending:
                opt.step(1.0 / pending)
                opt.zero_grad()
            log_fh.flush()
            ckpt = Checkpoint(model, config, vocab, epoch + 1, torch.get_rng_state().numpy().tobytes(),
                              opt.state_arrays())
            save_checkpoint(out / CHECKPOINT_NAME, ckpt)
            log.info("epoch %d done", epoch + 1)
    if last <= start_epoch:
        ckpt = Checkpoint(model, config, vocab, start_epoch, torch.get_rng_state().numpy().tobytes(),
                          opt.state_arrays())
        save_checkpoint(out / CHECKPOINT_NAME, ckpt)
    return ckpt


def read_log(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# evaluation ------------------------------------------------------------------

@dataclass
class Evaluation:
    overall: MetricReport
    groups: list[MetricReport]
    predictions: list[VideoPrediction]
    maps: list[np.ndarray]
    attention: list[np.ndarray]


@torch.no_grad()
def predict(model: CAPModel, scenarios: Sequence[SyntheticScenario], vocab: Vocabulary, sampler: SamplerConfig,
            placeholder: bool = False, clips: Sequence[ClipSample] | None = None, standardized: bool = False):
    by_id = {s.record.video_id: s for s in scenarios}
    if clips is None:
        clips = sample_corpus([s.record for s in scenarios], sampler)
    model.eval()
    preds, maps, gts = [], [], []
    for data in iter_clips(by_id, clips, vocab, placeholder, standardized=standardized):
        out = model.forward_clip(None, data.ids, pooled_pixels=data.pixels)
        c = data.clip
        preds.append(VideoPrediction(clip_id(c), c.is_positive, out.p_hat.double().numpy(), c.t_ai_local, c.fps))
        maps.append(out.maps.double().numpy())
        gts.append(data.attention.double().numpy())
    return clips, preds, maps, gts


def evaluate(
    model: CAPModel,
    scenarios: Sequence[SyntheticScenario],
    vocab: Vocabulary,
    config: TrainConfig,
    placeholder: bool | None = None,
    group_by: str | None = None,
    with_saliency: bool = True,
) -> Evaluation:
    """Forward-only metrics on the clips sampled from ``scenarios``."""
    placeholder = config.placeholder_text_mode if placeholder is None else placeholder
    clips, preds, maps, gts = predict(model, scenarios, vocab, config.sampler, placeholder,
                                      standardized=config.standardize_frames)
    sal = clip_saliency(gts, maps) if with_saliency and len(gts) > 1 else None
    overall = report(preds, sal, statistic=config.video_statistic)
    groups: list[MetricReport] = []
    if group_by:
        records = {clip_id(c): next(s.record for s in scenarios if s.record.video_id == c.video_id) for c in clips}
        per_video = None
        if with_saliency and len(gts) > 1:
            per_video = {p.video_id: row for p, (row, n) in zip(preds, per_clip_saliency(gts, maps)) if n}
        groups = group_by_attribute(preds, records, group_by, per_video)
    return Evaluation(overall, groups, preds, maps, gts)


def write_evaluation(ev: Evaluation, out_dir: str | os.PathLike, dump_maps: bool = False, n_curves: int = 4) -> None:
    """JSON and text reports, per-frame score dumps, optional map tensors and PNG plots."""
    from .metrics import dump_reports, format_reports

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = [ev.overall, *ev.groups]
    dump_reports(reports, out / "report.json")
    (out / "report.txt").write_text(format_reports(reports), encoding="utf-8")
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for p in ev.predictions:
            fh.write(json.dumps({"clip": p.video_id, "label": bool(p.label), "t_ai_local": p.t_ai_local,
                                 "fps": p.fps, "p_hat": [float(v) for v in p.p_hat]}) + "\n")
    if dump_maps:
        maps_dir = out / "maps"
        maps_dir.mkdir(exist_ok=True)
        for p, m in zip(ev.predictions, ev.maps):
            rawio.save_tensor(maps_dir / f"{p.video_id.replace('@', '_')}.cten", m.astype(np.float32))
    plot_evaluation(ev, out, n_curves)


def plot_evaluation(ev: Evaluation, out: Path, n_curves: int = 4) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import video_score

    scores = np.array([video_score(p.p_hat) for p in ev.predictions])
    labels = np.array([p.label for p in ev.predictions], dtype=bool)
    if labels.any():
        order = np.argsort(-scores, kind="stable")
        tp = np.cumsum(labels[order])
        precision = tp / np.arange(1, len(order) + 1)
        recall = tp / labels.sum()
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.step(recall, precision, where="post")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_title(f"AP = {ev.overall.AP:.3f}")
        fig.tight_layout()
        fig.savefig(out / "pr_curve.png", dpi=100)
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    shown = [p for p in ev.predictions if p.label][: n_curves // 2 or 1] + [p for p in ev.predictions if not p.label][: n_curves // 2]
    for p in shown:
        t = np.arange(len(p.p_hat)) / p.fps
        line, = ax.plot(t, p.p_hat, label=("pos " if p.label else "neg ") + p.video_id)
        if p.t_ai_local is not None:
            ax.axvline(p.t_ai_local / p.fps, color=line.get_color(), linestyle=":")
    ax.axhline(0.5, color="grey", linewidth=0.8)
    ax.set_xlabel("time in clip (s)")
    ax.set_ylabel("accident score")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out / "scores.png", dpi=100)
    plt.close(fig)


def reset_decoder(model: CAPModel, seed: int) -> CAPModel:
    """Copy of ``model`` with a freshly initialized decoder (the decoder-ablated control)."""
    import copy

    from .attention_decoder import AttentionDecoder

    ablated = copy.deepcopy(model)
    torch.manual_seed(seed)
    ablated.decoder = AttentionDecoder()
    ablated.eval()
    return ablated


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
