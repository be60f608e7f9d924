"""Command-line entry point: ``cap generate|sample|train|eval|gradcheck|validate``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("cogcap")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    from .training import TrainConfig

    p.add_argument("--config", type=Path, help="JSON file with training configuration")
    group = p.add_argument_group("config overrides")
    for f in dataclasses.fields(TrainConfig):
        kind = {"bool": _bool, "int": int, "float": float}.get(str(f.type), str)
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", type=kind, default=None,
                           metavar=str(f.type).upper())


def _config(args: argparse.Namespace):
    from .training import TrainConfig

    base = TrainConfig.load(args.config).to_dict() if args.config else {}
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            base[key[4:]] = value
    return TrainConfig.from_dict(base)


def _records(path: Path):
    from .annotations import load_corpus

    return load_corpus(path / "annotations.jsonl" if path.is_dir() else path)


def cmd_generate(args) -> int:
    from .synthdata import generate, save_scenarios

    scenarios = generate(args.seed, args.n_videos, args.class_mix)
    save_scenarios(scenarios, args.out)
    n_acc = sum(s.record.is_accident for s in scenarios)
    print(f"wrote {len(scenarios)} scenarios ({n_acc} accident) to {args.out}")
    return 0


def cmd_validate(args) -> int:
    from .annotations import CorpusFormatError, validate

    try:
        records = _records(args.corpus)
    except CorpusFormatError as exc:
        for line, msg in exc.errors:
            print(f"line {line}: {msg}")
        return 1
    bad = 0
    for r in records:
        for v in validate(r):
            print(f"{r.video_id}: {v}")
            bad += 1
    print(f"{len(records)} records, {bad} violations")
    return 1 if bad else 0


def cmd_sample(args) -> int:
    from .clip_sampler import SamplerConfig, sample_corpus, save_manifest

    cfg = SamplerConfig(args.window_len, args.strategy, args.horizon, args.seed)
    clips = sample_corpus(_records(args.corpus), cfg)
    save_manifest(clips, args.out)
    n_pos = sum(c.is_positive for c in clips)
    print(f"{len(clips)} clips ({n_pos} positive, {len(clips) - n_pos} negative) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    from .synthdata import load_scenarios
    from .training import CHECKPOINT_NAME, train

    config = _config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    ckpt = train(load_scenarios(args.data), config, args.out, resume=args.resume)
    print(f"trained {ckpt.epoch} epochs -> {args.out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import format_reports
    from .synthdata import load_scenarios
    from .training import evaluate, load_checkpoint, write_evaluation

    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.config
    if args.window_len is not None or args.strategy is not None or args.horizon is not None:
        config = dataclasses.replace(
            config,
            window_len=args.window_len or config.window_len,
            strategy=args.strategy or config.strategy,
            horizon_s=args.horizon or config.horizon_s,
        )
    ev = evaluate(ckpt.model, load_scenarios(args.data), ckpt.vocab, config,
                  placeholder=args.placeholder, group_by=args.group_by, with_saliency=not args.no_saliency)
    write_evaluation(ev, args.out, dump_maps=args.dump_maps)
    sys.stdout.write(format_reports([ev.overall, *ev.groups]))
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    report = gradcheck.run(args.seed, coords=args.coords)
    sys.stdout.write(gradcheck.main_summary(report))
    if args.json:
        args.json.write_text(report.to_json() + "\n")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scenario corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-videos", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-mix", type=float, default=0.6, help="fraction of accident videos")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("validate", help="check an annotation corpus")
    p.add_argument("corpus", type=Path, help="annotations.jsonl or a scenario directory")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("sample", help="write a clip manifest")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strategy", choices=("mini", "full"), default="mini")
    p.add_argument("--window-len", type=int, default=150)
    p.add_argument("--horizon", type=float, default=5.0, help="seconds, full strategy")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("train", help="train on a scenario directory")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path)
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--group-by", choices=("weather", "light", "occasion", "road_type", "accident_category"))
    p.add_argument("--placeholder", action="store_true", default=None, help="replace fact text by the placeholder")
    p.add_argument("--strategy", choices=("mini", "full"))
    p.add_argument("--window-len", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dump-maps", action="store_true")
    p.add_argument("--no-saliency", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=6, help="coordinates sampled per tensor")
    p.add_argument("--json", type=Path)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
