import json

import pytest

from cogcap.annotations import load_corpus
from cogcap.cli import build_parser, main
from cogcap.clip_sampler import load_manifest


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["generate", "--out", str(out), "--n-videos", "3", "--seed", "2"]) == 0
    return out


def test_generate_and_validate(corpus, capsys):
    assert len(load_corpus(corpus / "annotations.jsonl")) == 3
    assert main(["validate", str(corpus)]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_validate_reports_bad_line(tmp_path, corpus, capsys):
    lines = (corpus / "annotations.jsonl").read_text().splitlines()
    lines[1] = "{not json"
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["validate", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().out


def test_sample_flags(corpus, tmp_path):
    out = tmp_path / "clips.jsonl"
    assert main(["sample", str(corpus), "--out", str(out), "--strategy", "mini", "--window-len", "40",
                 "--horizon", "2", "--seed", "3"]) == 0
    clips = load_manifest(out)
    assert clips and all(c.length == 40 for c in clips)


def test_train_config_and_overrides(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 5, "window_len": 10, "lambda": 2.0}))
    run = tmp_path / "run"
    assert main(["train", "--data", str(corpus), "--out", str(run), "--config", str(cfg), "--epochs", "1",
                 "--optimizer", "adam", "--batch-average", "true"]) == 0
    written = json.loads((run / "config.json").read_text())
    assert written["epochs"] == 1 and written["lam"] == 2.0 and written["window_len"] == 10
    assert written["optimizer"] == "adam" and written["batch_average"] is True
    assert (run / "train_log.jsonl").stat().st_size > 0

    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.cnpk"), "--data", str(corpus), "--out", str(ev),
                 "--group-by", "weather", "--placeholder"]) == 0
    reports = json.loads((ev / "report.json").read_text())
    assert reports[0]["group_key"] is None
    assert all(r["group_key"][0] == "weather" for r in reports[1:])
    assert (ev / "report.txt").exists() and (ev / "scores.png").exists()


def test_gradcheck_subcommand_parses():
    args = build_parser().parse_args(["gradcheck", "--seed", "4", "--coords", "2"])
    assert (args.seed, args.coords) == (4, 2)


def test_bad_input_returns_error_code(tmp_path):
    assert main(["sample", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"no_such_key": 1}))
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "r"), "--config", str(bad)]) == 2


def test_unknown_group_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["eval", "--checkpoint", "c", "--data", "d", "--out", "o", "--group-by", "colour"])
