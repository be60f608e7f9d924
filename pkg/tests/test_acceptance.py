"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary.

Each test records its verdict and measured values before asserting, so a failing
criterion still reports what was measured.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from cogcap import gradcheck, metrics
from cogcap.encoders import ids_tensor
from cogcap.losses import anticipation_loss, attention_loss, earliness_weights, joint_objective, total_loss
from cogcap.metrics import fixations, saliency_metrics, video_score
from cogcap.model import CAPModel, frames_to_images
from cogcap.synthdata import generate
from cogcap.training import LOG_NAME, TrainConfig, evaluate, reset_decoder, set_determinism, train, write_evaluation

from conftest import ACCEPTANCE
from oracles import (
    ap_bruteforce,
    auc_bruteforce,
    cc_bruteforce,
    kldiv_bruteforce,
    mtta_bruteforce,
    sauc_bruteforce,
    sim_bruteforce,
    tta_bruteforce,
)

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK_CONFIG = ROOT / "configs" / "synthetic_benchmark.json"
TRAIN_SEED, N_TRAIN, N_TEST = 0, 40, 20
D = torch.float64


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# 1. gradient integrity -----------------------------------------------------------

def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    rep = gradcheck.run(seed=0)
    elapsed = time.perf_counter() - t0
    tol_ok = all(
        r.tolerance == (gradcheck.END_TO_END_TOL if r.module == "end_to_end" else gradcheck.MODULE_TOL)
        for r in rep.results
    )
    worst_module = max((r for r in rep.results if r.module != "end_to_end"), key=lambda r: r.max_rel_error)
    e2e = [r for r in rep.results if r.module == "end_to_end"]
    ok = rep.passed and tol_ok and len(e2e) == 1 and elapsed < 300
    record(1, ok, f"{len(rep.results)} cases, worst module {worst_module.module} {worst_module.max_rel_error:.2e}, "
                  f"end-to-end {e2e[0].max_rel_error:.2e}, {elapsed:.0f} s")
    assert ok, rep.format()


# 2. shapes ----------------------------------------------------------------------

def test_criterion_2_architecture_dimensions():
    frames = np.random.default_rng(0).integers(0, 256, (2, 64, 64, 3), dtype=np.uint8)
    ids = ids_tensor([2, 3, 4])
    problems = []

    def check(what, got, want):
        if tuple(got) != tuple(want):
            problems.append(f"{what}: {tuple(got)} != {tuple(want)}")

    for layers in (1, 2, 3):
        model = CAPModel(vocab_size=20, t2i_layers=layers).eval()
        images = frames_to_images(frames)
        pe = model.encoders.patch_embed
        grid = pe.patch_grid(images)
        check("patch grid", grid.shape[1:], (768, 14, 14))
        check("downsample", pe.down(pe.pooled_grid(images)).shape[1:], (120, 7, 7))
        vision, text = model.encoders(images, ids)
        check("vision tokens", vision.shape[-2:], (49, 120))
        check("text tokens", text.shape[-2:], (15, 120))
        state = model.fusion(text, vision)
        check(f"L={layers} layer count", (len(state.layer_outputs) - 1,), (layers,))
        for i, (t, v) in enumerate(state.layer_outputs[1:], 1):
            check(f"L={layers} layer {i} text", t.shape[-2:], (15, 120))
            check(f"L={layers} layer {i} vision", v.shape[-2:], (49, 120))
        check(f"L={layers} fused", state.fused().shape[-2:], (64, 120))
        with torch.no_grad():
            out = model.forward_clip(images, ids)
            _, hidden = model.context_head.scores(out.context.max(dim=-2).values)
        check("context", out.context.shape[-2:], (64, 512))
        check("hidden", hidden.shape[-1:], (256,))
        check("attention map", out.maps.shape[-2:], (64, 64))
        check("scores", out.p_hat.shape, (2,))
    record(2, not problems, "all dimensions match for L = 1, 2, 3" if not problems else "; ".join(problems))
    assert not problems


# 3. loss identities -------------------------------------------------------------

def test_criterion_3_loss_identities():
    notes, ok = [], True
    # identity case; the floor is only near zero when each support pixel carries
    # mass well above epsilon (a uniform 64x64 map sits at log(eps + 1/(1 + 4096 eps)))
    rng = np.random.default_rng(3)
    worst_identity = 0.0
    cases = [np.full((2, 2), 0.25)]
    for _ in range(20):
        m = np.zeros((64, 64))
        k = int(rng.integers(1, 11))
        idx = rng.choice(4096, k, replace=False)
        m.flat[idx] = rng.uniform(0.5, 1.0, k)
        cases.append(m / m.sum())
    for m in cases:
        d = torch.tensor(m[None], dtype=D)
        worst_identity = max(worst_identity, abs(attention_loss(d, d).item()))
    ok &= worst_identity < 1e-3
    notes.append(f"identity |loss| max {worst_identity:.2e}")

    w = earliness_weights(3, t_ai=2, fps=1.0)
    w_err = float((w - torch.tensor([math.exp(-2), math.exp(-1), 1.0], dtype=D)).abs().max())
    loss = anticipation_loss(torch.full((3,), 0.5, dtype=D), True, t_ai=2, fps=1.0).item()
    hand = (math.exp(-2) + math.exp(-1) + 1.0) * math.log(2)
    ok &= w_err <= 1e-9 and abs(loss - hand) <= 1e-9
    notes.append(f"weight hand case error {max(w_err, abs(loss - hand)):.1e}")

    lin_ok = True
    for _ in range(1000):
        ld, la = float(rng.uniform(-10, 100)), float(rng.uniform(0, 100))
        lam = float(rng.uniform(0, 10))
        lin_ok &= total_loss(ld, la, lam).L_total == ld + lam * la
        lin_ok &= joint_objective(torch.tensor(ld, dtype=D), torch.tensor(la, dtype=D), lam).item() == ld + lam * la
    ok &= lin_ok
    notes.append("lambda-linearity exact" if lin_ok else "lambda-linearity broken")
    record(3, ok, ", ".join(notes))
    assert ok


# 4. metric oracles --------------------------------------------------------------

def _oracle_instance(rng):
    n = int(rng.integers(2, 21))
    labels = rng.random(n) < 0.5
    labels[0], labels[1] = True, False
    rng.shuffle(labels)
    fps = float(rng.choice([10.0, 30.0]))
    series, t_ai = [], []
    for y in labels:
        length = int(rng.integers(3, 40))
        p = rng.random(length) ** rng.uniform(0.3, 3)
        if rng.random() < 0.3:  # coarse values force ties
            p = np.round(p * 4) / 4
        series.append(p)
        t_ai.append(int(rng.integers(0, length + 1)) if y else None)
    return labels, series, t_ai, fps


def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(2025)
    transforms = [np.exp, lambda x: x**3, lambda x: np.log1p(x) * 7 - 2, lambda x: 1 / (1 + np.exp(-9 * (x - 0.3)))]
    worst, invariance_failures, n_inst = 0.0, 0, 1000
    for i in range(n_inst):
        labels, series, t_ai, fps = _oracle_instance(rng)
        scores = np.array([video_score(p) for p in series])
        errs = [
            metrics.average_precision(scores, labels) - ap_bruteforce(list(scores), list(labels)),
            metrics.auc(scores, labels) - auc_bruteforce(list(scores), list(labels)),
        ]
        for p, t in zip(series, t_ai):
            if t is None:
                continue
            errs.append(metrics.tta(p, t, fps) - tta_bruteforce(list(p), t, fps, 0.5))
            errs.append(metrics.mtta(p, t, fps) - mtta_bruteforce(list(p), t, fps))
        # saliency on one map pair per video
        for _ in labels:
            h = int(rng.integers(2, 9))
            gt = rng.random((h, h)) ** 3
            gt /= gt.sum()
            pred = rng.random((h, h))
            pred /= pred.sum()
            fx = fixations(gt)
            others = rng.integers(0, h, (int(rng.integers(1, 10)), 2))
            m = saliency_metrics(gt, pred, fx, others)
            g, q = gt.tolist(), pred.tolist()
            errs += [m["kldiv"] - kldiv_bruteforce(g, q), m["cc"] - cc_bruteforce(g, q),
                     m["sim"] - sim_bruteforce(g, q), m["s_auc"] - sauc_bruteforce(q, fx.tolist(), others.tolist())]
        worst = max(worst, max(abs(e) for e in errs))
        f = transforms[i % len(transforms)]
        if (abs(metrics.average_precision(f(scores), labels) - metrics.average_precision(scores, labels)) > 1e-12
                or abs(metrics.auc(f(scores), labels) - metrics.auc(scores, labels)) > 1e-12):
            invariance_failures += 1
    ok = worst <= 1e-9 and invariance_failures == 0
    record(4, ok, f"{n_inst} instances, max deviation {worst:.1e}, invariance failures {invariance_failures}")
    assert ok


# 5-7. synthetic benchmark -------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    config = TrainConfig.load(BENCHMARK_CONFIG)
    train_set = generate(TRAIN_SEED, N_TRAIN)
    test_set = generate(TRAIN_SEED + 1, N_TEST)
    out = tmp_path_factory.mktemp("benchmark")
    t0 = time.perf_counter()
    ckpt = train(train_set, config, out)
    seconds = time.perf_counter() - t0
    trained = evaluate(ckpt.model, test_set, ckpt.vocab, config)
    return dict(config=config, train=train_set, test=test_set, ckpt=ckpt, seconds=seconds, trained=trained)


def test_criterion_5_synthetic_end_to_end(benchmark):
    config, ckpt = benchmark["config"], benchmark["ckpt"]
    o = benchmark["trained"].overall
    # chance control: the same architecture at the pinned initialization, before any update
    set_determinism(config.seed)
    untrained = CAPModel(len(ckpt.vocab), t2i_layers=config.t2i_layers, dropout=config.dropout,
                         init_gain=config.init_gain)
    control = evaluate(untrained, benchmark["test"], ckpt.vocab, config, with_saliency=False).overall
    minutes = benchmark["seconds"] / 60
    checks = [o.AP >= 0.90, o.AUC >= 0.85, o.TTA_05 > 0.5, minutes <= 30, abs(control.AUC - 0.5) <= 0.15]
    record(5, all(checks), f"AP {o.AP:.3f} (>=0.90), AUC {o.AUC:.3f} (>=0.85), TTA {o.TTA_05:.2f} s (>0.5), "
                           f"train {minutes:.1f} min (<=30), untrained AUC {control.AUC:.3f} (0.5+-0.15)")
    assert all(checks)


def test_criterion_6_placeholder_text(benchmark):
    config, ckpt = benchmark["config"], benchmark["ckpt"]
    full = benchmark["trained"].overall.AUC
    ph = evaluate(ckpt.model, benchmark["test"], ckpt.vocab, config, placeholder=True, with_saliency=False).overall.AUC
    ok = full - ph <= 0.10
    record(6, ok, f"AUC full text {full:.3f}, placeholder {ph:.3f}, drop {full - ph:+.3f} (<=0.10)")
    assert ok


def test_criterion_7_attention_co_training(benchmark):
    config, ckpt = benchmark["config"], benchmark["ckpt"]
    trained = benchmark["trained"].overall.saliency["s_auc"]
    ablated_model = reset_decoder(ckpt.model, seed=config.seed + 1)
    ablated = evaluate(ablated_model, benchmark["test"], ckpt.vocab, config).overall.saliency["s_auc"]
    ok = trained >= 0.75 and ablated <= 0.60
    record(7, ok, f"s-AUC trained {trained:.3f} (>=0.75), decoder-ablated {ablated:.3f} (<=0.60)")
    assert ok


# 8. determinism -----------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    # a shortened run: the property does not depend on run length
    config = TrainConfig.from_dict({**json.loads(BENCHMARK_CONFIG.read_text()), "epochs": 2, "window_len": 30})
    train_set, test_set = generate(5, 6), generate(6, 4)
    outputs = []
    for run in ("a", "b"):
        ckpt = train(train_set, config, tmp_path / run)
        ev = evaluate(ckpt.model, test_set, ckpt.vocab, config, group_by="weather")
        write_evaluation(ev, tmp_path / run / "eval")
        outputs.append(((tmp_path / run / LOG_NAME).read_bytes(), (tmp_path / run / "eval" / "report.json").read_bytes()))
    logs_equal, reports_equal = outputs[0][0] == outputs[1][0], outputs[0][1] == outputs[1][1]
    n_steps = outputs[0][0].count(b"\n")
    ok = logs_equal and reports_equal and n_steps > 0
    record(8, ok, f"{n_steps} logged steps, logs identical {logs_equal}, reports identical {reports_equal}")
    assert ok
