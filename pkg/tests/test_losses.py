import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cogcap import gradcheck
from cogcap.losses import (
    EPSILON,
    LAMBDA,
    anticipation_loss,
    attention_loss,
    earliness_weights,
    joint_objective,
    kl_floor,
    total_loss,
)

D = torch.float64


def maps(*values):
    return torch.tensor(values, dtype=D).reshape(1, 1, -1)


def test_identity_case_is_near_zero():
    d = torch.full((1, 2, 2), 0.25, dtype=D)
    loss = attention_loss(d, d).item()
    expected = 4 * 0.25 * math.log(1e-4 + 0.25 / 0.2501)
    assert loss == pytest.approx(expected, abs=1e-12)
    assert abs(loss) < 1e-3


def test_concentrated_miss_is_finite():
    gt = torch.zeros(1, 4, 4, dtype=D)
    gt[0, 0, 0] = 1.0
    pred = torch.zeros(1, 4, 4, dtype=D)
    pred[0, 3, 3] = 1.0
    assert attention_loss(gt, pred).item() == pytest.approx(math.log(EPSILON + 1 / EPSILON), rel=1e-12)


def test_attention_hand_case():
    loss = attention_loss(maps(0.5, 0.5), maps(0.9, 0.1)).item()
    expected = 0.5 * math.log(1e-4 + 0.5 / 0.9001) + 0.5 * math.log(1e-4 + 0.5 / 0.1001)
    assert loss == pytest.approx(expected, abs=1e-12)
    # the 4-digit figure rounds intermediate terms; exact value 0.51037
    assert loss == pytest.approx(0.5105, abs=5e-4)


def test_attention_sum_and_mean_reduction():
    gt = torch.softmax(torch.randn(3, 4, 8, 8, dtype=D).flatten(-2), -1).reshape(3, 4, 8, 8)
    pred = torch.softmax(torch.randn(3, 4, 8, 8, dtype=D).flatten(-2), -1).reshape(3, 4, 8, 8)
    total = attention_loss(gt, pred)
    per = sum(attention_loss(gt[i, j], pred[i, j]) for i in range(3) for j in range(4))
    torch.testing.assert_close(total, per)
    torch.testing.assert_close(attention_loss(gt, pred, reduction="mean"), total / 12)


def test_attention_rejects_unnormalized():
    with pytest.raises(ValueError):
        attention_loss(maps(0.5, 0.6), maps(0.5, 0.5))
    with pytest.raises(ValueError):
        attention_loss(maps(0.5, 0.5), maps(1.5, -0.5))
    with pytest.raises(ValueError):
        attention_loss(maps(0.5, 0.5), maps(1.0, 0.0, 0.0))


@settings(max_examples=60)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_attention_loss_respects_floor(n_pix, seed):
    g = torch.Generator().manual_seed(seed)
    n = n_pix * n_pix
    gt = torch.softmax(3 * torch.randn(n, generator=g, dtype=D), 0).reshape(1, n_pix, n_pix)
    pred = torch.softmax(3 * torch.randn(n, generator=g, dtype=D), 0).reshape(1, n_pix, n_pix)
    assert attention_loss(gt, pred).item() >= kl_floor(n) - 1e-12
    assert attention_loss(gt, gt).item() >= kl_floor(n) - 1e-12


def test_earliness_weights():
    w = earliness_weights(6, t_ai=3, fps=1.0)
    torch.testing.assert_close(w, torch.tensor([math.exp(-3), math.exp(-2), math.exp(-1), 1, 1, 1], dtype=D))
    w30 = earliness_weights(100, t_ai=60, fps=30.0)
    assert w30[30].item() == pytest.approx(math.exp(-1), abs=1e-15)
    assert torch.all(w30[1:] >= w30[:-1])


def test_negative_closed_form():
    assert anticipation_loss(torch.full((10,), 0.5, dtype=D), False).item() == pytest.approx(10 * math.log(2), abs=1e-12)


def test_positive_weight_hand_case():
    loss = anticipation_loss(torch.full((3,), 0.5, dtype=D), True, t_ai=2, fps=1.0).item()
    expected = (math.exp(-2) + math.exp(-1) + 1) * math.log(2)
    assert abs(loss - expected) <= 1e-9
    assert loss == pytest.approx(1.0418, abs=5e-4)  # exact 1.04195


def test_positive_needs_t_ai_and_finite_input():
    with pytest.raises(ValueError):
        anticipation_loss(torch.full((3,), 0.5, dtype=D), True)
    with pytest.raises(ValueError):
        anticipation_loss(torch.tensor([0.5, float("nan")], dtype=D), False)


def test_clamp_keeps_boundary_finite():
    assert math.isfinite(anticipation_loss(torch.tensor([0.0, 1.0], dtype=D), True, t_ai=0).item())
    assert math.isfinite(anticipation_loss(torch.tensor([0.0, 1.0], dtype=D), False).item())


@settings(max_examples=60)
@given(
    st.lists(st.floats(0.01, 0.98), min_size=2, max_size=12),
    st.data(),
    st.booleans(),
)
def test_anticipation_monotone(ps, data, positive):
    p = torch.tensor(ps, dtype=D)
    i = data.draw(st.integers(0, len(ps) - 1))
    q = p.clone()
    q[i] += 0.01
    t_ai = data.draw(st.integers(0, len(ps)))
    a = anticipation_loss(p, positive, t_ai=t_ai, fps=2.0).item()
    b = anticipation_loss(q, positive, t_ai=t_ai, fps=2.0).item()
    assert a >= 0 and b >= 0
    assert (b < a) if positive else (b > a)


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 5).L_total == 11.0
    assert total_loss(0.0, 3.5, 2.0).L_total == 7.0
    assert LAMBDA == 5.0 and total_loss(1.0, 1.0).lam == 5.0
    with pytest.raises(ValueError):
        total_loss(float("inf"), 1.0)


@settings(max_examples=100)
@given(st.floats(-10, 100), st.floats(0, 100), st.floats(0, 10), st.floats(0, 10))
def test_lambda_linearity_exact(ld, la, lam1, lam2):
    b1 = total_loss(ld, la, lam1)
    assert b1.L_total == ld + lam1 * la
    # the back-propagated tensor uses the same expression
    t = joint_objective(torch.tensor(ld, dtype=D), torch.tensor(la, dtype=D), lam2)
    assert t.item() == ld + lam2 * la


def test_loss_gradients():
    report = gradcheck.run(0, only={"losses"})
    assert report.passed, report.format()
    assert max(m.max_rel_error for m in report.results) <= 1e-6
