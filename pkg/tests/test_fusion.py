import pytest
import torch

from cogcap import gradcheck
from cogcap.fusion import FusionStack, GlobalSummary, PaCa, T2ISFLayer, split_fused

D = torch.float64


def test_global_summary_shape():
    assert GlobalSummary()(torch.randn(3, 64, 120)).shape == (3, 64, 15)


def test_paca_shapes_and_weights():
    paca = PaCa().eval()
    out, w = paca(torch.randn(2, 64, 120), return_weights=True)
    assert out.shape == (2, 64, 120)
    assert w.shape == (2, 8, 64, 64)
    torch.testing.assert_close(w.sum(-1), torch.ones(2, 8, 64))


def test_paca_rejects_bad_input():
    paca = PaCa()
    with pytest.raises(ValueError):
        paca(torch.randn(1, 63, 120))
    with pytest.raises(ValueError):
        paca(torch.full((1, 64, 120), float("inf")))
    with pytest.raises(ValueError):
        PaCa(dim=120, heads=7)


def test_split_layout():
    fused = torch.arange(64.0).view(64, 1).expand(64, 120)
    v, t = split_fused(fused)
    assert v.shape == (49, 120) and t.shape == (15, 120)
    assert v[0, 0] == 0 and v[-1, 0] == 48 and t[0, 0] == 49


def test_shift_with_zero_vision_input():
    layer = T2ISFLayer().double().eval()
    text = torch.randn(1, 15, 120, dtype=D)
    vision = torch.zeros(1, 49, 120, dtype=D)
    t_out, v_out = layer(text, vision)
    fused = torch.cat([vision, text], dim=-2)
    pv, pt = split_fused(layer.paca(fused))
    # (1 + 0) multiplier: vision output is the raw cross-attention output
    torch.testing.assert_close(v_out, pv)
    torch.testing.assert_close(t_out, pt)


def test_shift_multiplies_elementwise():
    layer = T2ISFLayer().double().eval()
    text = torch.randn(1, 15, 120, dtype=D)
    vision = torch.randn(1, 49, 120, dtype=D)
    _, v_out = layer(text, vision)
    pv, _ = split_fused(layer.paca(torch.cat([vision, text], dim=-2)))
    torch.testing.assert_close(v_out, pv * (1 + vision))


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_stack_shapes(layers):
    stack = FusionStack(layers).eval()
    state = stack(torch.randn(1, 15, 120), torch.randn(5, 49, 120))
    assert len(state.layer_outputs) == layers + 1
    for t, v in state.layer_outputs:
        assert t.shape == (5, 15, 120) and v.shape == (5, 49, 120)
    assert state.fused().shape == (5, 64, 120)


def test_stack_rejects_zero_layers():
    with pytest.raises(ValueError):
        FusionStack(0)


def test_eval_mode_is_deterministic():
    stack = FusionStack(2).eval()
    t, v = torch.randn(1, 15, 120), torch.randn(2, 49, 120)
    torch.testing.assert_close(stack(t, v).fused(), stack(t, v).fused(), rtol=0, atol=0)


def test_fusion_gradients():
    report = gradcheck.run(0, only={"fusion.global_summary", "fusion.paca", "fusion.t2i_layer", "fusion.stack"})
    assert report.passed, report.format()
