import pytest
import torch
from torch.nn import functional as F

from cogcap import gradcheck
from cogcap.encoders import (
    EMBED_DIM,
    N_TEXT,
    N_VISION,
    Encoders,
    LookupTextEncoder,
    MultiHeadSelfAttention,
    PatchEmbed,
    ids_tensor,
    uniform_init_,
)
from cogcap.model import frames_to_images, frames_to_pooled_pixels
from cogcap.text import PAD_ID, PLACEHOLDER_TEXT, UNK_ID, Vocabulary, pad_ids


def test_patch_embed_shapes():
    pe = PatchEmbed()
    img = torch.rand(2, 224, 224, 3)
    assert pe.patch_grid(img).shape == (2, 768, 14, 14)
    assert pe.pooled_grid(img).shape == (2, 768, 7, 7)
    assert pe(img).shape == (2, N_VISION, EMBED_DIM) == (2, 49, 120)


def test_pooled_path_equals_full_grid():
    pe = PatchEmbed().double()
    img = torch.rand(2, 224, 224, 3, dtype=torch.float64)
    ref = F.avg_pool2d(pe.patch_grid(img), 2)
    torch.testing.assert_close(pe.pooled_grid(img), ref, rtol=1e-12, atol=1e-12)
    tokens = pe.down(ref).flatten(2).transpose(1, 2)
    torch.testing.assert_close(pe(img), tokens, rtol=1e-12, atol=1e-12)


def test_frames_shortcut_matches_upsampled_images():
    import numpy as np

    frames = np.random.default_rng(0).integers(0, 256, (3, 64, 64, 3), dtype=np.uint8)
    pe = PatchEmbed().double()
    a = pe.tokens_from_pooled_pixels(frames_to_pooled_pixels(frames, torch.float64))
    b = pe(frames_to_images(frames, torch.float64))
    torch.testing.assert_close(a, b, rtol=1e-12, atol=1e-12)


def test_zero_image_zero_bias_gives_zero_tokens():
    pe = PatchEmbed()
    with torch.no_grad():
        pe.patch.bias.zero_()
        pe.down.bias.zero_()
    assert torch.count_nonzero(pe(torch.zeros(1, 224, 224, 3))) == 0


def test_patch_locality():
    pe = PatchEmbed()
    a = torch.rand(1, 224, 224, 3)
    b = a.clone()
    b[0, 80:96, 160:176] += 1.0  # patch (5, 10) lives in 7x7 cell (2, 5)
    diff = (pe(a) - pe(b)).abs().sum(-1)[0]
    changed = torch.nonzero(diff > 1e-6).flatten().tolist()
    assert changed == [2 * 7 + 5]


def test_patch_embed_rejects_wrong_shape():
    with pytest.raises(ValueError):
        PatchEmbed()(torch.zeros(1, 3, 224, 224))


def test_text_lookup_and_padding():
    enc = LookupTextEncoder(10)
    ids = torch.tensor([[3, 4, 5] + [PAD_ID] * 12])
    out = enc(ids)
    assert out.shape == (1, N_TEXT, EMBED_DIM)
    torch.testing.assert_close(out[0, 0], enc.table.weight[3])
    empty = enc(ids_tensor([]))
    torch.testing.assert_close(empty[0], enc.table.weight[PAD_ID].expand(15, -1))


def test_unknown_ids_map_to_unk():
    enc = LookupTextEncoder(10)
    out = enc(torch.tensor([[42, -3] + [0] * 13]))
    torch.testing.assert_close(out[0, 0], enc.table.weight[UNK_ID])
    torch.testing.assert_close(out[0, 1], enc.table.weight[UNK_ID])


def test_placeholder_ids():
    v = Vocabulary.build(["a car is turning"])
    ids = pad_ids(v.encode(PLACEHOLDER_TEXT))
    assert len(ids) == 15 and all(i > UNK_ID for i in ids[:5]) and ids[5:] == [PAD_ID] * 10


def test_mhsa_shapes_and_shared_weights():
    enc = Encoders(vocab_size=20)
    vision, text = enc(torch.rand(2, 224, 224, 3), ids_tensor([2, 3, 4]))
    assert vision.shape == (2, 49, 120) and text.shape == (1, 15, 120)
    before = enc.mhsa(torch.ones(1, 15, 120))
    with torch.no_grad():
        enc.mhsa.v.bias.add_(1.0)
    assert not torch.allclose(before, enc.mhsa(torch.ones(1, 15, 120)))
    # one module, one storage: both paths go through enc.mhsa
    assert sum(1 for m in enc.modules() if isinstance(m, MultiHeadSelfAttention)) == 1


def test_mhsa_single_token_is_value_path():
    attn = MultiHeadSelfAttention().double()
    x = torch.randn(1, 1, 120, dtype=torch.float64)
    out = attn(x)
    torch.testing.assert_close(out, attn.o(attn.v(x)))


def test_mhsa_permutation_equivariant():
    attn = MultiHeadSelfAttention().double()
    x = torch.randn(2, 49, 120, dtype=torch.float64)
    perm = torch.randperm(49)
    torch.testing.assert_close(attn(x)[:, perm], attn(x[:, perm]))


def test_mhsa_rows_are_distributions_and_rejects_nonfinite():
    attn = MultiHeadSelfAttention()
    _, w = attn(torch.randn(1, 15, 120), return_weights=True)
    torch.testing.assert_close(w.sum(-1), torch.ones(1, 8, 15))
    with pytest.raises(ValueError):
        attn(torch.full((1, 3, 120), float("nan")))
    with pytest.raises(ValueError):
        attn(torch.zeros(1, 3, 100))


def test_uniform_init_bounds():
    lin = uniform_init_(torch.nn.Linear(400, 3))
    assert lin.weight.abs().max() <= 1 / 20


def test_encoder_gradients():
    report = gradcheck.run(0, only={"encoders.patch_embed", "encoders.mhsa"})
    assert report.passed, report.format()
