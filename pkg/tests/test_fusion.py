import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from eamtnet.fusion import ConcatFusion, EdgeAwareFusion, MultiHeadSelfAttention, TransformerLayer, attention


def test_single_token_returns_value():
    q, k, v = torch.randn(1, 8), torch.randn(1, 8), torch.randn(1, 5)
    assert torch.equal(attention(q, k, v), v)


def test_identical_keys_average_values():
    q = torch.randn(3, 4, dtype=torch.float64)
    k = torch.tensor([[1.0, 2.0, 3.0, 4.0]] * 3, dtype=torch.float64)
    v = torch.tensor([[1.0, 0.0], [2.0, 3.0], [6.0, -3.0]], dtype=torch.float64)
    out = attention(q, k, v)
    torch.testing.assert_close(out, torch.tensor([[3.0, 0.0]] * 3, dtype=torch.float64))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 10_000))
def test_attention_rows_are_convex_weights(n, d, seed):
    g = torch.Generator().manual_seed(seed)
    q, k, v = (torch.randn(n, d, generator=g) * 3 for _ in range(3))
    out, w = attention(q, k, v, return_weights=True)
    assert torch.allclose(w.sum(-1), torch.ones(n), atol=1e-6)
    assert (out >= v.min(0).values - 1e-5).all() and (out <= v.max(0).values + 1e-5).all()


def test_attention_scaling_uses_d_k():
    q = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
    k = torch.tensor([[8.0, 0.0], [0.0, 0.0]])
    v = torch.tensor([[1.0], [0.0]])
    # scores 8 and 0, divided by sqrt(64) = 8
    expected = np.exp(1) / (np.exp(1) + 1)
    out = attention(q, k, v, d_k=64)
    assert out[0, 0].item() == pytest.approx(expected, rel=1e-6)
    assert out[1, 0].item() == pytest.approx(0.5, rel=1e-6)


def test_attention_rejects_bad_input():
    with pytest.raises(ValueError):
        attention(torch.randn(3, 4), torch.randn(2, 4), torch.randn(2, 4))
    bad = torch.randn(2, 4)
    bad[0, 0] = float("nan")
    with pytest.raises(FloatingPointError):
        attention(bad, torch.randn(2, 4), torch.randn(2, 4))


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        MultiHeadSelfAttention(10, heads=4)


def test_multi_head_matches_per_head_reference():
    torch.manual_seed(0)
    mha = MultiHeadSelfAttention(8, heads=2, d_k=64).double()
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    q, k, v = mha.w_q(x)[0], mha.w_k(x)[0], mha.w_v(x)[0]
    heads = [torch.softmax(q[:, s] @ k[:, s].T / 8.0, -1) @ v[:, s] for s in (slice(0, 4), slice(4, 8))]
    ref = mha.w_o(torch.cat(heads, -1))
    torch.testing.assert_close(mha(x)[0], ref)


def test_zero_branch_layer_is_identity():
    layer = TransformerLayer(16, heads=4)
    with torch.no_grad():
        for name, p in layer.named_parameters():
            if not name.startswith("norm"):
                p.zero_()
    x = torch.randn(2, 7, 16)
    assert torch.equal(layer(x), x)


def _fusion(**kw):
    torch.manual_seed(0)
    f = EdgeAwareFusion(channels=32, grid=8, image_size=64, **kw)
    torch.nn.init.normal_(f.pos, std=0.02)
    return f


def test_tokenize_shape_law():
    f = _fusion()
    seq = f.tokenize(torch.randn(2, 32, 8, 8), torch.randn(2, 32, 8, 8), torch.rand(2, 2, 64, 64))
    assert seq.tokens.shape == (2, 66, 64)
    assert f.n_tokens == 2 * 32 + 2


def test_zero_maps_give_positional_encodings():
    f = _fusion()
    with torch.no_grad():
        f.edge_proj.bias.zero_()
    seq = f.tokenize(torch.zeros(1, 32, 8, 8), torch.zeros(1, 32, 8, 8), torch.zeros(1, 2, 64, 64))
    assert torch.equal(seq.tokens[0], f.pos.detach())


def test_token_ordering():
    f = _fusion()
    a, b = torch.randn(1, 32, 8, 8), torch.randn(1, 32, 8, 8)
    e = torch.rand(1, 2, 64, 64)
    pos = f.pos.detach()
    t_ab = f.tokenize(a, b, e).tokens[0] - pos
    t_ba = f.tokenize(b, a, e).tokens[0] - pos
    close = torch.testing.assert_close
    close(t_ab[:32], a.flatten(2)[0])
    close(t_ab[32:64], b.flatten(2)[0])
    close(t_ab[:32], t_ba[32:64])
    close(t_ab[32:64], t_ba[:32])
    torch.testing.assert_close(t_ab[64], f.edge_proj(e[0, 0].flatten()))
    torch.testing.assert_close(t_ab[65], f.edge_proj(e[0, 1].flatten()))


def test_tokenize_rejects_mismatch():
    f = _fusion()
    with pytest.raises(ValueError):
        f.tokenize(torch.randn(1, 32, 4, 4), torch.randn(1, 32, 4, 4), torch.rand(1, 2, 64, 64))
    with pytest.raises(ValueError):
        f.tokenize(torch.randn(1, 32, 8, 8), torch.randn(1, 16, 8, 8), torch.rand(1, 2, 64, 64))


def test_forward_outputs():
    f = _fusion()
    g1, g2, e = torch.randn(2, 32, 8, 8), torch.randn(2, 32, 8, 8), torch.rand(2, 2, 64, 64)
    tokens = f.encode_tokens(f.tokenize(g1, g2, e).tokens)
    assert tokens.shape == (2, 66, 64)
    out = f.split(tokens)
    assert out.fused_map.shape == (2, 64, 8, 8)
    assert torch.equal(out.fused_map.flatten(2), tokens[:, :64])
    assert torch.equal(out.f_vector, tokens.mean(1))


def test_positional_encoding_is_load_bearing():
    f = _fusion()
    g1, g2, e = torch.randn(1, 32, 8, 8), torch.randn(1, 32, 8, 8), torch.rand(1, 2, 64, 64)
    before = f(g1, g2, e).f_vector
    with torch.no_grad():
        f.pos[[0, 40]] = f.pos[[40, 0]].clone()
    assert not torch.allclose(before, f(g1, g2, e).f_vector)


def test_without_edge_tokens():
    f = _fusion(use_edges=False)
    g1, g2 = torch.randn(1, 32, 8, 8), torch.randn(1, 32, 8, 8)
    assert f.n_tokens == 64
    assert f.tokenize(g1, g2).tokens.shape == (1, 64, 64)
    out = f(g1, g2)
    assert out.fused_map.shape == (1, 64, 8, 8) and out.f_vector.shape == (1, 64)


def test_concat_fusion_shapes():
    f = ConcatFusion(32, 8)
    out = f(torch.randn(2, 32, 8, 8), torch.randn(2, 32, 8, 8))
    assert out.fused_map.shape == (2, 64, 8, 8) and out.f_vector.shape == (2, 64)
