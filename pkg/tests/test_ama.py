import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pama.ama import (AmaBlock, ConfigurationError, ContractViolation,
                      PamaPipeline, interpolate)
from pama.codec import ShapeError


def make_block(channels=4, seed=0, **kwargs):
    torch.manual_seed(seed)
    return AmaBlock(channels, **kwargs)


def set_identity_1x1(conv):
    with torch.no_grad():
        conv.weight.copy_(torch.eye(conv.in_channels)[..., None, None])
        conv.bias.zero_()


def zero_conv(conv):
    with torch.no_grad():
        conv.weight.zero_()
        conv.bias.zero_()


# -- attention map -----------------------------------------------------------

def test_attention_uniform_for_zero_embeddings():
    block = make_block()
    zero_conv(block.embed_query)
    zero_conv(block.embed_key)
    attn = block.attention_map(torch.rand(4, 3, 5), torch.rand(4, 2, 4))
    assert attn.shape == (1, 15, 8)
    assert torch.allclose(attn, torch.full_like(attn, 1.0 / 8))


def test_attention_rows_stochastic(rng):
    block = make_block()
    f_c = torch.tensor(rng.normal(size=(4, 5, 6)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 3, 7)), dtype=torch.float32)
    attn = block.attention_map(f_c, f_s)
    assert (attn.sum(-1) - 1).abs().max() < 1e-5
    assert (attn > 0).all() and (attn < 1).all()


def test_attention_scalar_softmax_row():
    # 1-channel block, identity query embedding, key embedding w=1 b=1:
    # normalized 2-position features are (+1, -1), so one row sees
    # logits (2, 0) -> softmax (e^2/(e^2+1), 1/(e^2+1))
    block = make_block(channels=1)
    set_identity_1x1(block.embed_query)
    with torch.no_grad():
        block.embed_key.weight.fill_(1.0)
        block.embed_key.bias.fill_(1.0)
    f_c = torch.tensor([[[3.0, 1.0]]])  # normalizes to (+1, -1)
    f_s = torch.tensor([[[3.0, 1.0]]])
    attn = block.attention_map(f_c, f_s).squeeze(0)
    e2 = float(np.exp(2.0))
    expected = torch.tensor([e2 / (e2 + 1), 1 / (e2 + 1)])
    assert torch.allclose(attn[0], expected, atol=2e-4)
    assert abs(float(attn[0, 0]) - 0.8808) < 1e-3


def test_attention_channel_mismatch():
    block = make_block(channels=4)
    with pytest.raises(ShapeError):
        block.attention_map(torch.rand(3, 4, 4), torch.rand(4, 4, 4))


# -- style rearrangement ------------------------------------------------------

def test_rearrange_permutation_identity_embeddings():
    block = make_block()
    set_identity_1x1(block.embed_value)
    set_identity_1x1(block.embed_out)
    f_s = torch.rand(4, 2, 2)
    perm = torch.tensor([2, 0, 3, 1])
    attn = torch.eye(4)[perm]
    out = block.rearrange_style(f_s, attn, grid_hw=(2, 2)).squeeze(0)
    expected = f_s.reshape(4, 4)[:, perm].reshape(4, 2, 2)
    assert torch.allclose(out, expected, atol=1e-6)


def test_rearrange_uniform_rows_average(rng):
    block = make_block()
    f_s = torch.tensor(rng.normal(size=(4, 3, 3)), dtype=torch.float32)
    attn = torch.full((4, 9), 1.0 / 9)
    out = block.rearrange_style(f_s, attn, grid_hw=(2, 2)).squeeze(0)
    # oracle: direct averaging over all embedded style positions
    with torch.no_grad():
        h = block.embed_value(f_s.unsqueeze(0)).squeeze(0).reshape(4, 9)
        mean = h.mean(dim=1)[None, :, None, None]
        expected = block.embed_out(
            mean.expand(1, 4, 2, 2).clone()).squeeze(0)
    assert torch.allclose(out, expected, atol=1e-5)


def test_rearrange_single_style_position():
    block = make_block()
    f_s = torch.rand(4, 1, 1)
    attn = torch.ones(6, 1)
    out = block.rearrange_style(f_s, attn, grid_hw=(2, 3)).squeeze(0)
    with torch.no_grad():
        expected = block.embed_out(block.embed_value(f_s.unsqueeze(0)))
    assert torch.allclose(out, expected.squeeze(0).expand_as(out), atol=1e-6)


def test_rearrange_dimension_mismatch():
    block = make_block()
    with pytest.raises(ShapeError):
        block.rearrange_style(torch.rand(4, 2, 2), torch.rand(4, 5),
                              grid_hw=(2, 2))


def test_rearrange_convex_hull_brute_force(rng):
    # pre-output-embedding mix equals the attention-weighted sum computed
    # by an explicit double loop
    block = make_block()
    set_identity_1x1(block.embed_out)
    f_s = torch.tensor(rng.normal(size=(4, 2, 3)), dtype=torch.float32)
    f_c = torch.tensor(rng.normal(size=(4, 2, 2)), dtype=torch.float32)
    attn = block.attention_map(f_c, f_s).squeeze(0)
    out = block.rearrange_style(f_s, attn, grid_hw=(2, 2)).squeeze(0)
    with torch.no_grad():
        h = block.embed_value(f_s.unsqueeze(0)).squeeze(0).reshape(4, 6)
    expected = torch.zeros(4, 4)
    for i in range(4):
        for j in range(6):
            expected[:, i] += attn[i, j] * h[:, j]
    assert (out.reshape(4, 4) - expected).abs().max() < 1e-5


# -- space-aware weights and interpolation ------------------------------------

def test_weights_zero_kernels_give_half():
    block = make_block()
    for conv in block.dense:
        zero_conv(conv)
    w = block.space_aware_weights(torch.rand(4, 6, 6), torch.rand(4, 6, 6))
    assert torch.allclose(w, torch.full_like(w, 0.5))


def test_weights_range_and_shape(rng):
    block = make_block()
    w = block.space_aware_weights(
        torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32),
        torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32))
    assert w.shape == (1, 1, 6, 6)
    assert (w >= 0).all() and (w <= 1).all()


def test_weights_single_kernel_oracle(rng):
    block = make_block(dense_kernel_sizes=(3,))
    f_c = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    f_hat = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    w = block.space_aware_weights(f_c, f_hat)
    with torch.no_grad():
        pre = block.dense[0](torch.cat([f_c, f_hat]).unsqueeze(0))
        expected = torch.sigmoid(pre)
    assert torch.allclose(w, expected, atol=1e-6)


def test_weights_shape_mismatch():
    block = make_block()
    with pytest.raises(ShapeError):
        block.space_aware_weights(torch.rand(4, 6, 6), torch.rand(4, 5, 5))


def test_interpolate_endpoints(rng):
    f_c = torch.tensor(rng.normal(size=(4, 5, 5)))
    f_hat = torch.tensor(rng.normal(size=(4, 5, 5)))
    assert torch.equal(interpolate(f_c, f_hat, torch.ones(5, 5)), f_c)
    assert torch.equal(interpolate(f_c, f_hat, torch.zeros(5, 5)), f_hat)


def test_interpolate_midpoint(rng):
    f_c = torch.tensor(rng.normal(size=(4, 5, 5)))
    f_hat = torch.tensor(rng.normal(size=(4, 5, 5)))
    mid = interpolate(f_c, f_hat, torch.full((5, 5), 0.5))
    assert torch.allclose(mid, (f_c + f_hat) / 2, atol=1e-7)


def test_interpolate_rejects_out_of_range():
    with pytest.raises(ContractViolation):
        interpolate(torch.rand(4, 5, 5), torch.rand(4, 5, 5),
                    torch.full((5, 5), 1.5))


# -- full block and pipeline ---------------------------------------------------

def test_block_output_shape(rng):
    block = make_block()
    f_c = torch.tensor(rng.normal(size=(4, 6, 5)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 3, 7)), dtype=torch.float32)
    assert block(f_c, f_s).shape == (1, 4, 6, 5)


def test_block_forced_weight_returns_content(rng):
    block = make_block()
    f_c = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    out = block(f_c, f_s, force_weight=1.0)
    assert torch.allclose(out.squeeze(0), f_c, atol=1e-7)


def test_pipeline_stage_count_and_chaining(rng):
    torch.manual_seed(0)
    pipe = PamaPipeline(4, stages=3)
    f_c = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 4, 4)), dtype=torch.float32)
    outs = pipe(f_c, f_s)
    assert len(outs) == 3
    assert all(o.shape == (1, 4, 6, 6) for o in outs)
    # stage i+1 consumes stage i's output unchanged
    manual = pipe.blocks[1](outs[0], f_s.unsqueeze(0))
    assert torch.equal(manual, outs[1])


def test_pipeline_single_stage(rng):
    torch.manual_seed(0)
    pipe = PamaPipeline(4, stages=1)
    f_c = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    assert len(pipe(f_c, f_s)) == 1


def test_pipeline_rejects_zero_stages():
    with pytest.raises(ConfigurationError):
        PamaPipeline(4, stages=0)


def test_pipeline_forced_weight_chain_identity(rng):
    torch.manual_seed(0)
    pipe = PamaPipeline(4, stages=3)
    f_c = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    outs = pipe(f_c, f_s, force_weight=1.0)
    assert torch.allclose(outs[-1].squeeze(0), f_c, atol=1e-6)


def test_blocked_attention_matches_dense(rng):
    f_c = torch.tensor(rng.normal(size=(4, 6, 6)), dtype=torch.float32)
    f_s = torch.tensor(rng.normal(size=(4, 5, 5)), dtype=torch.float32)
    dense = make_block(seed=3)
    blocked = make_block(seed=3, attention_budget=16)
    assert torch.allclose(dense._rearranged(f_c, f_s),
                          blocked._rearranged(f_c, f_s), atol=1e-6)


def test_resolution_independence(rng):
    block = make_block()
    for hc, wc, hs, ws in [(2, 9, 3, 3), (7, 2, 2, 11)]:
        f_c = torch.tensor(rng.normal(size=(4, hc, wc)), dtype=torch.float32)
        f_s = torch.tensor(rng.normal(size=(4, hs, ws)), dtype=torch.float32)
        assert block(f_c, f_s).shape == (1, 4, hc, wc)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_attention_row_stochastic_property(seed):
    g = np.random.default_rng(seed)
    block = make_block(seed=seed % 97)
    f_c = torch.tensor(g.normal(size=(4, 3, 4)), dtype=torch.float32)
    f_s = torch.tensor(g.normal(size=(4, 4, 2)), dtype=torch.float32)
    attn = block.attention_map(f_c, f_s)
    assert (attn.sum(-1) - 1).abs().max() < 1e-5
    assert (attn > 0).all()
