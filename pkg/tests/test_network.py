"""Gated fusion blocks, encoders, prediction head, and ablation variants."""

import numpy as np
import pytest

from mrfkit import nn
from mrfkit.gradcheck import grad_check
from mrfkit.network import (
    GatedFusionBlock,
    NetworkConfig,
    PredictionHead,
    ReconNet,
    SsmEncoder,
    build_variant,
)
from mrfkit.tensor import Tensor, no_grad


@pytest.fixture
def block():
    return GatedFusionBlock(8, np.random.default_rng(0))


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


# -- spatial path --------------------------------------------------------------


def test_spatial_path_kills_constants(block):
    # identity depthwise kernel, unit affine: group norm of a constant is zero
    block.dw_w.data = np.zeros_like(block.dw_w.data)
    block.dw_w.data[:, 1, 1] = 1.0
    block.dw_b.data = np.zeros_like(block.dw_b.data)
    x = Tensor(np.full((1, 8, 5, 5), 3.7))
    assert np.abs(block.spatial_path(x).data).max() < 1e-12


def test_spatial_path_staged_composition(block):
    x = Tensor(rand((2, 8, 5, 5), 1))
    with no_grad():
        whole = block.spatial_path(x).data
        from mrfkit.tensor import gelu

        staged = gelu(
            nn.group_norm(
                nn.depthwise_conv2d(x, block.dw_w, block.dw_b),
                block.gn_gamma,
                block.gn_beta,
                block.groups,
            )
        ).data
    assert np.abs(whole - staged).max() < 1e-12


def test_spatial_path_group_confinement(block):
    # 8 channels, max(8//8,1)=1 group: all channels share statistics, but the
    # depthwise stage itself never mixes channels
    x = rand((1, 8, 5, 5), 2)
    bumped = x.copy()
    bumped[0, 0] += 1.0
    with no_grad():
        a = nn.depthwise_conv2d(Tensor(x), block.dw_w, block.dw_b).data
        b = nn.depthwise_conv2d(Tensor(bumped), block.dw_w, block.dw_b).data
    assert np.array_equal(a[0, 1:], b[0, 1:])
    assert not np.array_equal(a[0, 0], b[0, 0])


def test_spatial_group_norm_isolation_across_groups():
    blk = GatedFusionBlock(16, np.random.default_rng(3))  # 2 groups of 8
    x = rand((1, 16, 4, 4), 3)
    bumped = x.copy()
    bumped[0, 0] += 2.0
    with no_grad():
        a = blk.spatial_path(Tensor(x)).data
        b = blk.spatial_path(Tensor(bumped)).data
    assert np.array_equal(a[0, 8:], b[0, 8:])  # second group untouched


# -- temporal path --------------------------------------------------------------


def test_temporal_path_position_independence(block):
    x = np.zeros((1, 8, 2, 2))
    vec = rand(8, 4)
    x[0, :, 0, 0] = vec
    x[0, :, 1, 1] = vec
    out = block.temporal_path(Tensor(x)).data
    np.testing.assert_array_equal(out[0, :, 0, 0], out[0, :, 1, 1])


def test_temporal_path_zero_weights(block):
    for p in (block.mlp_w1, block.mlp_b1, block.mlp_w2, block.mlp_b2):
        p.data = np.zeros_like(p.data)
    out = block.temporal_path(Tensor(rand((1, 8, 3, 3), 5)))
    assert np.abs(out.data).max() == 0.0


def test_temporal_path_matches_per_position_loop(block):
    x = rand((1, 8, 3, 3), 6)
    with no_grad():
        out = block.temporal_path(Tensor(x)).data
    for i in range(3):
        for j in range(3):
            v = x[0, :, i, j]
            mu, var = v.mean(), v.var()
            vh = (v - mu) / np.sqrt(var + nn.NORM_EPS)
            vh = vh * block.ln_gamma.data + block.ln_beta.data
            h = block.mlp_w1.data @ vh + block.mlp_b1.data
            from scipy.special import erf

            h = h * 0.5 * (1 + erf(h / np.sqrt(2)))
            o = block.mlp_w2.data @ h + block.mlp_b2.data
            assert np.abs(out[0, :, i, j] - o).max() < 1e-12


# -- gate -------------------------------------------------------------------------


def test_gate_strictly_inside_unit_interval(block):
    g = block.gate_map(Tensor(rand((2, 8, 6, 6), 7))).data
    assert g.min() > 0.0 and g.max() < 1.0


def test_gate_zero_final_conv_is_half(block):
    block.gate_w2.data = np.zeros_like(block.gate_w2.data)
    block.gate_b2.data = np.zeros_like(block.gate_b2.data)
    g = block.gate_map(Tensor(rand((1, 8, 4, 4), 8))).data
    np.testing.assert_allclose(g, 0.5)


def test_gate_saturates_with_large_bias(block):
    block.gate_w2.data = np.zeros_like(block.gate_w2.data)
    block.gate_b2.data = np.full_like(block.gate_b2.data, 20.0)
    g = block.gate_map(Tensor(rand((1, 8, 4, 4), 9))).data
    assert np.abs(g - 1.0).max() < 1e-8


# -- fusion ------------------------------------------------------------------------


def test_fuse_endpoints_and_midpoint():
    s, t = Tensor(rand((1, 2, 3, 3), 10)), Tensor(rand((1, 2, 3, 3), 11))
    ones = Tensor(np.ones((1, 2, 3, 3)))
    zeros = Tensor(np.zeros((1, 2, 3, 3)))
    half = Tensor(np.full((1, 2, 3, 3), 0.5))
    np.testing.assert_array_equal(GatedFusionBlock.fuse(ones, s, t).data, s.data)
    np.testing.assert_array_equal(GatedFusionBlock.fuse(zeros, s, t).data, t.data)
    mid = GatedFusionBlock.fuse(half, s, t).data
    assert np.abs(mid - 0.5 * (s.data + t.data)).max() < 1e-14


def test_fuse_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        GatedFusionBlock.fuse(
            Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 2, 3, 2)))
        )


def test_fused_output_within_path_envelope(block):
    x = Tensor(rand((1, 8, 5, 5), 12))
    with no_grad():
        s = block.spatial_path(x).data
        t = block.temporal_path(x).data
        fused = block.fuse(block.gate_map(x), Tensor(s), Tensor(t)).data
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    assert np.all(fused >= lo - 1e-12) and np.all(fused <= hi + 1e-12)


# -- whole fusion block ---------------------------------------------------------------


def test_block_alpha_zero_identity(block):
    block.alpha.data = np.asarray(0.0)
    x = Tensor(rand((1, 8, 4, 4), 13))
    np.testing.assert_array_equal(block(x).data, x.data)


def test_block_zero_refinement_identity(block):
    block.ref_pw_w.data = np.zeros_like(block.ref_pw_w.data)
    block.ref_pw_b.data = np.zeros_like(block.ref_pw_b.data)
    x = Tensor(rand((1, 8, 4, 4), 14))
    np.testing.assert_array_equal(block(x).data, x.data)


def test_block_decomposition(block):
    x = Tensor(rand((2, 8, 4, 4), 15))
    with no_grad():
        out = block(x).data
        enh = block.enhanced(x).data
    assert np.abs((out - x.data) - block.alpha.data * enh).max() < 1e-12


def test_block_gradient():
    blk = GatedFusionBlock(8, np.random.default_rng(16))
    x = Tensor(rand((1, 8, 4, 4), 17))
    assert grad_check(lambda t: blk(t).sum(), x, eps=1e-5, sample=48) < 1e-6


# -- encoders ---------------------------------------------------------------------------


def small_cfg():
    return NetworkConfig(
        in_channels=6,
        ife_groups=2,
        ife_blocks=1,
        ife_embed=8,
        ife_state=2,
        dsfe_groups=1,
        dsfe_blocks=2,
        dsfe_embed=8,
        dsfe_state=2,
        fusion_blocks=1,
    )


def test_encoder_output_shape():
    cfg = small_cfg()
    enc = SsmEncoder(6, 64, cfg.ife_groups, cfg.ife_blocks, 8, 2, 1.2, np.random.default_rng(18))
    out = enc(Tensor(rand((2, 6, 5, 7), 19)))
    assert out.shape == (2, 64, 5, 7)


def test_encoder_channel_mismatch():
    enc = SsmEncoder(6, 64, 1, 1, 8, 2, 1.2, np.random.default_rng(20))
    with pytest.raises(ValueError):
        enc(Tensor(rand((1, 5, 4, 4), 21)))


def test_encoder_zero_input_zero_bias():
    enc = SsmEncoder(6, 64, 1, 1, 8, 2, 1.2, np.random.default_rng(22))
    out = enc(Tensor(np.zeros((1, 6, 4, 4))))
    assert np.abs(out.data).max() == 0.0  # all biases start at zero


def test_encoder_staged_composition():
    enc = SsmEncoder(6, 16, 2, 1, 8, 2, 1.2, np.random.default_rng(23))
    x = Tensor(rand((1, 6, 4, 4), 24))
    with no_grad():
        whole = enc(x).data
        y = nn.conv2d(x, enc.conv_in_w, enc.conv_in_b)
        for group in enc.groups:
            y = group(y)
        staged = nn.conv2d(y, enc.conv_out_w, enc.conv_out_b).data
    assert np.abs(whole - staged).max() < 1e-12


# -- prediction head ---------------------------------------------------------------------


def test_head_blend_extremes():
    rng = np.random.default_rng(25)
    head = PredictionHead(6, 2, rng)
    x = Tensor(rand((1, 6, 4, 4), 26))
    deep = Tensor(rand((1, 64, 4, 4), 27))
    head.blend.data = np.asarray(1.0)
    base = head(x, deep).data
    other = head(x, Tensor(rand((1, 64, 4, 4), 28))).data
    np.testing.assert_array_equal(base, other)  # deep ignored at blend 1
    head.blend.data = np.asarray(0.0)
    base = head(x, deep).data
    other = head(Tensor(rand((1, 6, 4, 4), 29)), deep).data
    np.testing.assert_array_equal(base, other)  # skip ignored at blend 0


def test_head_blend_midpoint_equal_inputs():
    rng = np.random.default_rng(30)
    head = PredictionHead(6, 2, rng)
    head.blend.data = np.asarray(0.5)
    x = Tensor(rand((1, 6, 4, 4), 31))
    with no_grad():
        skip = head.skip(x)
        blended = head(x, skip).data
        direct = nn.conv2d(skip, head.out_w, head.out_b).data
    assert np.abs(blended - direct).max() < 1e-14


# -- variants ----------------------------------------------------------------------------


def test_all_variants_emit_two_channel_maps():
    cfg = small_cfg()
    x = Tensor(rand((2, 6, 8, 8), 32))
    for name in ("full", "A1", "A2", "A3", "A4"):
        net = build_variant(name, cfg, seed=1)
        with no_grad():
            out = net(x)
        assert out.shape == (2, 2, 8, 8), name


def test_variant_parameter_counts():
    cfg = small_cfg()
    full = build_variant("full", cfg, seed=2)
    a3 = build_variant("A3", cfg, seed=2)
    assert a3.param_count() < full.param_count()


def test_a2_equals_full_with_alpha_zero():
    cfg = small_cfg()
    full = build_variant("full", cfg, seed=3)
    a2 = build_variant("A2", cfg, seed=4)
    a2.load_state_dict(full.state_dict(), strict=False)
    for blk in full.fusion:
        blk.alpha.data = np.asarray(0.0)
    x = Tensor(rand((1, 6, 8, 8), 33))
    with no_grad():
        y_full = full(x).data
        y_a2 = a2(x).data
    assert np.abs(y_full - y_a2).max() < 1e-12


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        build_variant("A9", small_cfg())


def test_desk_preset_keeps_depth():
    cfg = NetworkConfig.desk(in_channels=20)
    assert cfg.ife_embed == 16 and cfg.dsfe_embed == 16
    assert cfg.ife_state == 4 and cfg.dsfe_state == 4
    assert (cfg.ife_groups, cfg.ife_blocks) == (3, 2)
    assert (cfg.dsfe_groups, cfg.dsfe_blocks) == (4, 6)


def test_config_roundtrip_and_validation():
    cfg = NetworkConfig.desk()
    assert NetworkConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        NetworkConfig(out_channels=3)
    with pytest.raises(ValueError):
        NetworkConfig(gate_kernels=(2, 3))
