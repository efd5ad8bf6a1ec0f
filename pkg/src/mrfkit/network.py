"""Reconstruction network: a shallow state-space encoder, gated
spatial-temporal fusion blocks, a deeper state-space encoder, and a blending
prediction head mapping compressed fingerprints to T1/T2 maps.

Variants (the CLI's --variant values): "full" is the complete pipeline; "A1"
drops the deep encoder; "A2" drops the fusion blocks; "A3" keeps only the
first encoder; "A4" swaps the first encoder's scan groups for residual
convolution blocks of matched depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .ssm import ResidualScanGroup
from .tensor import Tensor, concat, gelu, reshape, sigmoid

LATENT_CHANNELS = 64

VARIANTS = ("full", "A1", "A2", "A3", "A4")


@dataclass
class NetworkConfig:
    in_channels: int = 100  # 2r from the compression stage
    out_channels: int = 2
    ife_groups: int = 3
    ife_blocks: int = 2
    ife_embed: int = 96
    ife_state: int = 10
    dsfe_groups: int = 4
    dsfe_blocks: int = 6
    dsfe_embed: int = 64
    dsfe_state: int = 10
    expand: float = 1.2
    fusion_blocks: int = 2
    gate_kernels: tuple = (1, 3, 5, 7)
    mlp_expand: int = 4

    def __post_init__(self):
        if self.out_channels != 2:
            raise ValueError("network predicts exactly (T1, T2)")
        if any(k % 2 == 0 for k in self.gate_kernels):
            raise ValueError("gate kernel sizes must be odd")

    @classmethod
    def desk(cls, in_channels: int = 20) -> "NetworkConfig":
        """Small preset: shrunken embeddings and state, full depth."""
        return cls(
            in_channels=in_channels,
            ife_embed=16,
            ife_state=4,
            dsfe_embed=16,
            dsfe_state=4,
        )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "ife_groups": self.ife_groups,
            "ife_blocks": self.ife_blocks,
            "ife_embed": self.ife_embed,
            "ife_state": self.ife_state,
            "dsfe_groups": self.dsfe_groups,
            "dsfe_blocks": self.dsfe_blocks,
            "dsfe_embed": self.dsfe_embed,
            "dsfe_state": self.dsfe_state,
            "expand": self.expand,
            "fusion_blocks": self.fusion_blocks,
            "gate_kernels": list(self.gate_kernels),
            "mlp_expand": self.mlp_expand,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if "gate_kernels" in d:
            d["gate_kernels"] = tuple(d["gate_kernels"])
        return cls(**d)


# -- gated fusion block -----------------------------------------------------------


class GatedFusionBlock(nn.Module):
    """Dual-path feature processing with a spatially varying convex gate.

    The spatial path is a depthwise 3x3 with group norm and GELU; the temporal
    path treats every position as a token and runs a layer-normed MLP over
    channels; a multi-scale gate blends them per voxel and channel. The fused
    map passes a lightweight refinement and re-enters through a learnable
    residual scale initialized to 1.
    """

    def __init__(self, channels: int, rng: np.random.Generator, kernels=(1, 3, 5, 7), mlp_expand: int = 4):
        c = channels
        self.channels = c
        groups = nn.norm_groups(c)
        # spatial path
        self.dw_w = nn.Parameter(nn.he_normal(rng, (c, 3, 3), 9))
        self.dw_b = nn.Parameter(np.zeros(c))
        self.gn_gamma = nn.Parameter(np.ones(c))
        self.gn_beta = nn.Parameter(np.zeros(c))
        self.groups = groups
        # temporal path
        self.ln_gamma = nn.Parameter(np.ones(c))
        self.ln_beta = nn.Parameter(np.zeros(c))
        self.mlp_w1 = nn.Parameter(nn.he_normal(rng, (mlp_expand * c, c), c))
        self.mlp_b1 = nn.Parameter(np.zeros(mlp_expand * c))
        self.mlp_w2 = nn.Parameter(nn.he_normal(rng, (c, mlp_expand * c), mlp_expand * c))
        self.mlp_b2 = nn.Parameter(np.zeros(c))
        # multi-scale gate
        self.kernels = tuple(kernels)
        self.gate_dw_w = [nn.Parameter(nn.he_normal(rng, (c, k, k), k * k)) for k in self.kernels]
        self.gate_dw_b = [nn.Parameter(np.zeros(c)) for _ in self.kernels]
        self.gate_w1 = nn.Parameter(nn.he_normal(rng, (c, len(kernels) * c, 1, 1), len(kernels) * c))
        self.gate_b1 = nn.Parameter(np.zeros(c))
        self.gate_w2 = nn.Parameter(nn.he_normal(rng, (c, c, 1, 1), c))
        self.gate_b2 = nn.Parameter(np.zeros(c))
        # refinement
        self.ref_dw_w = nn.Parameter(nn.he_normal(rng, (c, 3, 3), 9))
        self.ref_dw_b = nn.Parameter(np.zeros(c))
        self.ref_gn_gamma = nn.Parameter(np.ones(c))
        self.ref_gn_beta = nn.Parameter(np.zeros(c))
        self.ref_pw_w = nn.Parameter(nn.he_normal(rng, (c, c, 1, 1), c))
        self.ref_pw_b = nn.Parameter(np.zeros(c))
        self.alpha = nn.Parameter(np.asarray(1.0))

    def spatial_path(self, f: Tensor) -> Tensor:
        return gelu(
            nn.group_norm(
                nn.depthwise_conv2d(f, self.dw_w, self.dw_b), self.gn_gamma, self.gn_beta, self.groups
            )
        )

    def temporal_path(self, f: Tensor) -> Tensor:
        b, c, h, w = f.shape
        tokens = reshape(f.transpose(0, 2, 3, 1), (b * h * w, c))
        tokens = nn.layer_norm(tokens, self.ln_gamma, self.ln_beta)
        hidden = gelu(nn.linear(tokens, self.mlp_w1, self.mlp_b1))
        out = nn.linear(hidden, self.mlp_w2, self.mlp_b2)
        return reshape(out, (b, h, w, c)).transpose(0, 3, 1, 2)

    def gate_map(self, f: Tensor) -> Tensor:
        scales = [
            nn.depthwise_conv2d(f, w, b) for w, b in zip(self.gate_dw_w, self.gate_dw_b)
        ]
        stacked = concat(scales, axis=1)
        hidden = gelu(nn.conv2d(stacked, self.gate_w1, self.gate_b1))
        return sigmoid(nn.conv2d(hidden, self.gate_w2, self.gate_b2))

    @staticmethod
    def fuse(gate: Tensor, spatial: Tensor, temporal: Tensor) -> Tensor:
        if gate.shape != spatial.shape or spatial.shape != temporal.shape:
            raise ValueError("gate and path shapes must agree")
        return gate * spatial + (1.0 - gate) * temporal

    def refinement(self, fused: Tensor) -> Tensor:
        local = nn.depthwise_conv2d(fused, self.ref_dw_w, self.ref_dw_b)
        normed = nn.group_norm(local, self.ref_gn_gamma, self.ref_gn_beta, self.groups)
        return nn.conv2d(gelu(normed), self.ref_pw_w, self.ref_pw_b)

    def enhanced(self, f: Tensor) -> Tensor:
        fused = self.fuse(self.gate_map(f), self.spatial_path(f), self.temporal_path(f))
        return self.refinement(fused)

    def forward(self, f: Tensor) -> Tensor:
        return self.alpha * self.enhanced(f) + f


# -- encoders ----------------------------------------------------------------------


class SsmEncoder(nn.Module):
    """Embedding conv, residual scan groups, and a 1x1 projection out."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        n_groups: int,
        blocks_per_group: int,
        embed: int,
        state_size: int,
        expand: float,
        rng: np.random.Generator,
    ):
        self.in_channels = in_channels
        self.conv_in_w = nn.Parameter(nn.he_normal(rng, (embed, in_channels, 3, 3), in_channels * 9))
        self.conv_in_b = nn.Parameter(np.zeros(embed))
        self.groups = [
            ResidualScanGroup(embed, blocks_per_group, state_size, expand, rng)
            for _ in range(n_groups)
        ]
        self.conv_out_w = nn.Parameter(nn.he_normal(rng, (out_channels, embed, 1, 1), embed))
        self.conv_out_b = nn.Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        y = nn.conv2d(x, self.conv_in_w, self.conv_in_b)
        for group in self.groups:
            y = group(y)
        return nn.conv2d(y, self.conv_out_w, self.conv_out_b)


class ConvResBlock(nn.Module):
    """3x3 -> GELU -> 3x3 with a learnable residual scale."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.w1 = nn.Parameter(nn.he_normal(rng, (channels, channels, 3, 3), channels * 9))
        self.b1 = nn.Parameter(np.zeros(channels))
        self.w2 = nn.Parameter(nn.he_normal(rng, (channels, channels, 3, 3), channels * 9))
        self.b2 = nn.Parameter(np.zeros(channels))
        self.scale = nn.Parameter(np.asarray(1.0))

    def forward(self, x: Tensor) -> Tensor:
        return x + self.scale * nn.conv2d(gelu(nn.conv2d(x, self.w1, self.b1)), self.w2, self.b2)


class ConvResGroup(nn.Module):
    def __init__(self, channels: int, n_blocks: int, rng: np.random.Generator):
        self.blocks = [ConvResBlock(channels, rng) for _ in range(n_blocks)]
        self.conv_w = nn.Parameter(nn.he_normal(rng, (channels, channels, 3, 3), channels * 9))
        self.conv_b = nn.Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        y = x
        for block in self.blocks:
            y = block(y)
        return x + nn.conv2d(y, self.conv_w, self.conv_b)


class ConvEncoder(nn.Module):
    """Convolutional stand-in for the scan encoder at matched depth (variant A4)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        n_groups: int,
        blocks_per_group: int,
        embed: int,
        rng: np.random.Generator,
    ):
        self.in_channels = in_channels
        self.conv_in_w = nn.Parameter(nn.he_normal(rng, (embed, in_channels, 3, 3), in_channels * 9))
        self.conv_in_b = nn.Parameter(np.zeros(embed))
        self.groups = [ConvResGroup(embed, blocks_per_group, rng) for _ in range(n_groups)]
        self.conv_out_w = nn.Parameter(nn.he_normal(rng, (out_channels, embed, 1, 1), embed))
        self.conv_out_b = nn.Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        y = nn.conv2d(x, self.conv_in_w, self.conv_in_b)
        for group in self.groups:
            y = group(y)
        return nn.conv2d(y, self.conv_out_w, self.conv_out_b)


# -- prediction head ----------------------------------------------------------------


class PredictionHead(nn.Module):
    """Blend a shallow skip of the raw input with deep features, then project
    to the two standardized parameter maps; blend weight initialized to 0.5."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.skip_w = nn.Parameter(
            nn.he_normal(rng, (LATENT_CHANNELS, in_channels, 3, 3), in_channels * 9)
        )
        self.skip_b = nn.Parameter(np.zeros(LATENT_CHANNELS))
        self.blend = nn.Parameter(np.asarray(0.5))
        self.out_w = nn.Parameter(nn.he_normal(rng, (out_channels, LATENT_CHANNELS, 1, 1), LATENT_CHANNELS))
        self.out_b = nn.Parameter(np.zeros(out_channels))

    def skip(self, x_raw: Tensor) -> Tensor:
        return nn.conv2d(x_raw, self.skip_w, self.skip_b)

    def forward(self, x_raw: Tensor, deep: Tensor) -> Tensor:
        blended = self.blend * self.skip(x_raw) + (1.0 - self.blend) * deep
        return nn.conv2d(blended, self.out_w, self.out_b)


# -- full model ----------------------------------------------------------------------


class ReconNet(nn.Module):
    """End-to-end map reconstruction network with ablation variants."""

    def __init__(self, cfg: NetworkConfig, variant: str = "full", seed: int = 0, dtype=np.float64):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.variant = variant
        if variant == "A4":
            self.encoder = ConvEncoder(
                cfg.in_channels, LATENT_CHANNELS, cfg.ife_groups, cfg.ife_blocks, cfg.ife_embed, rng
            )
        else:
            self.encoder = SsmEncoder(
                cfg.in_channels, LATENT_CHANNELS, cfg.ife_groups, cfg.ife_blocks,
                cfg.ife_embed, cfg.ife_state, cfg.expand, rng,
            )
        if variant in ("full", "A1", "A4"):
            self.fusion = [
                GatedFusionBlock(LATENT_CHANNELS, rng, cfg.gate_kernels, cfg.mlp_expand)
                for _ in range(cfg.fusion_blocks)
            ]
        else:
            self.fusion = []
        if variant in ("full", "A2", "A4"):
            self.deep = SsmEncoder(
                LATENT_CHANNELS, LATENT_CHANNELS, cfg.dsfe_groups, cfg.dsfe_blocks,
                cfg.dsfe_embed, cfg.dsfe_state, cfg.expand, rng,
            )
        else:
            self.deep = None
        self.head = PredictionHead(cfg.in_channels, cfg.out_channels, rng)
        if dtype != np.float64:
            self.astype(dtype)

    def features(self, x: Tensor) -> Tensor:
        latent = self.encoder(x)
        for block in self.fusion:
            latent = block(latent)
        if self.deep is not None:
            latent = self.deep(latent)
        return latent

    def forward(self, x: Tensor) -> Tensor:
        return self.head(x, self.features(x))


def build_variant(name: str, cfg: NetworkConfig, seed: int = 0, dtype=np.float64) -> ReconNet:
    return ReconNet(cfg, variant=name, seed=seed, dtype=dtype)
