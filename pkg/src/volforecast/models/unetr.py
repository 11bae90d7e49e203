"""Transformer encoder over volume patches with a convolutional decoder."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Conv3d, ConvBlock, DoubleConv, Module, Parameter, Tensor, TransformerLayer, UpConv, concat
from ..autodiff import functional as F
from ..volume import HORIZON_MONTHS, ShapeMismatchError
from .common import ForecastModel, ModelSpec, ResidualHead


class ViTEncoder(Module):
    def __init__(self, rng, spec: ModelSpec, input_shape):
        p = spec.patch_size
        self.patch_size = p
        self.grid = tuple(s // p for s in input_shape)
        self.n_tokens = int(np.prod(self.grid))
        e = spec.embed_dim
        self.patch_embed = Conv3d(rng, 1, e, kernel=p, stride=p, padding=0)
        self.pos = Parameter(rng.uniform(-0.02, 0.02, size=(1, self.n_tokens, e)).astype(np.float32))
        self.layers = [TransformerLayer(rng, e, spec.heads) for _ in range(spec.transformer_layers)]

    def tokens(self, x: Tensor) -> Tensor:
        p = self.patch_size
        if any(s % p for s in x.shape[2:]):
            raise ShapeMismatchError(f"dims {x.shape[2:]} not divisible by patch size {p}")
        g = self.patch_embed(x)
        n, e = g.shape[:2]
        return g.reshape(n, e, -1).transpose(0, 2, 1)

    def forward(self, x: Tensor) -> list[Tensor]:
        """Token sequences (N, T, E) after every transformer layer."""
        h = self.tokens(x) + self.pos
        taps = []
        for layer in self.layers:
            h = layer(h)
            taps.append(h)
        return taps

    def to_grid(self, seq: Tensor) -> Tensor:
        n, t, e = seq.shape
        return seq.transpose(0, 2, 1).reshape((n, e) + self.grid)


def unetr_encode(model: "UNETR", x: Tensor) -> list[Tensor]:
    return model.vit(x)


class UNETR(ForecastModel):
    def __init__(self, rng, spec: ModelSpec, input_shape):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.vit = ViTEncoder(rng, spec, input_shape)
        levels = int(math.log2(spec.patch_size))
        self.levels = levels
        e = spec.embed_dim
        n_layers = spec.transformer_layers
        ch = [spec.base_channels * 2**i for i in range(levels + 1)]

        # taps feeding intermediate resolutions; the rest are fused at the token grid
        self.skip_taps = [min(n_layers - 1, max(0, round(n_layers * lvl / levels) - 1)) for lvl in range(1, levels)]
        self.grid_taps = [j for j in range(n_layers) if j not in self.skip_taps or j == n_layers - 1]

        self.input_skip = DoubleConv(rng, 1, ch[0])
        self.tap_chains = []
        for lvl in range(1, levels):
            chain = [UpConv(rng, e if k == 0 else ch[levels - k], ch[levels - k - 1]) for k in range(levels - lvl)]
            self.tap_chains.append(chain)
        self.grid_fuse = Conv3d(rng, e * len(self.grid_taps), ch[levels], kernel=1)
        self.grid_block = ConvBlock(rng, ch[levels], ch[levels])
        self.ups = []
        self.blocks = []
        for lvl in reversed(range(levels)):
            self.ups.append(UpConv(rng, ch[lvl + 1], ch[lvl]))
            self.blocks.append(DoubleConv(rng, 2 * ch[lvl], ch[lvl]))
        self.head = ResidualHead(rng, ch[0])

    def forward(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Tensor:
        taps = self.vit(x)
        grids = [self.vit.to_grid(t) for t in taps]
        skips = {0: self.input_skip(x)}
        for lvl, (tap, chain) in enumerate(zip(self.skip_taps, self.tap_chains), start=1):
            h = grids[tap]
            for up in chain:
                h = up(h)
            skips[lvl] = h
        h = self.grid_block(self.grid_fuse(concat([grids[j] for j in self.grid_taps], axis=1)))
        for lvl, up, block in zip(reversed(range(self.levels)), self.ups, self.blocks):
            h = block(concat([up(h), skips[lvl]], axis=1))
        return self.head(h, x)
