"""Nested U-structure: every stage of the outer U is itself a residual U-block (RSU)."""

from __future__ import annotations

import numpy as np

from ..autodiff import Conv3d, ConvBlock, Module, Tensor, UpConv, concat
from ..autodiff import functional as F
from ..volume import HORIZON_MONTHS, ShapeMismatchError
from .common import ForecastModel, ModelSpec, ResidualHead
from .unet import level_channels


class RSUBlock(Module):
    """Residual U-block of the given height.

    ``out = inner_U(conv_in(x)) + conv_in(x)``.  Height 1 has no inner pooling
    and reduces to a single conv block on top of the residual branch.
    """

    def __init__(self, rng, height: int, cin: int, cmid: int, cout: int):
        if height < 1:
            raise ValueError("RSU height must be >= 1")
        self.height = height
        self.conv_in = ConvBlock(rng, cin, cout)
        if height == 1:
            self.single = ConvBlock(rng, cout, cout)
            return
        self.enc = [ConvBlock(rng, cout, cmid)] + [ConvBlock(rng, cmid, cmid) for _ in range(height - 1)]
        self.bottom = ConvBlock(rng, cmid, cmid)
        self.dec = [ConvBlock(rng, 2 * cmid, cmid) for _ in range(height - 1)] + [ConvBlock(rng, 2 * cmid, cout)]

    def min_extent(self) -> int:
        return 2 ** (self.height - 1)

    def forward(self, x: Tensor) -> Tensor:
        if min(x.shape[2:]) < self.min_extent():
            raise ShapeMismatchError(f"RSU height {self.height} needs spatial dims >= {self.min_extent()}, got {x.shape[2:]}")
        hxin = self.conv_in(x)
        if self.height == 1:
            return self.single(hxin) + hxin
        feats = []
        h = hxin
        for i, block in enumerate(self.enc):
            if i:
                h = F.avg_pool3d(h, 2)
            h = block(h)
            feats.append(h)
        d = self.bottom(h)
        for i, block in enumerate(self.dec):
            skip = feats[len(feats) - 1 - i]
            if i:
                d = F.upsample3d_nearest(d, 2)
            d = block(concat([d, skip], axis=1))
        return d + hxin

    @property
    def final_conv(self) -> Conv3d:
        return self.single.conv if self.height == 1 else self.dec[-1].conv


def u2net_rsu_block(x: Tensor, height: int, seed: int = 0, cmid: int | None = None) -> Tensor:
    """Apply a freshly initialized channel-preserving RSU block of ``height`` to ``x``."""
    c = x.shape[1]
    block = RSUBlock(np.random.default_rng(seed), height, c, cmid or max(c // 2, 4), c)
    return block(x)


class U2Net(ForecastModel):
    def __init__(self, rng, spec: ModelSpec, input_shape):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        d = spec.depth
        ch = level_channels(spec)
        mid = [max(c // 2, 4) for c in ch]
        self.enc = []
        prev = 1
        for i in range(d):
            self.enc.append(RSUBlock(rng, d + 1 - i, prev, mid[i], ch[i]))
            prev = ch[i]
        self.bottom = RSUBlock(rng, 1, prev, mid[d], ch[d])
        self.ups = []
        self.dec = []
        self.sides = []
        for i in reversed(range(d)):
            self.ups.append(UpConv(rng, ch[i + 1], ch[i]))
            self.dec.append(RSUBlock(rng, d + 1 - i, 2 * ch[i], mid[i], ch[i]))
            self.sides.append(Conv3d(rng, ch[i], 1, 3))
        self.head = ResidualHead(rng, d)

    def forward(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Tensor:
        d = self.spec.depth
        skips = []
        h = x
        for i, block in enumerate(self.enc):
            h = block(h)
            skips.append(h)
            h = F.avg_pool3d(h, 2)
        h = self.bottom(h)
        side_maps = []
        for j, (up, block, side) in enumerate(zip(self.ups, self.dec, self.sides)):
            level = d - 1 - j
            h = block(concat([up(h), skips[level]], axis=1))
            s = side(h)
            side_maps.append(F.upsample3d_nearest(s, 2**level) if level else s)
        return self.head(concat(side_maps, axis=1), x)
