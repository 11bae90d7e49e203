"""Encoder-decoder with skip connections, and its time-conditioned variant."""

from __future__ import annotations

from ..autodiff import DoubleConv, Module, Tensor, UpConv, concat
from ..autodiff import functional as F
from ..volume import HORIZON_MONTHS
from .common import ForecastModel, ModelSpec, ResidualHead, TimeEmbedding


def level_channels(spec: ModelSpec) -> list[int]:
    """Channels per level 0..depth (index depth is the bottleneck)."""
    return [spec.base_channels * 2**i for i in range(spec.depth + 1)]


class Encoder(Module):
    """DoubleConv + pool per level, then a bottleneck DoubleConv."""

    def __init__(self, rng, spec: ModelSpec, cin: int = 1):
        ch = level_channels(spec)
        self.levels = []
        prev = cin
        for c in ch[:-1]:
            self.levels.append(DoubleConv(rng, prev, c))
            prev = c
        self.bottleneck = DoubleConv(rng, prev, ch[-1])

    def forward(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        skips = []
        h = x
        for block in self.levels:
            h = block(h)
            skips.append(h)
            h = F.avg_pool3d(h, 2)
        return skips, self.bottleneck(h)

    def features(self, x: Tensor) -> list[Tensor]:
        skips, z = self.forward(x)
        return skips + [z]


class Decoder(Module):
    def __init__(self, rng, spec: ModelSpec):
        ch = level_channels(spec)
        self.ups = []
        self.blocks = []
        for i in reversed(range(spec.depth)):
            self.ups.append(UpConv(rng, ch[i + 1], ch[i]))
            self.blocks.append(DoubleConv(rng, 2 * ch[i], ch[i]))

    def forward(self, skips: list[Tensor], z: Tensor) -> Tensor:
        h = z
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            h = block(concat([up(h), skip], axis=1))
        return h


class UNet(ForecastModel):
    def __init__(self, rng, spec: ModelSpec, input_shape):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.encoder = Encoder(rng, spec)
        self.decoder = Decoder(rng, spec)
        self.head = ResidualHead(rng, spec.base_channels)

    def forward(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Tensor:
        skips, z = self.encoder(x)
        return self.head(self.decoder(skips, z), x)


class TEUNet(UNet):
    """UNet whose bottleneck receives a learned embedding of (start month, horizon)."""

    def __init__(self, rng, spec: ModelSpec, input_shape):
        super().__init__(rng, spec, input_shape)
        self.time = TimeEmbedding(rng, spec.time_embed_dim, level_channels(spec)[-1], n_scalars=2)

    def forward(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Tensor:
        skips, z = self.encoder(x)
        emb = self.time(t1 / 120.0, horizon / 24.0)
        z = z + F.broadcast_channels(emb, z.shape[2:])
        return self.head(self.decoder(skips, z), x)


def double_conv_params(cin: int, cout: int) -> int:
    return (27 * cin * cout + cout) + 2 * cout + (27 * cout * cout + cout) + 2 * cout


def unet_param_count(spec: ModelSpec) -> int:
    """Closed-form parameter count of :class:`UNet`."""
    ch = level_channels(spec)
    n = 0
    prev = 1
    for c in ch[:-1]:
        n += double_conv_params(prev, c)
        prev = c
    n += double_conv_params(prev, ch[-1])
    for i in range(spec.depth):
        n += 27 * ch[i + 1] * ch[i] + ch[i]
        n += double_conv_params(2 * ch[i], ch[i])
    n += ch[0] + 1 + 1
    return n
