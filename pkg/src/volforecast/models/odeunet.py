"""UNet whose bottleneck latent evolves under a learned neural ODE."""

from __future__ import annotations

from ..autodiff import Conv3d, Module, Tensor, concat
from ..autodiff import functional as F
from ..ode import integrate_rk4, steps_for_interval
from ..volume import HORIZON_MONTHS
from .common import ForecastModel, ModelSpec, ResidualHead, TimeEmbedding
from .unet import Decoder, Encoder, level_channels

# f outputs a per-month rate; this keeps the latent displacement over one
# 24-month horizon at the scale of a single network output
RATE_SCALE = 1.0 / 24.0


class VectorField(Module):
    """f(Z, t): two 3x3x3 convolutions over [Z, time-embedding channels]."""

    def __init__(self, rng, channels: int, time_dim: int):
        self.time = TimeEmbedding(rng, time_dim, time_dim, n_scalars=1)
        self.conv1 = Conv3d(rng, channels + time_dim, channels, 3)
        self.conv2 = Conv3d(rng, channels, channels, 3)

    def forward(self, z: Tensor, t: float) -> Tensor:
        emb = F.broadcast_channels(self.time(t / 120.0), z.shape[2:])
        h = self.conv1(concat([z, emb], axis=1)).tanh()
        return self.conv2(h) * RATE_SCALE


class OdeUNet(ForecastModel):
    def __init__(self, rng, spec: ModelSpec, input_shape, frozen_rng=None):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.encoder = Encoder(rng, spec)
        self.field = VectorField(rng, level_channels(spec)[-1], spec.time_embed_dim)
        self.decoder = Decoder(rng, spec)
        self.head = ResidualHead(rng, spec.base_channels)
        self.frozen_encoder = None
        if frozen_rng is not None:
            self.frozen_encoder = Encoder(frozen_rng, spec)
            self.frozen_encoder.freeze()

    @property
    def step_months(self) -> float:
        return HORIZON_MONTHS / self.spec.ode_steps

    def encode(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        return self.encoder(x)

    def evolve(self, z: Tensor, t1: float, horizon: float) -> Tensor:
        steps = steps_for_interval(horizon, self.step_months)
        if steps == 0:
            return z
        return integrate_rk4(self.field, z, float(t1), float(t1 + horizon), steps)

    def decode(self, skips: list[Tensor], z: Tensor, x: Tensor) -> Tensor:
        return self.head(self.decoder(skips, z), x)

    def forward_with_latent(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> tuple[Tensor, Tensor]:
        skips, z = self.encode(x)
        z_end = self.evolve(z, t1, horizon)
        return self.decode(skips, z_end, x), z_end

    def forward(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Tensor:
        return self.forward_with_latent(x, t1, horizon)[0]
