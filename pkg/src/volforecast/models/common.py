"""Shared pieces of the forecasting architectures."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..autodiff import Conv3d, Linear, Module, Parameter, Tensor, no_grad
from ..autodiff import functional as F
from ..volume import HORIZON_MONTHS, ShapeMismatchError, Volume

ARCH_TAGS = ("unet", "u2net", "unetr", "teunet", "odeunet")
TIME_AWARE = ("teunet", "odeunet")
_ALIASES = {"unet": "unet", "u2net": "u2net", "u2-net": "u2net", "unetr": "unetr",
            "teunet": "teunet", "odeunet": "odeunet", "ode-unet": "odeunet"}

GATE_INIT = 0.01


def normalize_arch(arch: str) -> str:
    try:
        return _ALIASES[arch.lower()]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCH_TAGS}") from None


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    base_channels: int = 8
    depth: int = 3
    patch_size: int = 4
    embed_dim: int = 64
    heads: int = 4
    transformer_layers: int = 4
    time_embed_dim: int = 16
    ode_steps: int = 8

    def __post_init__(self):
        object.__setattr__(self, "arch", normalize_arch(self.arch))

    def validate(self, input_shape) -> None:
        shape = tuple(int(s) for s in input_shape)
        if len(shape) != 3:
            raise ShapeMismatchError(f"expected 3D input shape, got {shape}")
        div = 2**self.depth
        if any(s % div for s in shape):
            raise ShapeMismatchError(f"input dims {shape} must be divisible by 2^depth = {div}")
        if self.arch == "unetr":
            p = self.patch_size
            if p < 2 or p & (p - 1):
                raise ValueError(f"patch_size must be a power of two >= 2, got {p}")
            if any(s % p for s in shape):
                raise ShapeMismatchError(f"input dims {shape} must be divisible by patch_size {p}")
            if self.embed_dim % self.heads:
                raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.arch in TIME_AWARE and self.time_embed_dim % 4:
            raise ValueError("time_embed_dim must be a multiple of 4")
        if self.ode_steps < 1:
            raise ValueError("ode_steps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def sinusoidal_features(values, dim: int) -> np.ndarray:
    """sin/cos at octave frequencies for each normalized scalar; returns (1, dim)."""
    per = dim // len(values)
    k = np.arange(per // 2, dtype=np.float64)
    feats = []
    for v in values:
        ang = math.pi * (2.0**k) * float(v)
        feats.append(np.sin(ang))
        feats.append(np.cos(ang))
    return np.concatenate(feats).reshape(1, -1)


class TimeEmbedding(Module):
    """Sinusoidal features through a learned two-layer projection."""

    def __init__(self, rng, feat_dim: int, out_dim: int, n_scalars: int):
        self.feat_dim = feat_dim
        self.n_scalars = n_scalars
        self.fc1 = Linear(rng, feat_dim, feat_dim)
        self.fc2 = Linear(rng, feat_dim, out_dim)

    def forward(self, *scalars: float) -> Tensor:
        feats = Tensor(sinusoidal_features(scalars, self.feat_dim), dtype=self.fc1.weight.dtype)
        return self.fc2(F.gelu(self.fc1(feats)))


class ResidualHead(Module):
    """1x1x1 projection to one channel, scaled by a learnable gate, added to the source."""

    def __init__(self, rng, cin: int):
        self.conv = Conv3d(rng, cin, 1, kernel=1)
        self.gate = Parameter(np.array([GATE_INIT], dtype=np.float32))

    def forward(self, h: Tensor, source: Tensor) -> Tensor:
        return source + self.conv(h) * self.gate.reshape(1, 1, 1, 1, 1)


class ForecastModel(Module):
    """Base class: maps a (1, 1, D, H, W) source tensor to a same-shape prediction."""

    spec: ModelSpec
    input_shape: tuple[int, int, int]

    def forward(self, x: Tensor, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Tensor:
        raise NotImplementedError

    @property
    def arch(self) -> str:
        return self.spec.arch

    def check_horizon(self, horizon: float) -> None:
        if horizon < 0:
            raise ShapeMismatchError(f"horizon must be non-negative, got {horizon}")
        if self.arch not in TIME_AWARE and horizon != HORIZON_MONTHS:
            raise ShapeMismatchError(f"{self.arch} predicts a fixed {HORIZON_MONTHS}-month horizon, got {horizon}")
        if self.arch == "teunet" and horizon == 0:
            raise ShapeMismatchError("teunet needs a positive horizon")

    def as_input(self, source: Volume | np.ndarray) -> Tensor:
        arr = source.data if isinstance(source, Volume) else np.asarray(source)
        if tuple(arr.shape) != tuple(self.input_shape):
            raise ShapeMismatchError(f"volume shape {arr.shape} != model input shape {self.input_shape}")
        return Tensor(arr.reshape((1, 1) + arr.shape), dtype=self.parameters()[0].dtype)

    def predict(self, source: Volume, t1: float = 0, horizon: float = HORIZON_MONTHS) -> Volume:
        self.check_horizon(horizon)
        with no_grad():
            out = self.forward(self.as_input(source), t1, horizon)
        arr = out.data.reshape(source.shape).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("prediction contains non-finite values")
        return Volume(arr, source.voxel_size_mm, source.mask)
