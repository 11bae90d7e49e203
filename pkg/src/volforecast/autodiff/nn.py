"""Parameters, a minimal module tree, and the layers the architectures use."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """A trainable leaf tensor carrying its own Adam moment estimates."""

    def __init__(self, data, name: str = "", requires_grad: bool = True):
        arr = np.array(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        super().__init__(arr, requires_grad=requires_grad)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)
        if self.grad is not None:
            self.grad = self.grad.astype(dtype)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Module:
    """Container whose Parameter / Module attributes (and lists of them) form a tree."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name: str):
    if isinstance(value, Parameter):
        value.name = name
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Conv3d(Module):
    def __init__(self, rng, cin: int, cout: int, kernel: int = 3, stride: int = 1, padding: int | None = None, bias: bool = True):
        fan_in = cin * kernel**3
        self.weight = Parameter(uniform_init(rng, (cout, cin, kernel, kernel, kernel), fan_in))
        self.bias = Parameter(uniform_init(rng, (cout,), fan_in)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Norm(Module):
    """Per-instance channel normalization (batch norm at batch size 1)."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchless_norm(x, self.gamma, self.beta, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(dim, dtype=DEFAULT_DTYPE))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, rng, din: int, dout: int, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (dout, din), din))
        self.bias = Parameter(uniform_init(rng, (dout,), din)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class ConvBlock(Module):
    """conv 3x3x3 -> norm -> ReLU."""

    def __init__(self, rng, cin: int, cout: int):
        self.conv = Conv3d(rng, cin, cout, 3)
        self.norm = Norm(cout)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.norm(self.conv(x)))


class DoubleConv(Module):
    def __init__(self, rng, cin: int, cout: int):
        self.a = ConvBlock(rng, cin, cout)
        self.b = ConvBlock(rng, cout, cout)

    def forward(self, x: Tensor) -> Tensor:
        return self.b(self.a(x))


class UpConv(Module):
    """Nearest-neighbour x2 upsampling followed by a 3x3x3 convolution."""

    def __init__(self, rng, cin: int, cout: int, factor: int = 2):
        self.conv = Conv3d(rng, cin, cout, 3)
        self.factor = factor

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(F.upsample3d_nearest(x, self.factor))


class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.o = Linear(rng, dim, dim)

    def forward(self, q: Tensor, k: Tensor | None = None, v: Tensor | None = None) -> Tensor:
        k = q if k is None else k
        v = q if v is None else v
        return F.multi_head_attention(
            q, k, v, self.heads,
            self.q.weight, self.k.weight, self.v.weight, self.o.weight,
            self.q.bias, self.k.bias, self.v.bias, self.o.bias,
        )


class TransformerLayer(Module):
    """Pre-norm encoder layer: x + MHA(LN x), then x + MLP(LN x)."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: int = 2):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(rng, dim, dim * mlp_ratio)
        self.fc2 = Linear(rng, dim * mlp_ratio, dim)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
