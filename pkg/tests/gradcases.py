"""Finite-difference gradient cases for every differentiable op, in float64.

Each builder returns (fn, inputs): ``fn()`` recomputes a scalar from the
inputs it closes over.  Shared by the unit tests and the acceptance run.
"""

import numpy as np

from volforecast.autodiff import Tensor, concat, functional as F
from volforecast.autodiff.nn import MultiHeadAttention
from volforecast.losses import LossWeights, feature_loss, mse_loss, total_loss
from volforecast.models import ModelSpec, build
from volforecast.ode import integrate_rk4, ode_consistency_residual

F64 = np.float64


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=F64)


def _proj(rng, out):
    # random projection so the scalar loss depends on every output element differently
    w = rng.normal(size=out.shape)
    return lambda y: (y * Tensor(w)).sum()


def case_conv3d(rng):
    x, w, b = _t(rng, 1, 2, 4, 4, 4), _t(rng, 3, 2, 3, 3, 3, scale=0.3), _t(rng, 3)
    proj = _proj(rng, np.zeros((1, 3, 4, 4, 4)))
    return lambda: proj(F.conv3d(x, w, b, stride=1, padding=1)), [x, w, b]


def case_conv3d_strided(rng):
    x, w, b = _t(rng, 1, 2, 4, 4, 4), _t(rng, 2, 2, 2, 2, 2, scale=0.3), _t(rng, 2)
    proj = _proj(rng, np.zeros((1, 2, 2, 2, 2)))
    return lambda: proj(F.conv3d(x, w, b, stride=2, padding=0)), [x, w, b]


def case_avg_pool(rng):
    x = _t(rng, 1, 2, 4, 4, 4)
    proj = _proj(rng, np.zeros((1, 2, 2, 2, 2)))
    return lambda: proj(F.avg_pool3d(x, 2)), [x]


def case_upsample(rng):
    x = _t(rng, 1, 2, 2, 2, 2)
    proj = _proj(rng, np.zeros((1, 2, 4, 4, 4)))
    return lambda: proj(F.upsample3d_nearest(x, 2)), [x]


def case_norm(rng):
    x, g, b = _t(rng, 1, 3, 3, 3, 3), _t(rng, 3), _t(rng, 3)
    proj = _proj(rng, np.zeros((1, 3, 3, 3, 3)))
    return lambda: proj(F.batchless_norm(x, g, b)), [x, g, b]


def case_layer_norm(rng):
    x, g, b = _t(rng, 2, 3, 4), _t(rng, 4), _t(rng, 4)
    proj = _proj(rng, np.zeros((2, 3, 4)))
    return lambda: proj(F.layer_norm(x, g, b)), [x, g, b]


def case_relu(rng):
    x = Tensor(rng.choice([-1.0, 1.0], size=(4, 4, 4)) * rng.uniform(0.1, 1.0, size=(4, 4, 4)),
               requires_grad=True, dtype=F64)
    proj = _proj(rng, x.data)
    return lambda: proj(F.relu(x)), [x]


def case_gelu(rng):
    x = _t(rng, 4, 4, 4, scale=2.0)
    proj = _proj(rng, x.data)
    return lambda: proj(F.gelu(x)), [x]


def case_sigmoid_tanh_exp(rng):
    x = _t(rng, 4, 4)
    proj = _proj(rng, x.data)
    return lambda: proj(F.sigmoid(x) + x.tanh() * x.exp() * 0.5), [x]


def case_elementwise_arith(rng):
    a = _t(rng, 3, 4)
    b = Tensor(rng.uniform(1.0, 2.0, size=(1, 4)), requires_grad=True, dtype=F64)
    proj = _proj(rng, np.zeros((3, 4)))
    return lambda: proj((a * b - a / b + b ** 2.0) @ Tensor(np.eye(4))), [a, b]


def case_concat_slice(rng):
    a, b = _t(rng, 1, 2, 2, 2, 2), _t(rng, 1, 1, 2, 2, 2)
    proj = _proj(rng, np.zeros((1, 2, 2, 2, 2)))
    return lambda: proj(concat([a, b], axis=1)[:, 1:]), [a, b]


def case_softmax(rng):
    x = _t(rng, 3, 5, scale=2.0)
    proj = _proj(rng, x.data)
    return lambda: proj(F.softmax(x, axis=-1)), [x]


def case_linear(rng):
    x, w, b = _t(rng, 2, 3, 4), _t(rng, 5, 4), _t(rng, 5)
    proj = _proj(rng, np.zeros((2, 3, 5)))
    return lambda: proj(F.linear(x, w, b)), [x, w, b]


def case_attention(rng):
    mha = MultiHeadAttention(rng, 4, 2)
    mha.astype(F64)
    x = _t(rng, 1, 3, 4)
    proj = _proj(rng, np.zeros((1, 3, 4)))
    return lambda: proj(mha(x)), [x, mha.q.weight, mha.k.weight, mha.v.weight, mha.o.weight, mha.o.bias]


def case_rk4(rng):
    a = _t(rng, 2, 2, scale=0.2)
    z0 = _t(rng, 2)

    def f(z, t):
        return (z.reshape(1, 2) @ a).reshape(2).tanh() + z * (0.01 * t)
    return lambda: (integrate_rk4(f, z0, 0.0, 2.0, 4) * Tensor(np.array([1.0, -2.0]))).sum(), [z0, a]


def _tiny_ode_model(rng):
    model = build(ModelSpec("odeunet", base_channels=2, depth=1, time_embed_dim=4, ode_steps=2), (4, 4, 4),
                  seed=int(rng.integers(1 << 30)))
    model.astype(F64)
    return model


def case_mse_loss(rng):
    p, t = _t(rng, 1, 1, 4, 4, 4), rng.normal(size=(1, 1, 4, 4, 4))
    mask = rng.uniform(size=(1, 1, 4, 4, 4)) > 0.3
    return lambda: mse_loss(p, t, mask) + mse_loss(p, t), [p]


def case_feature_loss(rng):
    model = _tiny_ode_model(rng)
    p, t = _t(rng, 1, 1, 4, 4, 4, scale=0.3), rng.normal(0, 0.3, size=(1, 1, 4, 4, 4))
    return lambda: feature_loss(p, t, model.frozen_encoder), [p]


def case_ode_loss(rng):
    model = _tiny_ode_model(rng)
    s, t = _t(rng, 1, 1, 4, 4, 4, scale=0.3), rng.normal(0, 0.3, size=(1, 1, 4, 4, 4))
    w = model.field.conv2.bias
    return lambda: ode_consistency_residual(model, s, Tensor(t)) * 1e3, [s, w]


def case_total_loss(rng):
    model = _tiny_ode_model(rng)
    s = Tensor(rng.normal(0.5, 0.2, size=(1, 1, 4, 4, 4)), dtype=F64)
    t = rng.normal(0.5, 0.2, size=(1, 1, 4, 4, 4))
    params = [model.head.gate, model.field.conv1.bias, model.decoder.blocks[0].b.norm.gamma]

    def fn():
        pred, z_end = model.forward_with_latent(s, 0, 24)
        return total_loss(pred, t, model, s, 0, 24, LossWeights(0.1, 0.1), z_end=z_end)[0]
    return fn, params


CASES = {name[5:]: fn for name, fn in sorted(globals().items()) if name.startswith("case_")}


def run_case(name: str, seed: int = 0) -> float:
    from volforecast.autodiff import gradcheck

    rng = np.random.default_rng([seed, sum(map(ord, name))])
    fn, inputs = CASES[name](rng)
    return gradcheck(fn, inputs)
