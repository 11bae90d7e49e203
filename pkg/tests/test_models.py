import numpy as np
import pytest

from conftest import smooth_volume
from volforecast.autodiff import Tensor, no_grad
from volforecast.losses import mse_loss
from volforecast.models import ARCH_TAGS, ModelSpec, RSUBlock, build, predict, u2net_rsu_block, unet_param_count, unetr_encode
from volforecast.ode import integrate_rk4
from volforecast.volume import ShapeMismatchError, Volume

SMALL = {"base_channels": 4, "depth": 2, "embed_dim": 16, "heads": 2, "transformer_layers": 2, "time_embed_dim": 8}


def small(arch, shape=(8, 8, 8), seed=0, **kw):
    return build(ModelSpec(arch, **{**SMALL, **kw}), shape, seed=seed)


@pytest.mark.parametrize("arch", ARCH_TAGS)
def test_shape_preserved(arch, rng):
    model = small(arch, (8, 16, 8))
    src = Volume(rng.uniform(size=(8, 16, 8)).astype(np.float32), (1.0, 1.0, 1.0))
    out = predict(model, src, 0, 24)
    assert out.shape == src.shape and np.all(np.isfinite(out.data))


@pytest.mark.parametrize("arch", ARCH_TAGS)
def test_every_parameter_gets_gradient(arch, rng):
    model = small(arch)
    x = Tensor(smooth_volume(rng, (8, 8, 8))[None, None])
    target = rng.uniform(size=(1, 1, 8, 8, 8))
    model.zero_grad()
    mse_loss(model(x, 0, 24), target).backward()
    dead = [n for n, p in model.named_parameters() if p.requires_grad and (p.grad is None or not np.any(p.grad))]
    assert dead == []


@pytest.mark.parametrize("arch", ARCH_TAGS)
def test_same_seed_same_bytes(arch):
    a, b = small(arch, seed=3), small(arch, seed=3)
    assert [p.data.tobytes() for p in a.parameters()] == [p.data.tobytes() for p in b.parameters()]
    c = small(arch, seed=4)
    assert [p.data.tobytes() for p in a.parameters()] != [p.data.tobytes() for p in c.parameters()]


def test_unet_parameter_count_by_hand():
    # base 8, depth 3: channels 8/16/32 and a 64-channel bottleneck
    def dc(cin, cout):  # two (conv + bias + norm gamma/beta) blocks
        return (27 * cin * cout + cout + 2 * cout) + (27 * cout * cout + cout + 2 * cout)
    encoder = dc(1, 8) + dc(8, 16) + dc(16, 32) + dc(32, 64)
    assert encoder == 1992 + 10464 + 41664 + 166272
    decoder = (27 * 64 * 32 + 32) + dc(64, 32) + (27 * 32 * 16 + 16) + dc(32, 16) + (27 * 16 * 8 + 8) + dc(16, 8)
    head = 8 + 1 + 1  # 1x1 conv weights, bias, gate
    expected = encoder + decoder + head
    assert expected == 402234
    model = build(ModelSpec("unet"), (16, 16, 16))
    assert model.num_parameters() == expected == unet_param_count(ModelSpec("unet"))


def test_spec_divisibility_errors():
    with pytest.raises(ShapeMismatchError):
        build(ModelSpec("unet", depth=3), (12, 16, 16))
    with pytest.raises(ShapeMismatchError):
        build(ModelSpec("unetr", depth=1, patch_size=8), (16, 16, 12))
    with pytest.raises(ValueError):
        build(ModelSpec("unetr", embed_dim=10, heads=4), (16, 16, 16))
    with pytest.raises(ValueError):
        ModelSpec("resnet")


def test_unetr_tokens_and_taps(rng):
    model = build(ModelSpec("unetr"), (16, 16, 16))
    taps = unetr_encode(model, Tensor(rng.uniform(size=(1, 1, 16, 16, 16)).astype(np.float32)))
    assert len(taps) == 4
    assert all(t.shape == (1, 64, 64) for t in taps)


def test_vit_permutation_equivariance(rng):
    model = small("unetr", (8, 8, 8), patch_size=4)
    model.astype(np.float64)
    vit = model.vit
    vit.pos.data = np.zeros_like(vit.pos.data)
    x = rng.uniform(size=(1, 1, 8, 8, 8))
    perm = rng.permutation(8)
    # move whole 4x4x4 patches around; with no positional signal, tokens follow
    patches = x.reshape(2, 4, 2, 4, 2, 4).transpose(0, 2, 4, 1, 3, 5).reshape(8, 4, 4, 4)
    moved = patches[perm].reshape(2, 2, 2, 4, 4, 4).transpose(0, 3, 1, 4, 2, 5).reshape(1, 1, 8, 8, 8)
    with no_grad():
        base = vit(Tensor(x))[-1].data
        out = vit(Tensor(moved))[-1].data
    assert np.allclose(out, base[:, perm], atol=1e-10)


def test_time_agnostic_archs_reject_other_horizons(rng):
    src = Volume(rng.uniform(size=(8, 8, 8)).astype(np.float32), (1.0, 1.0, 1.0))
    for arch in ("unet", "u2net", "unetr"):
        with pytest.raises(ShapeMismatchError):
            predict(small(arch), src, 0, 12)
    for arch in ARCH_TAGS:
        with pytest.raises(ShapeMismatchError):
            predict(small(arch), src, 0, -1)


def test_wrong_input_shape(rng):
    model = small("unet")
    with pytest.raises(ShapeMismatchError):
        predict(model, Volume(np.zeros((16, 8, 8), np.float32), (1.0, 1.0, 1.0)), 0, 24)


def test_teunet_time_pathway_live(rng):
    model = small("teunet")
    src = Volume(smooth_volume(rng, (8, 8, 8)), (1.0, 1.0, 1.0))
    a = predict(model, src, 0, 24).data
    b = predict(model, src, 0, 48).data
    c = predict(model, src, 24, 24).data
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_odeunet_zero_horizon_is_decode_encode(rng):
    model = small("odeunet")
    src = Volume(smooth_volume(rng, (8, 8, 8)), (1.0, 1.0, 1.0))
    x = model.as_input(src)
    with no_grad():
        skips, z = model.encode(x)
        direct = model.decode(skips, z, x).data.reshape(8, 8, 8)
    assert np.array_equal(predict(model, src, 0, 0).data, direct)


def test_odeunet_step_composition(rng):
    model = small("odeunet")
    model.astype(np.float64)
    with no_grad():
        _, z = model.encode(Tensor(rng.uniform(size=(1, 1, 8, 8, 8))))
        whole = model.evolve(z, 6, 24).data
        half = model.evolve(model.evolve(z, 6, 12), 18, 12).data
    assert np.max(np.abs(whole - half)) < 1e-5


def test_odeunet_frozen_encoder_untouched(rng):
    model = small("odeunet")
    frozen = [p for n, p in model.named_parameters() if n.startswith("frozen_encoder.")]
    assert frozen and not any(p.requires_grad for p in frozen)
    trainable = {id(p) for p in model.trainable_parameters()}
    assert not any(id(p) in trainable for p in frozen)


def test_odeunet_latent_evolves_like_rk4(rng):
    model = small("odeunet")
    model.astype(np.float64)
    with no_grad():
        _, z = model.encode(Tensor(rng.uniform(size=(1, 1, 8, 8, 8))))
        direct = integrate_rk4(model.field, z, 0.0, 24.0, model.spec.ode_steps).data
        assert np.array_equal(model.evolve(z, 0, 24).data, direct)


def test_rsu_height_one_and_shapes(rng):
    x = Tensor(rng.uniform(size=(1, 4, 16, 16, 16)).astype(np.float32))
    assert u2net_rsu_block(x, 3).shape == x.shape
    block = RSUBlock(np.random.default_rng(0), 1, 4, 4, 4)
    with no_grad():
        h = block.conv_in(x)
        assert np.array_equal(block(x).data, (block.single(h) + h).data)
    with pytest.raises(ShapeMismatchError):
        u2net_rsu_block(Tensor(np.zeros((1, 4, 2, 2, 2), np.float32)), 3)


def test_rsu_zero_inner_conv_returns_residual(rng):
    block = RSUBlock(np.random.default_rng(1), 3, 2, 4, 4)
    conv = block.final_conv
    conv.weight.data[:] = 0.0
    conv.bias.data[:] = 0.0
    x = Tensor(rng.uniform(size=(1, 2, 8, 8, 8)).astype(np.float32))
    with no_grad():
        # inner U ends in conv -> norm -> relu; zero conv gives a zero channel, which norms to 0
        assert np.array_equal(block(x).data, block.conv_in(x).data)
