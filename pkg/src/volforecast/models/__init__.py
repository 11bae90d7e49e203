"""The five forecasting architectures behind one builder."""

from __future__ import annotations

import numpy as np

from ..volume import Volume
from .common import ARCH_TAGS, TIME_AWARE, ForecastModel, ModelSpec, normalize_arch
from .odeunet import OdeUNet
from .u2net import RSUBlock, U2Net, u2net_rsu_block
from .unet import TEUNet, UNet, unet_param_count
from .unetr import UNETR, unetr_encode

_BUILDERS = {"unet": UNet, "u2net": U2Net, "unetr": UNETR, "teunet": TEUNet, "odeunet": OdeUNet}


def build(spec: ModelSpec, input_shape, seed: int = 0) -> ForecastModel:
    """Deterministically initialize a model for volumes of shape (D, H, W)."""
    spec.validate(input_shape)
    rng = np.random.default_rng([seed, 0])
    if spec.arch == "odeunet":
        model = OdeUNet(rng, spec, input_shape, frozen_rng=np.random.default_rng([seed, 1]))
    else:
        model = _BUILDERS[spec.arch](rng, spec, input_shape)
    list(model.named_parameters())  # walk once so every Parameter carries its dotted name
    return model


def predict(model: ForecastModel, source: Volume, t1_months: int = 0, horizon_months: int = 24) -> Volume:
    return model.predict(source, t1_months, horizon_months)


__all__ = [
    "ARCH_TAGS",
    "TIME_AWARE",
    "ForecastModel",
    "ModelSpec",
    "OdeUNet",
    "RSUBlock",
    "TEUNet",
    "U2Net",
    "UNETR",
    "UNet",
    "build",
    "normalize_arch",
    "predict",
    "u2net_rsu_block",
    "unet_param_count",
    "unetr_encode",
]
