"""Training objectives: voxel MSE, and the three-term composite for the ODE model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .ode import ode_consistency_residual


@dataclass(frozen=True)
class LossWeights:
    lambda_feat: float = 0.1
    lambda_ode: float = 0.1

    def __post_init__(self):
        if self.lambda_feat < 0 or self.lambda_ode < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def is_plain(self) -> bool:
        return self.lambda_feat == 0 and self.lambda_ode == 0


def mse_loss(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    sq = d * d
    if mask is None:
        return sq.mean()
    m = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    n = int(m.sum())
    if n == 0:
        raise ValueError("mask selects no voxels")
    return (sq * Tensor(m.astype(pred.dtype))).sum() * (1.0 / n)


def feature_loss(pred: Tensor, target, frozen_encoder) -> Tensor:
    """Sum over encoder levels of the per-element MSE between feature maps."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    with no_grad():
        tfeats = [f.data for f in frozen_encoder.features(target)]
    total = None
    for fp, ft in zip(frozen_encoder.features(pred), tfeats):
        d = fp - Tensor(ft)
        term = (d * d).mean()
        total = term if total is None else total + term
    return total


def total_loss(pred: Tensor, target, model=None, source=None, t1: float = 0, horizon: float = 24,
               weights: LossWeights = LossWeights(), z_end: Tensor | None = None) -> tuple[Tensor, dict]:
    """``mse + lambda_feat * feat + lambda_ode * ode``; returns (total, component values).

    ``z_end`` may carry the already-integrated latent from the forward pass so
    the ODE term does not integrate twice.
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target), dtype=pred.dtype)
    mse = mse_loss(pred, target)
    parts = {"mse": float(mse.data), "feat": 0.0, "ode": 0.0}
    total = mse
    if weights.lambda_feat:
        if model is None or getattr(model, "frozen_encoder", None) is None:
            raise TypeError("feature loss needs a model with a frozen encoder")
        feat = feature_loss(pred, target, model.frozen_encoder)
        parts["feat"] = float(feat.data)
        total = total + feat * weights.lambda_feat
    if weights.lambda_ode:
        if getattr(model, "arch", None) != "odeunet":
            raise TypeError("ODE consistency loss needs an odeunet model")
        if z_end is None:
            ode = ode_consistency_residual(model, source, target, t1, horizon)
        else:
            _, z_tgt = model.encode(target)
            d = z_end - z_tgt
            ode = (d * d).mean()
        parts["ode"] = float(ode.data)
        total = total + ode * weights.lambda_ode
    parts["total"] = float(total.data)
    return total, parts


def combine(components: dict, weights: LossWeights) -> float:
    return components["mse"] + weights.lambda_feat * components["feat"] + weights.lambda_ode * components["ode"]
