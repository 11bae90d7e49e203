"""Evaluation metrics: MSE, PSNR, 3D SSIM, global and voxel-wise change correlation.

All computations run in float64.  A correlation over a zero-variance series
is *undefined*, represented as ``None``; undefined values are excluded from
averages and counted, never replaced by 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

PEAK = 1.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
VOXEL_R_SENTINEL = -2.0


class EmptyMaskError(ValueError):
    pass


class AllUndefinedError(ValueError):
    """Every participant's change correlation was undefined."""

    def __init__(self, n: int):
        super().__init__(f"all {n} participants have undefined change correlation")
        self.n_undefined = n
        self.per_participant = [None] * n


def _f64(a) -> np.ndarray:
    return np.asarray(getattr(a, "data", a), dtype=np.float64)


def _mask_or_all(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape):
        raise ValueError(f"mask shape {m.shape} != volume shape {tuple(shape)}")
    if not m.any():
        raise EmptyMaskError("mask selects no voxels")
    return m


def mse(pred, target, mask=None) -> float:
    p, t = _f64(pred), _f64(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    m = _mask_or_all(mask, p.shape)
    d = p[m] - t[m]
    return float(np.mean(d * d))


def psnr_from_mse(err: float, peak: float = PEAK) -> float:
    """10 log10(peak^2 / mse); ``math.inf`` when mse is exactly 0."""
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr(pred, target, mask=None, peak: float = PEAK) -> float:
    return psnr_from_mse(mse(pred, target, mask), peak)


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def window_sizes(shape, size: int = SSIM_WINDOW) -> tuple[int, ...]:
    """Per-axis window extent, shrunk to the largest odd size that fits."""
    out = []
    for s in shape:
        k = min(size, s if s % 2 else s - 1)
        out.append(max(k, 1))
    return tuple(out)


def _local_mean(a: np.ndarray, windows) -> np.ndarray:
    for axis, w in enumerate(windows):
        a = ndimage.correlate1d(a, w, axis=axis, mode="reflect")
    return a


def ssim_map(pred, target, peak: float = PEAK, sigma: float = SSIM_SIGMA, size: int = SSIM_WINDOW) -> np.ndarray:
    a, b = _f64(pred), _f64(target)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    windows = [gaussian_window(k, sigma) for k in window_sizes(a.shape, size)]
    mu_a = _local_mean(a, windows)
    mu_b = _local_mean(b, windows)
    var_a = _local_mean(a * a, windows) - mu_a * mu_a
    var_b = _local_mean(b * b, windows) - mu_b * mu_b
    cov = _local_mean(a * b, windows) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim3d(pred, target, mask=None, peak: float = PEAK, sigma: float = SSIM_SIGMA, size: int = SSIM_WINDOW) -> float:
    """Mean local SSIM over voxels whose window centre lies in ``mask``."""
    smap = ssim_map(pred, target, peak, sigma, size)
    m = _mask_or_all(mask, smap.shape)
    return float(np.mean(smap[m]))


def pearson(a, b) -> float | None:
    """Sample Pearson r, or None when either series has zero variance."""
    x, y = _f64(a).ravel(), _f64(b).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("pearson needs at least 2 values")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if den == 0:
        return None
    return float(np.clip(np.dot(xc, yc) / den, -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class ChangeMap:
    participant_id: str
    delta_true: np.ndarray
    delta_pred: np.ndarray


def change_map(participant_id: str, source, target, pred, mask) -> ChangeMap:
    s, t, p = _f64(source), _f64(target), _f64(pred)
    m = _mask_or_all(mask, s.shape)
    return ChangeMap(participant_id, (t - s)[m], (p - s)[m])


@dataclass
class GlobalDeltaPearson:
    mean: float
    per_participant: list
    n_undefined: int


def delta_pearson_global(maps: Sequence[ChangeMap]) -> GlobalDeltaPearson:
    """Per-participant r(predicted change, true change), averaged over defined values."""
    if not maps:
        raise ValueError("no participants")
    rs = [pearson(cm.delta_pred, cm.delta_true) for cm in maps]
    defined = [r for r in rs if r is not None]
    if not defined:
        raise AllUndefinedError(len(rs))
    return GlobalDeltaPearson(float(np.mean(defined)), rs, len(rs) - len(defined))


@dataclass
class VoxelDeltaPearson:
    mean: float | None
    sd: float | None
    r_map: np.ndarray  # VOXEL_R_SENTINEL where undefined or out of mask
    n_defined: int
    n_undefined: int


def delta_pearson_voxelwise(sources, targets, preds, mask) -> VoxelDeltaPearson:
    """Per in-mask voxel, r across participants between predicted and true change."""
    if len(sources) < 2:
        raise ValueError("voxel-wise correlation needs at least 2 participants")
    s = np.stack([_f64(v) for v in sources])
    dt = np.stack([_f64(v) for v in targets]) - s
    dp = np.stack([_f64(v) for v in preds]) - s
    m = _mask_or_all(mask, s.shape[1:])
    a = dp[:, m]
    b = dt[:, m]
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    const = np.all(a == a[0], axis=0) | np.all(b == b[0], axis=0)
    num = (ac * bc).sum(axis=0)
    den = np.sqrt((ac * ac).sum(axis=0) * (bc * bc).sum(axis=0))
    ok = ~const & (den > 0)
    r = np.full(a.shape[1], VOXEL_R_SENTINEL)
    r[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    r_map = np.full(s.shape[1:], VOXEL_R_SENTINEL)
    r_map[m] = r
    vals = r[ok]
    mean = float(vals.mean()) if vals.size else None
    sd = float(vals.std()) if vals.size else None
    return VoxelDeltaPearson(mean, sd, r_map, int(ok.sum()), int((~ok).sum()))


def voxelwise_correlation(preds, targets, mask) -> VoxelDeltaPearson:
    """Per voxel, r across participants between predicted and actual follow-up intensity."""
    zeros = [np.zeros_like(_f64(p)) for p in preds]
    return delta_pearson_voxelwise(zeros, targets, preds, mask)


def error_map(preds, targets) -> np.ndarray:
    """Voxel-wise squared prediction error averaged over participants."""
    if not preds:
        raise ValueError("no participants")
    p = np.stack([_f64(v) for v in preds])
    t = np.stack([_f64(v) for v in targets])
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return ((p - t) ** 2).mean(axis=0)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def rows(self) -> list[tuple[float, float, int]]:
        return [(float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i])) for i in range(len(self.counts))]


def correlation_histogram(values, bins: int = 20) -> Histogram:
    """Equal-width bins over [-1, 1]; undefined (None / sentinel) values are skipped."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vals = np.array([v for v in values if v is not None and v != VOXEL_R_SENTINEL], dtype=np.float64)
    counts, edges = np.histogram(np.clip(vals, -1.0, 1.0), bins=bins, range=(-1.0, 1.0))
    return Histogram(edges, counts)


# -- reports ---------------------------------------------------------------------


@dataclass
class ParticipantRow:
    participant_id: str
    mse: float
    psnr_db: float
    ssim: float
    ssim_whole: float
    delta_pearson: float | None


@dataclass
class MetricsReport:
    rows: list[ParticipantRow]
    mse_mean: float
    psnr_mean: float
    psnr_sd: float
    psnr_pooled: float
    ssim_mean: float
    ssim_whole_mean: float
    dpearson_global: float | None
    n_undefined: int
    dpearson_voxel_mean: float | None
    dpearson_voxel_sd: float | None
    n_voxel_undefined: int
    mse_map: np.ndarray | None = None
    r_map: np.ndarray | None = None
    intensity_r_map: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    @property
    def n_participants(self) -> int:
        return len(self.rows)

    def voxel_r_values(self) -> list[float]:
        if self.r_map is None:
            return []
        return [float(v) for v in self.r_map.ravel() if v != VOXEL_R_SENTINEL]


def _mean_sd(values: list[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    if np.any(np.isinf(a)):
        return math.inf, math.nan
    return float(a.mean()), float(a.std())


def evaluate_predictions(ids: Sequence[str], sources, targets, preds, mask) -> MetricsReport:
    """Every metric over a test split; participants taken in the given order."""
    if not ids:
        raise ValueError("empty test set")
    m = _mask_or_all(mask, _f64(sources[0]).shape)
    rows = []
    maps = []
    for pid, s, t, p in zip(ids, sources, targets, preds):
        e = mse(p, t, m)
        cm = change_map(pid, s, t, p, m)
        rows.append(ParticipantRow(pid, e, psnr_from_mse(e), ssim3d(p, t, m), ssim3d(p, t, None),
                                   pearson(cm.delta_pred, cm.delta_true)))
        maps.append(cm)
    defined = [r.delta_pearson for r in rows if r.delta_pearson is not None]
    dp_global = float(np.mean(defined)) if defined else None
    mse_mean = float(np.mean([r.mse for r in rows]))
    psnr_mean, psnr_sd = _mean_sd([r.psnr_db for r in rows])
    if len(ids) >= 2:
        vox = delta_pearson_voxelwise(sources, targets, preds, m)
        inten = voxelwise_correlation(preds, targets, m)
        v_mean, v_sd, v_undef, r_map, i_map = vox.mean, vox.sd, vox.n_undefined, vox.r_map, inten.r_map
    else:
        v_mean, v_sd, v_undef, r_map, i_map = None, None, int(m.sum()), None, None
    return MetricsReport(
        rows=rows,
        mse_mean=mse_mean,
        psnr_mean=psnr_mean,
        psnr_sd=psnr_sd,
        psnr_pooled=psnr_from_mse(mse_mean),
        ssim_mean=float(np.mean([r.ssim for r in rows])),
        ssim_whole_mean=float(np.mean([r.ssim_whole for r in rows])),
        dpearson_global=dp_global,
        n_undefined=len(rows) - len(defined),
        dpearson_voxel_mean=v_mean,
        dpearson_voxel_sd=v_sd,
        n_voxel_undefined=v_undef,
        mse_map=error_map(preds, targets),
        r_map=r_map,
        intensity_r_map=i_map,
    )
