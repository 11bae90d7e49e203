"""Synthetic longitudinal atrophy cohort with a known generative oracle.

Anatomy is a shared template of Gaussian blobs (so every cohort lives in the
same normalized space, like spatially normalized density maps), jittered per
participant.  Each template blob carries a vulnerability weight; a
participant's atrophy-rate field is

    r(v) = rate_scale * s_p * (global_rate_mean + regional_rate * sum_k w_k g_k(v))

where ``s_p`` is a lognormal participant factor, ``g_k`` the participant's
k-th blob profile and ``w_k`` in [0, 1] the template vulnerability of blob k.
Observations decay exponentially and carry iid Gaussian noise; the dynamics
themselves are noiseless.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .volume import ManifestRow, Volume, relpath, save_volume, write_manifest

TRUTH_DIR = "truth"


@dataclass(frozen=True)
class CohortShift:
    """Cohort-level offsets used to simulate an external cohort."""

    rate_scale: float = 1.0
    density_offset: float = 0.0


@dataclass(frozen=True)
class CohortSpec:
    n_participants: int = 100
    dims: tuple[int, int, int] = (16, 16, 16)
    n_blobs: int = 6
    blob_radius_range: tuple[float, float] = (1.5, 3.0)
    per_participant_rate_sd: float = 0.25
    global_rate_mean: float = 0.002
    noise_sd: float = 0.01
    visit_months: tuple[int, ...] = (0, 24, 48)
    shift: CohortShift = field(default_factory=CohortShift)
    seed: int = 0
    template_seed: int = 0
    voxel_size_mm: float = 4.0
    # extra per-month rate at the centre of a fully vulnerable blob
    regional_rate: float = 0.008

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "blob_radius_range", tuple(float(r) for r in self.blob_radius_range))
        object.__setattr__(self, "visit_months", tuple(sorted(int(m) for m in self.visit_months)))
        if isinstance(self.shift, dict):
            object.__setattr__(self, "shift", CohortShift(**self.shift))
        self.validate()

    def validate(self) -> None:
        if self.n_participants < 2:
            raise ValueError("n_participants must be >= 2")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be 3 positive ints, got {self.dims}")
        lo, hi = self.blob_radius_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad blob_radius_range {self.blob_radius_range}")
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be >= 1")
        if min(self.global_rate_mean, self.regional_rate, self.per_participant_rate_sd, self.noise_sd) < 0:
            raise ValueError("rates and noise levels must be non-negative")
        if self.shift.rate_scale < 0:
            raise ValueError("shift.rate_scale must be non-negative")
        if not self.visit_months or self.visit_months[0] < 0:
            raise ValueError("visit_months must be non-empty and non-negative")

    @property
    def shape(self) -> tuple[int, int, int]:
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        if "shift" in d and isinstance(d["shift"], dict):
            d["shift"] = CohortShift(**d["shift"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ParticipantTruth:
    participant_id: str
    centers: np.ndarray  # (n_blobs, 3) in (z, y, x) voxel coordinates
    radii: np.ndarray
    amplitudes: np.ndarray
    rate_factor: float
    rate: np.ndarray  # per-month atrophy rate field, shape (nz, ny, nx)

    def save(self, path) -> None:
        np.savez(path, participant_id=self.participant_id, centers=self.centers, radii=self.radii,
                 amplitudes=self.amplitudes, rate_factor=self.rate_factor, rate=self.rate)

    @classmethod
    def load(cls, path) -> "ParticipantTruth":
        with np.load(path) as z:
            return cls(str(z["participant_id"]), z["centers"], z["radii"], z["amplitudes"],
                       float(z["rate_factor"]), z["rate"])


@dataclass
class Cohort:
    spec: CohortSpec
    scans: dict[str, list[tuple[int, Volume]]]
    truths: dict[str, ParticipantTruth]

    @property
    def ids(self) -> list[str]:
        return sorted(self.scans)


def participant_id(index: int) -> str:
    return f"P{index:04d}"


def _template(spec: CohortSpec):
    rng = np.random.default_rng([spec.template_seed, 7])
    shape = np.array(spec.shape, dtype=np.float64)
    lo, hi = spec.blob_radius_range
    radii = rng.uniform(lo, hi, size=spec.n_blobs)
    margin = np.minimum(radii[:, None] + 1.0, shape / 2 - 0.5)
    centers = margin + rng.uniform(size=(spec.n_blobs, 3)) * (shape - 2 * margin)
    amplitudes = rng.uniform(0.5, 0.9, size=spec.n_blobs)
    vulnerability = rng.uniform(0.0, 1.0, size=spec.n_blobs)
    return centers, radii, amplitudes, vulnerability


def _blob_profiles(shape, centers, radii) -> np.ndarray:
    grid = np.stack(np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij"), axis=-1)
    d2 = ((grid[None] - centers[:, None, None, None, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / (2.0 * radii[:, None, None, None] ** 2))


def participant_truth(spec: CohortSpec, index: int) -> tuple[ParticipantTruth, np.ndarray]:
    """Truth record and noiseless baseline for one participant (reproducible from seed, index)."""
    t_centers, t_radii, t_amp, vulnerability = _template(spec)
    rng = np.random.default_rng([spec.seed, index, 0])
    centers = t_centers + rng.normal(0.0, 0.5, size=t_centers.shape)
    radii = t_radii * np.exp(rng.normal(0.0, 0.1, size=t_radii.shape))
    amplitudes = t_amp * np.exp(rng.normal(0.0, 0.15, size=t_amp.shape))
    rate_factor = float(np.exp(rng.normal(0.0, spec.per_participant_rate_sd)))

    profiles = _blob_profiles(spec.shape, centers, radii)
    x0 = np.clip((amplitudes[:, None, None, None] * profiles).sum(axis=0) + spec.shift.density_offset, 0.0, 1.0)
    regional = (vulnerability[:, None, None, None] * profiles).sum(axis=0)
    rate = spec.shift.rate_scale * rate_factor * (spec.global_rate_mean + spec.regional_rate * regional)
    truth = ParticipantTruth(participant_id(index), centers, radii, amplitudes, rate_factor, rate)
    return truth, x0


def observe(x0: np.ndarray, rate: np.ndarray, month: float, noise_sd: float, rng) -> np.ndarray:
    clean = np.clip(x0 * np.exp(-rate * month), 0.0, 1.0)
    if noise_sd > 0:
        clean = np.clip(clean + rng.normal(0.0, noise_sd, size=clean.shape), 0.0, 1.0)
    return clean.astype(np.float32)


def generate_cohort(spec: CohortSpec) -> Cohort:
    spec.validate()
    vs = (spec.voxel_size_mm,) * 3
    scans: dict[str, list[tuple[int, Volume]]] = {}
    truths: dict[str, ParticipantTruth] = {}
    for i in range(spec.n_participants):
        truth, x0 = participant_truth(spec, i)
        visits = []
        for j, m in enumerate(spec.visit_months):
            noise_rng = np.random.default_rng([spec.seed, i, 1, j])
            visits.append((m, Volume(observe(x0, truth.rate, m, spec.noise_sd, noise_rng), vs)))
        scans[truth.participant_id] = visits
        truths[truth.participant_id] = truth
    return Cohort(spec, scans, truths)


def oracle_predict(truth: ParticipantTruth, source: Volume, t1: float, horizon: float,
                   participant_id: str | None = None) -> Volume:
    """Noiseless generative decay of ``source`` over ``horizon`` months."""
    if participant_id is not None and participant_id != truth.participant_id:
        raise ValueError(f"truth is for {truth.participant_id}, not {participant_id}")
    if truth.rate.shape != source.shape:
        raise ValueError(f"truth shape {truth.rate.shape} != source shape {source.shape}")
    if horizon == 0:
        return source
    out = np.clip(source.data.astype(np.float64) * np.exp(-truth.rate * horizon), 0.0, 1.0)
    return Volume(out.astype(np.float32), source.voxel_size_mm, source.mask)


def write_cohort(cohort: Cohort, out_dir) -> Path:
    """Write VOL1 files, manifest.csv, cohort_spec.json and the truth/ sidecar; returns the manifest path."""
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / TRUTH_DIR).mkdir(exist_ok=True)
    rows = []
    for pid in cohort.ids:
        for month, vol in cohort.scans[pid]:
            p = out / "volumes" / f"{pid}_m{month:03d}.vol"
            save_volume(vol, p)
            rows.append(ManifestRow(pid, month, relpath(p, out)))
        cohort.truths[pid].save(out / TRUTH_DIR / f"{pid}.npz")
    manifest = out / "manifest.csv"
    write_manifest(rows, manifest)
    (out / "cohort_spec.json").write_text(json.dumps(cohort.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def load_truths(cohort_dir, ids=None) -> dict[str, ParticipantTruth]:
    d = Path(cohort_dir) / TRUTH_DIR
    out = {}
    for f in sorted(d.glob("*.npz")):
        t = ParticipantTruth.load(f)
        if ids is None or t.participant_id in ids:
            out[t.participant_id] = t
    return out
