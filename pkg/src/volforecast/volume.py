"""Volumes, VOL1 file IO, analysis masks, longitudinal pairing and splits.

Arrays are held in memory with shape ``(nz, ny, nx)`` in C order, which is
exactly the on-disk layout (x varies fastest).
"""

from __future__ import annotations

import csv
import os
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"VOL1"
HORIZON_MONTHS = 24
MAX_VOXELS = 1 << 30
DEFAULT_MASK_THRESHOLD = 0.05
_HEADER = struct.Struct("<4s3I3fB")


class VolumeFormatError(ValueError):
    """Base class for malformed VOL1 files."""


class BadMagicError(VolumeFormatError):
    pass


class DimensionOverflowError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class ShapeMismatchError(ValueError):
    pass


class InsufficientParticipantsError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D density grid with voxel size and an optional boolean mask."""

    data: np.ndarray
    voxel_size_mm: tuple[float, float, float] = (4.0, 4.0, 4.0)
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatchError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume densities must be finite")
        object.__setattr__(self, "data", _frozen(data))
        vs = tuple(float(v) for v in self.voxel_size_mm)
        if len(vs) != 3 or min(vs) <= 0:
            raise ValueError(f"voxel size must be 3 positive reals, got {self.voxel_size_mm}")
        object.__setattr__(self, "voxel_size_mm", vs)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != data.shape:
                raise ShapeMismatchError(f"mask shape {mask.shape} != data shape {data.shape}")
            object.__setattr__(self, "mask", _frozen(mask))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.voxel_size_mm, self.mask)

    def with_mask(self, mask: np.ndarray | None) -> "Volume":
        return Volume(self.data, self.voxel_size_mm, mask)

    def same_content(self, other: "Volume") -> bool:
        """Bit-exact comparison of data, voxel size and mask."""
        if self.data.shape != other.data.shape or self.voxel_size_mm != other.voxel_size_mm:
            return False
        if self.data.tobytes() != other.data.tobytes():
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        return self.mask is None or bool(np.array_equal(self.mask, other.mask))


def encode_volume(v: Volume) -> bytes:
    nx, ny, nz = v.dims
    has_mask = v.mask is not None
    parts = [
        _HEADER.pack(MAGIC, nx, ny, nz, *v.voxel_size_mm, 1 if has_mask else 0),
        v.data.astype("<f4").tobytes(),
    ]
    if has_mask:
        parts.append(v.mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def decode_volume(buf: bytes) -> Volume:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    _, nx, ny, nz, vx, vy, vz, flag = _HEADER.unpack_from(buf)
    n = nx * ny * nz
    if min(nx, ny, nz) < 1 or n > MAX_VOXELS:
        raise DimensionOverflowError(f"dims {(nx, ny, nz)} outside supported range")
    if flag not in (0, 1):
        raise VolumeFormatError(f"mask flag must be 0 or 1, got {flag}")
    need = _HEADER.size + 4 * n + (n if flag else 0)
    if len(buf) < need:
        raise TruncatedPayloadError(f"payload needs {need} bytes, file has {len(buf)}")
    off = _HEADER.size
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(nz, ny, nx)
    mask = None
    if flag:
        raw = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off + 4 * n)
        if raw.max(initial=0) > 1:
            raise VolumeFormatError("mask bytes must be 0 or 1")
        mask = raw.astype(bool).reshape(nz, ny, nx)
    return Volume(data, (vx, vy, vz), mask)


def save_volume(v: Volume, path) -> None:
    Path(path).write_bytes(encode_volume(v))


def load_volume(path) -> Volume:
    return decode_volume(Path(path).read_bytes())


def file_size(dims: Sequence[int], with_mask: bool) -> int:
    n = int(np.prod(dims))
    return _HEADER.size + 4 * n + (n if with_mask else 0)


def compute_mask(training_baselines: Sequence[Volume], threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """Voxels whose mean density over the training baselines exceeds ``threshold``."""
    if not training_baselines:
        raise ValueError("compute_mask needs at least one baseline volume")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    shape = training_baselines[0].shape
    acc = np.zeros(shape, dtype=np.float64)
    for v in training_baselines:
        if v.shape != shape:
            raise ShapeMismatchError(f"baseline shape {v.shape} != {shape}")
        acc += v.data
    return acc / len(training_baselines) > threshold


@dataclass(frozen=True, eq=False)
class LongitudinalPair:
    participant_id: str
    t1: int
    source: Volume
    target: Volume

    def __post_init__(self):
        if self.source.shape != self.target.shape:
            raise ShapeMismatchError("source and target dims differ")

    @property
    def t2(self) -> int:
        return self.t1 + HORIZON_MONTHS


Scans = Mapping[str, Sequence[tuple[int, Volume]]]


def build_pairs(scans: Scans, style: str = "big") -> list[LongitudinalPair]:
    """All (t, t+24) pairs ("big") or only the (0, 24) pair ("small")."""
    style = style.lower()
    if style not in ("big", "small"):
        raise ValueError(f"unknown pairing style {style!r}")
    pairs = []
    for pid in sorted(scans):
        by_month: dict[int, Volume] = {}
        for month, vol in scans[pid]:
            month = int(month)
            if month < 0:
                raise ValueError(f"negative month {month} for participant {pid}")
            if month in by_month:
                raise ValueError(f"duplicate scan at month {month} for participant {pid}")
            by_month[month] = vol
        starts = [m for m in sorted(by_month) if m + HORIZON_MONTHS in by_month]
        if style == "small":
            starts = [m for m in starts if m == 0]
        for m in starts:
            pairs.append(LongitudinalPair(pid, m, by_month[m], by_month[m + HORIZON_MONTHS]))
    return pairs


@dataclass(frozen=True)
class CohortSplit:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def assert_disjoint(self) -> None:
        tr, va, te = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if tr & va or tr & te or va & te:
            raise ValueError("participant leakage: train/val/test id sets overlap")

    def to_dict(self) -> dict:
        return {"train": list(self.train_ids), "val": list(self.val_ids), "test": list(self.test_ids)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CohortSplit":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))


def split_by_participant(ids: Iterable[str], n_val: int, n_test: int, seed: int) -> CohortSplit:
    uniq = sorted(set(ids))
    if n_val < 0 or n_test < 0 or n_val + n_test >= len(uniq):
        raise InsufficientParticipantsError(
            f"{len(uniq)} participants cannot supply {n_val} val + {n_test} test and a non-empty train set"
        )
    order = np.random.default_rng(seed).permutation(len(uniq))
    shuffled = [uniq[i] for i in order]
    val = tuple(sorted(shuffled[:n_val]))
    test = tuple(sorted(shuffled[n_val : n_val + n_test]))
    train = tuple(sorted(shuffled[n_val + n_test :]))
    return CohortSplit(train, val, test)


def extrapolate_follow_up(x0: Volume, x_mid: Volume, from_month: float = 18, to_month: float = 24) -> Volume:
    """Linear per-voxel extrapolation of a shorter-interval follow-up, clamped to [0, 1]."""
    if x0.shape != x_mid.shape:
        raise ShapeMismatchError(f"shapes differ: {x0.shape} vs {x_mid.shape}")
    if from_month <= 0:
        raise ValueError("from_month must be positive")
    a = x0.data.astype(np.float64)
    b = x_mid.data.astype(np.float64)
    out = np.clip(a + (to_month / from_month) * (b - a), 0.0, 1.0)
    return Volume(out.astype(np.float32), x0.voxel_size_mm, x0.mask)


# -- cohort manifest -----------------------------------------------------------

MANIFEST_COLUMNS = ("participant_id", "month", "path")


@dataclass(frozen=True)
class ManifestRow:
    participant_id: str
    month: int
    path: str


def write_manifest(rows: Iterable[ManifestRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.participant_id, r.month, r.path])


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise ValueError(f"manifest columns must be {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}")
        return [ManifestRow(r["participant_id"], int(r["month"]), r["path"]) for r in reader]


def load_scans(manifest_path, ids: Iterable[str] | None = None) -> dict[str, list[tuple[int, Volume]]]:
    """Read every volume listed in the manifest (paths are relative to it)."""
    base = Path(manifest_path).parent
    keep = None if ids is None else set(ids)
    scans: dict[str, list[tuple[int, Volume]]] = defaultdict(list)
    for row in read_manifest(manifest_path):
        if keep is not None and row.participant_id not in keep:
            continue
        p = Path(row.path)
        scans[row.participant_id].append((row.month, load_volume(p if p.is_absolute() else base / p)))
    return dict(scans)


def relpath(path, start) -> str:
    return os.path.relpath(path, start).replace(os.sep, "/")
