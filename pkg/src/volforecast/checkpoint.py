"""CKPT parameter files and their ``.opt`` Adam-state companions.

Layout: magic ``CKPT``, u32 format version, u32-length-prefixed architecture
tag, then until EOF repeated entries of (u32 name length, name bytes, u32
rank, u32 dims, f32 LE payload).  Model hyperparameters ride along as
``meta.*`` entries so a checkpoint alone can rebuild its model.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .models import ARCH_TAGS, ForecastModel, ModelSpec, build

MAGIC = b"CKPT"
VERSION = 1
_U32 = struct.Struct("<I")
_SPEC_INT_FIELDS = ("base_channels", "depth", "patch_size", "embed_dim", "heads",
                    "transformer_layers", "time_embed_dim", "ode_steps")


class CheckpointError(ValueError):
    pass


def _write_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(_U32.pack(len(b)))
    buf.write(b)


def encode_entries(arch: str, entries: list[tuple[str, np.ndarray]]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    _write_str(buf, arch)
    for name, arr in entries:
        a = np.asarray(arr)
        _write_str(buf, name)
        buf.write(_U32.pack(a.ndim))
        for d in a.shape:
            buf.write(_U32.pack(d))
        buf.write(a.astype("<f4").tobytes())
    return buf.getvalue()


def decode_entries(data: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    pos = 4

    def u32():
        nonlocal pos
        if pos + 4 > len(data):
            raise CheckpointError("truncated checkpoint")
        (v,) = _U32.unpack_from(data, pos)
        pos += 4
        return v

    def raw(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        out = data[pos : pos + n]
        pos += n
        return out

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = raw(u32()).decode("utf-8")
    if arch not in ARCH_TAGS:
        raise CheckpointError(f"unknown architecture tag {arch!r}")
    entries: dict[str, np.ndarray] = {}
    while pos < len(data):
        name = raw(u32()).decode("utf-8")
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        entries[name] = np.frombuffer(raw(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
    return arch, entries


def _meta(model: ForecastModel) -> list[tuple[str, np.ndarray]]:
    spec = model.spec
    out = [(f"meta.{k}", np.array(getattr(spec, k), dtype=np.float32)) for k in _SPEC_INT_FIELDS]
    out.append(("meta.input_shape", np.array(model.input_shape, dtype=np.float32)))
    return out


def save_checkpoint(model: ForecastModel, path, with_optimizer: bool = True) -> None:
    entries = _meta(model) + [(name, p.data) for name, p in model.named_parameters()]
    Path(path).write_bytes(encode_entries(model.arch, entries))
    if with_optimizer:
        opt = []
        for name, p in model.named_parameters():
            if p.requires_grad:
                opt += [(f"{name}.adam_m", p.adam_m), (f"{name}.adam_v", p.adam_v),
                        (f"{name}.step_count", np.array(p.step_count, dtype=np.float32))]
        Path(str(path) + ".opt").write_bytes(encode_entries(model.arch, opt))


def load_checkpoint(path, with_optimizer: bool = False) -> ForecastModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    arch, entries = decode_entries(data)
    try:
        kwargs = {k: int(entries.pop(f"meta.{k}")) for k in _SPEC_INT_FIELDS}
        shape = tuple(int(v) for v in entries.pop("meta.input_shape"))
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks metadata entry {e}") from None
    model = build(ModelSpec(arch, **kwargs), shape, seed=0)
    params = dict(model.named_parameters())
    if set(params) != set(entries):
        missing = sorted(set(params) - set(entries))
        extra = sorted(set(entries) - set(params))
        raise CheckpointError(f"parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in params.items():
        if entries[name].shape != p.shape:
            raise CheckpointError(f"shape mismatch for {name}: {entries[name].shape} vs {p.shape}")
        p.data = entries[name].copy()
    opt_path = Path(str(path) + ".opt")
    if with_optimizer and opt_path.exists():
        _, opt = decode_entries(opt_path.read_bytes())
        for name, p in params.items():
            if f"{name}.adam_m" in opt:
                p.adam_m = opt[f"{name}.adam_m"].copy()
                p.adam_v = opt[f"{name}.adam_v"].copy()
                p.step_count = int(opt[f"{name}.step_count"])
    return model
