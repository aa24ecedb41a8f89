"""HYCK v1 checkpoints: named float32 tensors, little-endian.

Layout: magic ``HYCK``, u32 version, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 ndim, u32 dims[ndim], float32 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, ShapeMismatch, TruncatedPayload
from .model import ModelConfig, ModelParams, init_params

MAGIC = b"HYCK"
VERSION = 1


def write_tensors(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<2I", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.asarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise BadMagic(f"{path}: expected HYCK magic, got {buf[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise TruncatedPayload(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<2I")
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(buf):
            raise TruncatedPayload(f"{path}: truncated tensor name")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = take("<I")
        dims = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 4 * n > len(buf):
            raise TruncatedPayload(f"{path}: tensor {name!r} payload truncated")
        out[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float64)
        pos += 4 * n
    return out


def save_checkpoint(path, params: ModelParams) -> None:
    write_tensors(path, params.arrays())


def load_checkpoint(path, cfg: ModelConfig) -> ModelParams:
    """Load into the parameter layout implied by ``cfg``; names and shapes must match."""
    arrays = read_tensors(path)
    params = init_params(cfg, 0)
    expected = set(params.names())
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise ShapeMismatch(f"{path}: checkpoint does not fit config (missing {missing}, unexpected {extra})")
    for name, t in params.tensors.items():
        if arrays[name].shape != t.shape:
            raise ShapeMismatch(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = np.ascontiguousarray(arrays[name])
        t.zero_grad()
    return params
