"""Binary checkpoint format.

Layout (little-endian)::

    b"XC1D" | u32 format version | u32 n | n bytes of JSON (model config + metadata)
    f64 best dev accuracy | u32 epoch | u32 parameter count
    per parameter: u16 name length | name | u8 ndim | u32 dims... | float32 data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, param_shapes
from .tensor import Tensor

MAGIC = b"XC1D"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    best_dev_accuracy: float = 0.0
    epoch: int = 0
    meta: dict = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    blob = json.dumps({"model": ckpt.config.to_dict(), "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    out.append(struct.pack("<dII", float(ckpt.best_dev_accuracy), int(ckpt.epoch), len(ckpt.params)))
    for name, p in ckpt.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
        out.append(np.asarray(p.data, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    r.take(4)
    version, blob_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    raw_blob = r.take(blob_len)
    try:
        blob = json.loads(raw_blob.decode("utf-8"))
        config = ModelConfig.from_dict(blob["model"])
        expected = param_shapes(config)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"unreadable config blob: {exc}") from None
    best, epoch, count = r.unpack("<dII")

    params: ModelParams = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if expected.get(name) != tuple(shape):
            raise CheckpointError(f"parameter {name!r} with shape {shape} does not fit the stored config")
        n = int(np.prod(shape))
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    if list(params) != list(expected):
        raise CheckpointError("parameter set does not match the stored config")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after parameters")
    return Checkpoint(config, params, best, epoch, blob.get("meta", {}))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
