"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"RGNT"                 magic
    uint32                  format version
    uint32 + bytes          RegNetConfig as UTF-8 JSON (sorted keys)
    uint64                  training iteration
    float64 * N             parameters in canonical order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .network import RegNetConfig, RegNetParams

MAGIC = b"RGNT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    iteration: int
    config: RegNetConfig
    params: RegNetParams


def to_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config.to_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<Q", ckpt.iteration)]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in ckpt.params.tensors]
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise ParseError("not a checkpoint: bad magic")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", buf, 8)
    cfg = RegNetConfig.from_json(buf[12:12 + n].decode("utf-8"))
    off = 12 + n
    (iteration,) = struct.unpack_from("<Q", buf, off)
    off += 8
    tensors = []
    for shape in cfg.param_shapes():
        count = int(np.prod(shape))
        if off + 8 * count > len(buf):
            raise ParseError("truncated checkpoint")
        tensors.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape))
        off += 8 * count
    if off != len(buf):
        raise ParseError(f"{len(buf) - off} trailing bytes in checkpoint")
    return Checkpoint(iteration, cfg, RegNetParams(tensors))


def save(path, ckpt: Checkpoint):
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:08d}.rgnt"
