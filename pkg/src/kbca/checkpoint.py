"""Binary model checkpoints.

Layout (little-endian)::

    "KBCA" | u32 version | u32 config_len | config JSON (UTF-8)
    repeated until EOF:
        u32 name_len | name (UTF-8) | u32 rank | u32 dim * rank | f64 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .numerics import Tensor

MAGIC = b"KBCA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cfg, params):
    """Write ``cfg`` and a name -> Tensor/array mapping to ``path``."""
    cfg_bytes = cfg.to_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg_bytes)), cfg_bytes]
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return ``(ModelConfig, {name: ndarray})``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a KBCA checkpoint")
    try:
        version, clen = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        cfg = ModelConfig.from_dict(json.loads(buf[off : off + clen].decode("utf-8")))
        off += clen
        params = {}
        while off < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if off + 8 * count > len(buf):
                raise CheckpointError(f"{path}: truncated blob {name!r}")
            params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return cfg, params
