"""The "CSFM" model file format shared by float and int8 models.

Layout (little-endian)::

    b"CSFM"  u16 version
    u32 config length, config JSON (utf-8, sorted keys)
    u32 tensor count
    per tensor: u16 name length, name, u8 dtype (0=f32, 1=i8), u8 rank,
                u32 dims[rank], f32 scale (i8 only), payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CSFM"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1


class FormatError(ValueError):
    pass


@dataclass
class TensorRecord:
    name: str
    data: np.ndarray  # float32 or int8
    scale: float | None = None


def write_model_file(path, config: dict, tensors: list[TensorRecord]) -> int:
    """Serialise to ``path``; returns the file size in bytes."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for t in tensors:
        name = t.name.encode()
        if t.data.dtype == np.int8:
            tag, payload = DTYPE_I8, t.data
        else:
            tag, payload = DTYPE_F32, t.data.astype("<f4", copy=False)
        parts += [struct.pack("<H", len(name)), name, struct.pack("<BB", tag, t.data.ndim),
                  struct.pack(f"<{t.data.ndim}I", *t.data.shape)]
        if tag == DTYPE_I8:
            parts.append(struct.pack("<f", t.scale))
        parts.append(np.ascontiguousarray(payload).tobytes())
    data = b"".join(parts)
    Path(path).write_bytes(data)
    return len(data)


def read_model_file(path) -> tuple[dict, list[TensorRecord]]:
    buf = Path(path).read_bytes()
    try:
        return _parse(buf, path)
    except FormatError:
        raise
    except (struct.error, ValueError) as exc:  # short reads, bad JSON or utf-8
        raise FormatError(f"{path}: truncated or corrupt model file ({exc})") from None


def _parse(buf: bytes, path) -> tuple[dict, list[TensorRecord]]:
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a CSFM model file")
    pos = 4
    (version,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    config = json.loads(buf[pos:pos + n].decode())
    pos += n
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        tag, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        scale = None
        if tag == DTYPE_I8:
            (scale,) = struct.unpack_from("<f", buf, pos)
            pos += 4
            dtype, width = np.int8, 1
        elif tag == DTYPE_F32:
            dtype, width = np.dtype("<f4"), 4
        else:
            raise FormatError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        size = int(np.prod(dims, dtype=np.int64)) * width
        arr = np.frombuffer(buf, dtype=dtype, count=size // width, offset=pos).reshape(dims).copy()
        pos += size
        tensors.append(TensorRecord(name, arr.astype(np.float32) if tag == DTYPE_F32 else arr, scale))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return config, tensors


def save_model(model, path) -> int:
    """Write a float model (any float dtype is stored as f32)."""
    recs = [TensorRecord(name, np.asarray(arr, dtype=np.float32)) for name, arr in model.state()]
    return write_model_file(path, model.config.to_dict(), recs)


def load_any(path):
    """Load a float :class:`Model` or a :class:`QuantizedModel`, whichever the file holds."""
    from .model import ModelConfig, build_model
    from .quantize import QuantizedModel, QuantizedTensor

    config_d, recs = read_model_file(path)
    config = ModelConfig.from_dict(config_d)
    if any(r.scale is not None for r in recs):
        tensors = {r.name: r.data if r.scale is None else QuantizedTensor(r.data, np.float32(r.scale), r.data.shape)
                   for r in recs}
        return QuantizedModel(config, tensors)
    model = build_model(config, seed=0)
    model.load_state({r.name: r.data for r in recs})
    return model


def file_size_kb(path) -> float:
    return Path(path).stat().st_size / 1024.0
