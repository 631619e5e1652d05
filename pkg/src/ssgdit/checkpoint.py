"""SSGM v1 model checkpoints.

Little-endian container:

    magic "SSGM" | version u32=1
    | config_len u32 | config JSON (UTF-8, sorted keys)
    | tensor_count u32
    | per tensor: name_len u32 | name UTF-8 | rank u32 | dims u32 x rank
                  | f32 data (row-major) | frozen flag u8

Tensors are written in sorted-name order so identical models always produce
identical bytes.  Values are stored as f32; loading a file and saving it
again reproduces the bytes exactly.  (In-memory training runs in f64, so
saving a trained model rounds each value to the nearest f32 - documented,
and the only lossy step anywhere in the format.)
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import FormatError
from .model import ModelConfig, SsgDitModel

MAGIC = b"SSGM"
VERSION = 1


def write_model(model: SsgDitModel, sink) -> int:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    config_bytes = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(config_bytes)))
    buf.write(config_bytes)
    names = sorted(model.params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = model.params[name]
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        buf.write(struct.pack("<B", 1 if model.frozen.get(name, False) else 0))
    data = buf.getvalue()
    sink.write(data)
    return len(data)


def _read_exact(source, count: int, what: str) -> bytes:
    data = source.read(count)
    if data is None or len(data) != count:
        raise FormatError(f"truncated SSGM stream while reading {what}")
    return data


def read_model(source) -> SsgDitModel:
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(source, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported SSGM version {version}")
    (config_len,) = struct.unpack("<I", _read_exact(source, 4, "config length"))
    try:
        config = ModelConfig.from_dict(json.loads(_read_exact(source, config_len, "config")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed SSGM config block: {exc}") from exc
    (count,) = struct.unpack("<I", _read_exact(source, 4, "tensor count"))
    params: dict[str, np.ndarray] = {}
    frozen: dict[str, bool] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(source, 4, "tensor name length"))
        name = _read_exact(source, name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(source, 4, "tensor rank"))
        dims = struct.unpack(f"<{rank}I", _read_exact(source, 4 * rank, "tensor dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(_read_exact(source, 4 * n, f"tensor {name}"), dtype="<f4")
        if not np.all(np.isfinite(data)):
            raise FormatError(f"tensor {name} contains non-finite values")
        params[name] = data.astype(np.float64).reshape(dims)
        (flag,) = struct.unpack("<B", _read_exact(source, 1, "frozen flag"))
        frozen[name] = bool(flag)
    return SsgDitModel(config=config, params=params, frozen=frozen)


def save_model(model: SsgDitModel, path) -> int:
    with open(path, "wb") as fh:
        return write_model(model, fh)


def load_model(path) -> SsgDitModel:
    with open(path, "rb") as fh:
        return read_model(fh)
