"""Model checkpoints: full float64 state with optimizer moments and RNG.

Layout (all little-endian):
  magic "BBEX" | u32 version | u32 json_len | UTF-8 JSON header
  per parameter: u16 name_len | name | u8 ndim | u32 dims... |
                 f64 values | u8 frozen | f64 m | f64 v | u64 step
  trailing u64 model RNG state

The JSON header carries the model config, the ordered block index, the
expansion record, and the parameter count for a cheap integrity check.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import BlockInfo, EncoderConfig, EncoderModel
from .params import ParameterStore

MAGIC = b"BBEX"
VERSION = 1


def _write_exact(fh, data: bytes) -> None:
    fh.write(data)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return data


def save_checkpoint(path: str | Path, model: EncoderModel) -> None:
    header = {
        "config": model.config.to_dict(),
        "block_index": [b.to_dict() for b in model.block_index],
        "expansion": model.expansion,
        "n_params": len(model.store),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name, entry in model.store.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            value = np.ascontiguousarray(entry.tensor.data, dtype="<f8")
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())
            fh.write(struct.pack("<B", 1 if entry.frozen else 0))
            fh.write(np.ascontiguousarray(entry.m, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(entry.v, dtype="<f8").tobytes())
            fh.write(struct.pack("<Q", entry.step))
        fh.write(struct.pack("<Q", model.rng_state))


def load_checkpoint(path: str | Path) -> EncoderModel:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (json_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, json_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt header ({exc})") from exc
        try:
            config = EncoderConfig.from_dict(header["config"])
            block_index = [BlockInfo.from_dict(b) for b in header["block_index"]]
            n_params = int(header["n_params"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: incomplete header ({exc})") from exc

        store = ParameterStore()
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, f"{name} ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name} shape"))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            value = np.frombuffer(
                _read_exact(fh, 8 * count, f"{name} values"), dtype="<f8").reshape(shape)
            (frozen,) = struct.unpack("<B", _read_exact(fh, 1, f"{name} frozen flag"))
            m = np.frombuffer(
                _read_exact(fh, 8 * count, f"{name} first moment"), dtype="<f8").reshape(shape)
            v = np.frombuffer(
                _read_exact(fh, 8 * count, f"{name} second moment"), dtype="<f8").reshape(shape)
            (step,) = struct.unpack("<Q", _read_exact(fh, 8, f"{name} step"))
            store.add(name, value.copy(), frozen=bool(frozen),
                      m=m.copy(), v=v.copy(), step=step)
        (rng_state,) = struct.unpack("<Q", _read_exact(fh, 8, "rng state"))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after checkpoint payload")

    model = EncoderModel(config, store, block_index, rng_state,
                         expansion=header.get("expansion"))
    _check_structure(model)
    return model


def _check_structure(model: EncoderModel) -> None:
    """Every indexed block must have its full parameter set in the store."""
    from .model import BLOCK_PARAM_SHAPES

    for info in model.block_index:
        prefix = f"block.{info.block_id}."
        for suffix, _ in BLOCK_PARAM_SHAPES:
            if prefix + suffix not in model.store:
                raise FormatError(f"checkpoint missing parameter {prefix + suffix}")
        if info.origin == "expanded" and prefix + "zll.weight" not in model.store:
            raise FormatError(f"checkpoint missing parameter {prefix}zll.weight")
    for name in ("head.weight", "head.bias"):
        if name not in model.store:
            raise FormatError(f"checkpoint missing parameter {name}")
