"""Frame-feature container: "FEAT" magic, u32 frame count, u32 dim, f32 data.

All integers little-endian; payload is row-major float32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

MAGIC = b"FEAT"
_HEADER = struct.Struct("<4sII")


def write_features(path: str | Path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 2:
        raise InputError(f"expected [n_frames, dim] array, got shape {frames.shape}")
    if frames.shape[0] < 1 or frames.shape[1] < 1:
        raise InputError(f"empty feature array {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, frames.shape[0], frames.shape[1]))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_features(path: str | Path) -> np.ndarray:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot read feature file {path}: {exc}") from exc
    with fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, n_frames, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if n_frames < 1 or dim < 1:
            raise FormatError(f"{path}: invalid dimensions {n_frames}x{dim}")
        payload = fh.read(4 * n_frames * dim + 1)
    if len(payload) != 4 * n_frames * dim:
        raise FormatError(f"{path}: payload size mismatch for {n_frames}x{dim}")
    return np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim).astype(np.float64)
