"""Raw INT8 tensor files: ``RAWI``, rank (u8), dims (u32 LE each), row-major payload."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dbb_format import MAGIC as DBB_MAGIC
from .dbb_format import DbbTensor, load_tensor
from .errors import CorruptHeader, TruncatedStream

RAW_MAGIC = b"RAWI"


def raw_bytes(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.dtype != np.int8:
        if x.size and (x.min() < -128 or x.max() > 127):
            raise ValueError("values do not fit in INT8")
        x = x.astype(np.int8)
    if x.ndim > 255:
        raise ValueError("rank must fit in a byte")
    header = RAW_MAGIC + struct.pack("<B", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return header + np.ascontiguousarray(x).tobytes()


def parse_raw(data: bytes) -> np.ndarray:
    if len(data) < 5:
        raise TruncatedStream("raw tensor header is truncated")
    if data[:4] != RAW_MAGIC:
        raise CorruptHeader(f"bad magic {data[:4]!r}, expected {RAW_MAGIC!r}")
    rank = data[4]
    end = 5 + 4 * rank
    if len(data) < end:
        raise TruncatedStream("raw tensor dims are truncated")
    dims = struct.unpack(f"<{rank}I", data[5:end])
    n = int(np.prod(dims, dtype=np.int64))
    payload = data[end:]
    if len(payload) < n:
        raise TruncatedStream(f"raw payload has {len(payload)} of {n} bytes")
    if len(payload) > n:
        raise CorruptHeader(f"{len(payload) - n} trailing bytes after the raw payload")
    return np.frombuffer(payload, dtype=np.int8).reshape(dims).copy()


def save_raw(x: np.ndarray, path) -> None:
    Path(path).write_bytes(raw_bytes(x))


def load_raw(path) -> np.ndarray:
    return parse_raw(Path(path).read_bytes())


def load_any(path) -> "np.ndarray | DbbTensor":
    """A raw tensor, or a DBB file (detected by its magic)."""
    path = Path(path)
    with path.open("rb") as f:
        magic = f.read(4)
    if magic == DBB_MAGIC:
        return load_tensor(path)
    return load_raw(path)


def load_dense(path) -> np.ndarray:
    x = load_any(path)
    return x.to_dense() if isinstance(x, DbbTensor) else x
