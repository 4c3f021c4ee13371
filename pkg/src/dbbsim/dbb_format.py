"""Density Bound Block (DBB) compressed tensors.

A DBB block holds ``block_size`` (BZ) consecutive elements along a tensor's
reduction axis and stores at most ``nnz`` of them: the kept INT8 values in
ascending position order plus a BZ-bit positional mask (bit 0 = position 0).
Blocks with fewer natural nonzeros are topped up with explicit zeros at the
lowest unselected positions, so every stored block has exactly ``nnz`` set
mask bits.

Tensors are blocked along one axis.  The reduction axis is zero padded at the
high end up to a multiple of BZ, and blocks are laid out row-major over the
remaining axes with the reduction blocks innermost.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .errors import (
    ChecksumMismatch,
    ConfigError,
    CorruptHeader,
    DensityExceeded,
    LengthMismatch,
    MaskArityMismatch,
    TruncatedStream,
)

INT8_MIN, INT8_MAX = -128, 127

MAGIC = b"DBBT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBBB")
_CRC = struct.Struct("<I")
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class DbbConfig:
    """Block geometry: ``nnz`` stored elements out of every ``block_size``."""

    block_size: int = 8
    nnz: int = 4

    def __post_init__(self):
        if not 1 <= self.block_size <= 64:
            raise ConfigError(f"block_size must be in 1..64, got {self.block_size}")
        if not 1 <= self.nnz <= self.block_size:
            raise ConfigError(f"nnz must be in 1..{self.block_size}, got {self.nnz}")

    @classmethod
    def parse(cls, text: str, block_size: int = 8) -> "DbbConfig":
        """Parse ``"4/8"`` or ``"dense"``."""
        text = text.strip().lower()
        if text == "dense":
            return cls(block_size, block_size)
        try:
            nnz, bz = (int(part) for part in text.split("/"))
        except ValueError:
            raise ConfigError(f"bad DBB ratio {text!r}, expected 'NNZ/BZ' or 'dense'") from None
        return cls(bz, nnz)

    @property
    def mask_bytes(self) -> int:
        return -(-self.block_size // 8)

    @property
    def is_dense(self) -> bool:
        return self.nnz == self.block_size

    @property
    def density(self) -> float:
        return self.nnz / self.block_size

    def __str__(self):
        return f"{self.nnz}/{self.block_size}"


@dataclass(frozen=True)
class DbbBlock:
    values: tuple[int, ...]
    mask: int

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.mask.bit_length()) if self.mask >> i & 1)

    @property
    def nnz(self) -> int:
        return len(self.values)


def popcount(x: int) -> int:
    return bin(x).count("1")


def storage_bytes_per_block(config: DbbConfig) -> int:
    """Serialized bytes of one block: the values plus the packed mask."""
    return config.nnz + config.mask_bytes


def _check_int8(values) -> None:
    for v in values:
        if not INT8_MIN <= v <= INT8_MAX:
            raise ValueError(f"value {v} is outside signed 8-bit range")


def compress_block(dense: Sequence[int], config: DbbConfig) -> DbbBlock:
    """Losslessly compress one block; raises DensityExceeded above ``nnz`` nonzeros."""
    dense = [int(v) for v in dense]
    if len(dense) != config.block_size:
        raise LengthMismatch(f"expected {config.block_size} elements, got {len(dense)}")
    _check_int8(dense)
    kept = [i for i, v in enumerate(dense) if v != 0]
    if len(kept) > config.nnz:
        raise DensityExceeded(len(kept), config.nnz)
    fillers = [i for i, v in enumerate(dense) if v == 0][: config.nnz - len(kept)]
    positions = sorted(kept + fillers)
    mask = 0
    for p in positions:
        mask |= 1 << p
    return DbbBlock(tuple(dense[p] for p in positions), mask)


def decompress_block(block: DbbBlock, config: DbbConfig) -> list[int]:
    if popcount(block.mask) != config.nnz or len(block.values) != config.nnz:
        raise MaskArityMismatch(
            f"mask {block.mask:#x} has {popcount(block.mask)} bits for "
            f"{len(block.values)} values, config expects nnz={config.nnz}"
        )
    if block.mask >> config.block_size:
        raise MaskArityMismatch(f"mask {block.mask:#x} wider than block_size={config.block_size}")
    out = [0] * config.block_size
    for p, v in zip(block.positions, block.values):
        out[p] = v
    return out


# -- vectorised helpers -------------------------------------------------------


def select_positions(blocks: np.ndarray, nnz: int, key: np.ndarray) -> np.ndarray:
    """Per block, the ``nnz`` positions with the smallest ``key`` (ties to lower index), sorted ascending."""
    if key.ndim > 1 and key.size > _CHUNK_ELEMS:
        step = max(1, _CHUNK_ELEMS // (key.size // key.shape[0]))
        return np.concatenate([select_positions(blocks[i:i + step], nnz, key[i:i + step])
                               for i in range(0, key.shape[0], step)])
    order = np.argsort(key, axis=-1, kind="stable")[..., :nnz]
    return np.sort(order, axis=-1).astype(np.int16)


def pack_positions(blocks: np.ndarray, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gather values at ``positions`` and build the matching uint64 masks."""
    values = np.take_along_axis(blocks, positions, axis=-1).astype(np.int8)
    bits = np.left_shift(np.uint64(1), positions.astype(np.uint64))
    masks = np.bitwise_or.reduce(bits, axis=-1) if positions.shape[-1] else np.zeros(
        positions.shape[:-1], dtype=np.uint64
    )
    return values, masks.astype(np.uint64)


def mask_bits(masks: np.ndarray, block_size: int) -> np.ndarray:
    """Expand uint64 masks to a boolean array with a trailing ``block_size`` axis."""
    shifts = np.arange(block_size, dtype=np.uint64)
    return (np.right_shift(masks[..., None].astype(np.uint64), shifts) & np.uint64(1)).astype(bool)


def scatter_blocks(values: np.ndarray, masks: np.ndarray, block_size: int) -> np.ndarray:
    """Inverse of :func:`pack_positions`: dense ``(..., block_size)`` int8 blocks."""
    bits = mask_bits(masks, block_size)
    dense = np.zeros(bits.shape, dtype=np.int8)
    # boolean assignment fills set bits in row-major order, i.e. ascending position
    dense[bits] = values.reshape(-1)
    return dense


def to_blocks(x: np.ndarray, axis: int, block_size: int) -> tuple[np.ndarray, int]:
    """View ``x`` as ``(outer, n_blocks, block_size)`` blocks along ``axis``, zero padded.

    Returns the blocks and the logical (unpadded) reduction length.
    """
    x = np.asarray(x)
    if x.ndim == 0:
        raise ValueError("cannot block a scalar")
    if x.size and (x.min() < INT8_MIN or x.max() > INT8_MAX):
        raise ValueError("tensor values are outside signed 8-bit range")
    moved = np.moveaxis(x, axis, -1).astype(np.int8)
    length = moved.shape[-1]
    n_blocks = -(-length // block_size)
    outer = int(np.prod(moved.shape[:-1], dtype=np.int64))
    flat = moved.reshape(outer, length)
    pad = n_blocks * block_size - length
    if pad:
        flat = np.concatenate([flat, np.zeros((outer, pad), dtype=np.int8)], axis=1)
    return flat.reshape(outer, n_blocks, block_size), length


@dataclass(frozen=True, eq=False)
class DbbTensor:
    """A tensor stored as DBB blocks along ``axis``.

    ``values`` has shape ``(outer, n_blocks, nnz)`` and ``masks`` has shape
    ``(outer, n_blocks)``, where ``outer`` enumerates the non-reduction
    coordinates in row-major order.
    """

    config: DbbConfig
    shape: tuple[int, ...]
    axis: int
    values: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if not 0 <= self.axis < len(self.shape):
            raise ValueError(f"axis {self.axis} out of range for shape {self.shape}")
        expected = (self.outer, self.blocks_per_row)
        if self.masks.shape != expected or self.values.shape != expected + (self.config.nnz,):
            raise ValueError(
                f"block arrays {self.values.shape}/{self.masks.shape} do not match shape "
                f"{self.shape} with {self.config}"
            )

    @property
    def reduction_length(self) -> int:
        return self.shape[self.axis]

    @property
    def blocks_per_row(self) -> int:
        return -(-self.reduction_length // self.config.block_size)

    @property
    def outer(self) -> int:
        rest = self.shape[: self.axis] + self.shape[self.axis + 1 :]
        return int(np.prod(rest, dtype=np.int64))

    @property
    def num_blocks(self) -> int:
        return self.outer * self.blocks_per_row

    @property
    def payload_bytes(self) -> int:
        return self.num_blocks * storage_bytes_per_block(self.config)

    @property
    def dense_bytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def block(self, index: int) -> DbbBlock:
        o, b = divmod(index, self.blocks_per_row)
        return DbbBlock(tuple(int(v) for v in self.values[o, b]), int(self.masks[o, b]))

    def iter_blocks(self) -> Iterator[DbbBlock]:
        for i in range(self.num_blocks):
            yield self.block(i)

    def dense_blocks(self) -> np.ndarray:
        """Decompressed ``(outer, n_blocks, block_size)`` blocks, padding included."""
        return scatter_blocks(self.values, self.masks, self.config.block_size)

    def to_dense(self) -> np.ndarray:
        return unblock_tensor(self)

    def __eq__(self, other):
        if not isinstance(other, DbbTensor):
            return NotImplemented
        return (
            self.config == other.config
            and self.shape == other.shape
            and self.axis == other.axis
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.masks, other.masks)
        )

    __hash__ = None


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def tensor_from_blocks(blocks: np.ndarray, positions: np.ndarray, shape, axis: int,
                       config: DbbConfig) -> DbbTensor:
    values, masks = pack_positions(blocks, positions)
    return DbbTensor(config, tuple(shape), axis, values, masks)


def block_tensor(x: np.ndarray, axis: int, config: DbbConfig) -> DbbTensor:
    """Losslessly block ``x`` along ``axis``; every block must already satisfy the bound."""
    x = np.asarray(x)
    axis = _normalize_axis(axis, x.ndim)
    blocks, _ = to_blocks(x, axis, config.block_size)
    counts = np.count_nonzero(blocks, axis=-1)
    over = np.flatnonzero(counts > config.nnz)
    if over.size:
        first = int(over[0])
        raise DensityExceeded(int(counts.reshape(-1)[first]), config.nnz, block_index=first)
    positions = select_positions(blocks, config.nnz, blocks == 0)
    return tensor_from_blocks(blocks, positions, x.shape, axis, config)


def unblock_tensor(t: DbbTensor) -> np.ndarray:
    dense = t.dense_blocks().reshape(t.outer, -1)[:, : t.reduction_length]
    moved_shape = t.shape[: t.axis] + t.shape[t.axis + 1 :] + (t.reduction_length,)
    return np.moveaxis(dense.reshape(moved_shape), -1, t.axis)


# -- serialization -------------------------------------------------------------


def header_size(rank: int) -> int:
    return _HEADER.size + 4 * rank


def serialized_size(t: DbbTensor) -> int:
    return header_size(len(t.shape)) + t.payload_bytes + _CRC.size


def _payload_chunks(t: DbbTensor, rows_per_chunk: int = 1 << 16) -> Iterator[bytes]:
    mb = t.config.mask_bytes
    for start in range(0, t.outer, rows_per_chunk):
        vals = t.values[start : start + rows_per_chunk].reshape(-1, t.config.nnz).view(np.uint8)
        masks = t.masks[start : start + rows_per_chunk].reshape(-1).astype("<u8")
        mask_bytes = masks.view(np.uint8).reshape(-1, 8)[:, :mb]
        yield np.concatenate([vals, mask_bytes], axis=1).tobytes()


def write_tensor(t: DbbTensor, stream: BinaryIO) -> int:
    """Write ``t`` to a binary stream; returns the number of bytes written."""
    stream.write(_HEADER.pack(MAGIC, FORMAT_VERSION, t.config.block_size, t.config.nnz,
                              len(t.shape), t.axis))
    stream.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
    crc = 0
    for chunk in _payload_chunks(t):
        crc = zlib.crc32(chunk, crc)
        stream.write(chunk)
    stream.write(_CRC.pack(crc))
    return serialized_size(t)


def serialize_tensor(t: DbbTensor) -> bytes:
    buf = io.BytesIO()
    write_tensor(t, buf)
    return buf.getvalue()


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise TruncatedStream(f"stream ended inside {what}: wanted {n} bytes, got {len(data)}")
    return data


def read_tensor(stream: BinaryIO) -> DbbTensor:
    head = stream.read(_HEADER.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise CorruptHeader(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) != _HEADER.size:
        raise TruncatedStream("stream ended inside the header")
    _, version, bz, nnz, rank, axis = _HEADER.unpack(head)
    if version != FORMAT_VERSION:
        raise CorruptHeader(f"unsupported format version {version}")
    try:
        config = DbbConfig(bz, nnz)
    except ConfigError as exc:
        raise CorruptHeader(str(exc)) from None
    if rank == 0 or axis >= rank:
        raise CorruptHeader(f"reduction axis {axis} invalid for rank {rank}")
    shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, "dims"))
    outer = int(np.prod(shape[:axis] + shape[axis + 1 :], dtype=np.int64))
    n_rows = -(-shape[axis] // bz)
    width = storage_bytes_per_block(config)
    payload = _read_exact(stream, outer * n_rows * width, "block payload")
    (crc,) = _CRC.unpack(_read_exact(stream, _CRC.size, "checksum"))
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch("payload CRC32 does not match trailer")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(outer, n_rows, width)
    values = raw[..., :nnz].view(np.int8).copy()
    mask_raw = np.zeros((outer, n_rows, 8), dtype=np.uint8)
    mask_raw[..., : config.mask_bytes] = raw[..., nnz:]
    masks = mask_raw.view("<u8")[..., 0].astype(np.uint64)
    if masks.size:
        if hasattr(np, "bitwise_count"):
            counts = np.bitwise_count(masks)
        else:
            counts = mask_bits(masks, bz).sum(axis=-1)
        wide = bz < 64 and np.any(masks >> np.uint64(bz))
        if np.any(counts != nnz) or wide:
            raise CorruptHeader("a block mask disagrees with the header geometry")
    return DbbTensor(config, shape, axis, values, masks)


def deserialize_tensor(data: bytes) -> DbbTensor:
    stream = io.BytesIO(data)
    t = read_tensor(stream)
    if stream.read(1):
        raise CorruptHeader("trailing bytes after checksum")
    return t


def save_tensor(t: DbbTensor, path) -> int:
    with open(path, "wb") as fh:
        return write_tensor(t, fh)


def load_tensor(path) -> DbbTensor:
    with open(path, "rb") as fh:
        return read_tensor(fh)
