"""Lossy Top-NNZ magnitude pruning into DBB form.

Two paths share one selection rule (keep the ``nnz`` largest magnitudes,
ties to the lowest index):

* offline weight pruning over whole tensors (:func:`prune_weight_tensor`);
* dynamic activation pruning (DAP), modelled block-by-block as the hardware
  cascade of magnitude maxpool stages (:func:`dap_prune_block`) and in bulk
  for activation tiles (:func:`prune_activation_tile`).

Magnitudes are taken in widened arithmetic so ``|-128| == 128``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dbb_format import (
    DbbBlock,
    DbbConfig,
    DbbTensor,
    _normalize_axis,
    select_positions,
    tensor_from_blocks,
    to_blocks,
)
from .errors import EmptySample, InvalidNnz, LengthMismatch, StageCapExceeded


@dataclass(frozen=True)
class DapArrayConfig:
    block_size: int = 8
    max_stages: int = 5

    def __post_init__(self):
        if not 1 <= self.max_stages <= self.block_size:
            raise InvalidNnz(f"max_stages must be in 1..{self.block_size}, got {self.max_stages}")


@dataclass(frozen=True)
class DapEventCounts:
    compare_ops: int = 0
    stages_used: int = 0

    def __add__(self, other: "DapEventCounts") -> "DapEventCounts":
        return DapEventCounts(self.compare_ops + other.compare_ops,
                              self.stages_used + other.stages_used)


def stages_for(nnz: int, config: DapArrayConfig, strict: bool) -> int:
    """Maxpool stages a block of density ``nnz`` needs; 0 means the DAP is bypassed."""
    if not 1 <= nnz <= config.block_size:
        raise InvalidNnz(f"nnz must be in 1..{config.block_size}, got {nnz}")
    if nnz == config.block_size:
        return 0
    if strict and nnz > config.max_stages:
        raise StageCapExceeded(
            f"nnz={nnz} needs {nnz} maxpool stages, the DAP array has {config.max_stages}"
        )
    return nnz


def magnitudes(x) -> np.ndarray:
    return np.abs(np.asarray(x, dtype=np.int16))


def dap_prune_block(dense: Sequence[int], nnz: int, config: DapArrayConfig = DapArrayConfig(),
                    strict: bool = False) -> tuple[DbbBlock, DapEventCounts]:
    """Prune one block through a cascade of ``nnz`` magnitude maxpool stages.

    Each stage scans the surviving elements with ``block_size - 1``
    comparators and takes the first maximum (a priority encoder toward index
    0), then discounts the winner for the following stages.  With
    ``nnz == block_size`` the cascade is bypassed and the block passes through.
    ``strict`` enforces the hardware stage cap.
    """
    dense = [int(v) for v in dense]
    if len(dense) != config.block_size:
        raise LengthMismatch(f"expected {config.block_size} elements, got {len(dense)}")
    stages = stages_for(nnz, config, strict)
    if stages == 0:
        mask = (1 << config.block_size) - 1
        return DbbBlock(tuple(dense), mask), DapEventCounts()

    remaining = [abs(v) for v in dense]
    alive = [True] * len(dense)
    mask = 0
    for _ in range(stages):
        winner = None
        for i, mag in enumerate(remaining):
            if alive[i] and (winner is None or mag > remaining[winner]):
                winner = i
        alive[winner] = False
        mask |= 1 << winner
    values = tuple(dense[i] for i in range(len(dense)) if mask >> i & 1)
    return DbbBlock(values, mask), DapEventCounts(stages * (config.block_size - 1), stages)


def topk_positions(blocks: np.ndarray, nnz: int) -> np.ndarray:
    """Sorted positions of the ``nnz`` largest magnitudes in each trailing-axis block."""
    return select_positions(blocks, nnz, -magnitudes(blocks))


def prune_blocks(x: np.ndarray, axis: int, config: DbbConfig) -> DbbTensor:
    x = np.asarray(x)
    axis = _normalize_axis(axis, x.ndim)
    blocks, _ = to_blocks(x, axis, config.block_size)
    return tensor_from_blocks(blocks, topk_positions(blocks, config.nnz), x.shape, axis, config)


def prune_weight_tensor(x: np.ndarray, axis: int, config: DbbConfig) -> DbbTensor:
    """Offline magnitude pruning of a weight tensor to the ``config`` bound along ``axis``."""
    return prune_blocks(x, axis, config)


def prune_activation_tile(tile: np.ndarray, layer_nnz: int,
                          dap_config: DapArrayConfig = DapArrayConfig(), axis: int = -1,
                          strict: bool = True) -> tuple[DbbTensor, DapEventCounts]:
    """Run DAP with one per-layer ``layer_nnz`` over every block of an activation tile.

    Blocks run along ``axis`` (the channel / reduction axis).  The event
    counts are the per-block cascade counts summed over the tile.
    """
    stages = stages_for(layer_nnz, dap_config, strict)
    t = prune_blocks(tile, axis, DbbConfig(dap_config.block_size, layer_nnz))
    events = DapEventCounts(t.num_blocks * stages * (dap_config.block_size - 1),
                            t.num_blocks * stages)
    return t, events


@dataclass
class RankHistogram:
    """Magnitude mass per within-block rank, accumulated over activation samples.

    ``mass[r]`` sums the ``r``-th largest magnitude of every observed block.
    Partial histograms from disjoint samples combine with :meth:`merge`.
    """

    block_size: int = 8
    mass: np.ndarray = field(default=None)
    blocks: int = 0
    max_nonzeros: int = 0

    def __post_init__(self):
        if self.mass is None:
            self.mass = np.zeros(self.block_size, dtype=np.int64)

    def update(self, x: np.ndarray, axis: int = -1) -> "RankHistogram":
        x = np.asarray(x)
        blocks, _ = to_blocks(x, _normalize_axis(axis, x.ndim), self.block_size)
        blocks = blocks.reshape(-1, self.block_size)
        if blocks.shape[0]:
            ranked = -np.sort(-magnitudes(blocks), axis=-1)
            self.mass += ranked.sum(axis=0, dtype=np.int64)
            self.max_nonzeros = max(self.max_nonzeros,
                                    int(np.count_nonzero(blocks, axis=-1).max()))
        self.blocks += blocks.shape[0]
        return self

    def merge(self, other: "RankHistogram") -> "RankHistogram":
        if other.block_size != self.block_size:
            raise ValueError("cannot merge histograms with different block sizes")
        return RankHistogram(self.block_size, self.mass + other.mass,
                             self.blocks + other.blocks,
                             max(self.max_nonzeros, other.max_nonzeros))

    def coverage(self, nnz: int) -> float:
        total = int(self.mass.sum())
        return 1.0 if total == 0 else int(self.mass[:nnz].sum()) / total


def nnz_for_coverage(hist: RankHistogram, coverage_fraction: float) -> int:
    """Smallest per-layer nnz whose kept magnitude mass reaches ``coverage_fraction``."""
    if hist.blocks == 0:
        raise EmptySample("no activation blocks observed")
    if not 0 < coverage_fraction <= 1:
        raise ValueError(f"coverage_fraction must be in (0, 1], got {coverage_fraction}")
    total = int(hist.mass.sum())
    if total == 0:
        return 1
    kept = np.cumsum(hist.mass)
    for nnz in range(1, hist.block_size + 1):
        if int(kept[nnz - 1]) >= coverage_fraction * total:
            return nnz
    return hist.block_size
