"""Functional and event-counting models of the MAC datapaths.

Every function takes operands plus an accumulator value and returns the new
accumulator together with the events the hardware would generate.  A gated
MAC slot costs a cycle like any other but never touches the accumulator.

* ``scalar_mac``           1x1x1 PE of a classic systolic array
* ``dp8_dense``            8-MAC dot product
* ``dp8_zvcg``             8-MAC dot product with zero-value clock gating
* ``dp4m8``                4 MACs behind 8:1 muxes, 4/8 weight DBB
* ``dp4m4``                4 MACs behind 4:1 muxes, fixed 4/8 activation and weight DBB
* ``dp1m4_time_unrolled``  one MAC behind a 4:1 mux, one activation element per cycle
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

from .dbb_format import DbbBlock, DbbConfig, decompress_block
from .errors import AccumulatorOverflow, LengthMismatch, WrongBlockShape

ACC_MIN, ACC_MAX = -(1 << 31), (1 << 31) - 1
MAX_REDUCTION = 1 << 16
BLOCK_SIZE = 8
WEIGHT_NNZ = 4


@dataclass
class MacEventCounts:
    cycles: int = 0
    active_macs: int = 0
    gated_macs: int = 0
    mux_selects: int = 0
    acc_updates: int = 0

    def __add__(self, other: "MacEventCounts") -> "MacEventCounts":
        return MacEventCounts(*(getattr(self, f.name) + getattr(other, f.name)
                                for f in fields(self)))

    @property
    def slots(self) -> int:
        return self.active_macs + self.gated_macs


def _acc(acc: int, delta: int) -> int:
    out = acc + delta
    if not ACC_MIN <= out <= ACC_MAX:
        raise AccumulatorOverflow(f"accumulator {out} leaves the signed 32-bit range")
    return out


def _vec8(x: Sequence[int], name: str) -> list[int]:
    x = [int(v) for v in x]
    if len(x) != BLOCK_SIZE:
        raise LengthMismatch(f"{name} must have {BLOCK_SIZE} elements, got {len(x)}")
    return x


def _check_block(block: DbbBlock, nnz_range, name: str) -> None:
    if block.nnz not in nnz_range or block.mask >> BLOCK_SIZE:
        raise WrongBlockShape(f"{name} block {block} is not a valid {list(nnz_range)}/8 DBB block")
    if bin(block.mask).count("1") != block.nnz:
        raise WrongBlockShape(f"{name} mask {block.mask:#x} disagrees with {block.nnz} values")


def scalar_mac(a: int, w: int, acc: int, zvcg: bool = False) -> tuple[int, MacEventCounts]:
    if zvcg and (a == 0 or w == 0):
        return acc, MacEventCounts(cycles=1, gated_macs=1)
    return _acc(acc, a * w), MacEventCounts(cycles=1, active_macs=1, acc_updates=1)


def dp8_dense(a: Sequence[int], w: Sequence[int], acc: int) -> tuple[int, MacEventCounts]:
    a, w = _vec8(a, "a"), _vec8(w, "w")
    dot = sum(x * y for x, y in zip(a, w))
    return _acc(acc, dot), MacEventCounts(cycles=1, active_macs=8, acc_updates=1)


def dp8_zvcg(a: Sequence[int], w: Sequence[int], acc: int) -> tuple[int, MacEventCounts]:
    a, w = _vec8(a, "a"), _vec8(w, "w")
    live = [(x, y) for x, y in zip(a, w) if x != 0 and y != 0]
    dot = sum(x * y for x, y in live)
    ev = MacEventCounts(cycles=1, active_macs=len(live), gated_macs=8 - len(live),
                        acc_updates=int(bool(live)))
    return _acc(acc, dot), ev


def _dense_halves(w_block: DbbBlock) -> list[list[tuple[int, int]]]:
    """(position, value) lanes of a dense-fallback weight block, four per cycle."""
    lanes = list(zip(w_block.positions, w_block.values))
    return [lanes[i:i + WEIGHT_NNZ] for i in range(0, len(lanes), WEIGHT_NNZ)]


def dp4m8(a_dense: Sequence[int], w_block: DbbBlock, acc: int) -> tuple[int, MacEventCounts]:
    """4/8 W-DBB dot product: each weight nonzero steers its activation through an 8:1 mux.

    Lanes whose selected activation or weight is zero are clock gated.  An
    8/8 weight block falls back to dense operation as two 4-lane half blocks
    over two cycles.
    """
    a = _vec8(a_dense, "a")
    _check_block(w_block, (WEIGHT_NNZ, BLOCK_SIZE), "weight")
    ev = MacEventCounts()
    dot = 0
    for half in _dense_halves(w_block):
        live = [(p, v) for p, v in half if a[p] != 0 and v != 0]
        dot += sum(a[p] * v for p, v in live)
        ev += MacEventCounts(cycles=1, active_macs=len(live), gated_macs=WEIGHT_NNZ - len(live),
                             mux_selects=WEIGHT_NNZ)
    ev.acc_updates = int(ev.active_macs > 0)
    return _acc(acc, dot), ev


def dp4m4(a_block: DbbBlock, w_block: DbbBlock, acc: int) -> tuple[int, MacEventCounts]:
    """Fixed 4/8 activation and weight DBB: MACs fire on the mask intersection."""
    _check_block(a_block, (WEIGHT_NNZ,), "activation")
    _check_block(w_block, (WEIGHT_NNZ,), "weight")
    a = dict(zip(a_block.positions, a_block.values))
    live = [(a[p], v) for p, v in zip(w_block.positions, w_block.values)
            if p in a and a[p] != 0 and v != 0]
    dot = sum(x * y for x, y in live)
    ev = MacEventCounts(cycles=1, active_macs=len(live), gated_macs=WEIGHT_NNZ - len(live),
                        mux_selects=WEIGHT_NNZ, acc_updates=int(bool(live)))
    return _acc(acc, dot), ev


def dp1m4_time_unrolled(a_block: DbbBlock, w_block: DbbBlock, acc: int) -> tuple[int, MacEventCounts]:
    """Serialise the activation block: one element per cycle on a single MAC.

    Each cycle the activation's position indexes the weight mask; on a hit
    the 4:1 mux picks the matching weight nonzero and the MAC fires, on a
    miss (or a zero operand) the cycle is gated.  Cycles equal the activation
    nnz.  An 8/8 weight block is held as two 4-entry halves and the
    activation stream is replayed against each, doubling the cycles.
    """
    _check_block(a_block, range(1, BLOCK_SIZE + 1), "activation")
    _check_block(w_block, range(1, WEIGHT_NNZ + 1) if w_block.nnz <= WEIGHT_NNZ
                 else (BLOCK_SIZE,), "weight")
    ev = MacEventCounts()
    for half in _dense_halves(w_block):
        weights = dict(half)
        for p, x in zip(a_block.positions, a_block.values):
            v = weights.get(p, 0)
            if x != 0 and v != 0:
                acc = _acc(acc, x * v)
                ev += MacEventCounts(cycles=1, active_macs=1, mux_selects=1, acc_updates=1)
            else:
                ev += MacEventCounts(cycles=1, gated_macs=1, mux_selects=1)
    return acc, ev


def reference_dot(a_block: DbbBlock | Sequence[int], w_block: DbbBlock | Sequence[int]) -> int:
    """Scalar dot product of two (possibly compressed) 8-element operands."""
    def dense(x):
        if isinstance(x, DbbBlock):
            return decompress_block(x, DbbConfig(BLOCK_SIZE, x.nnz))
        return list(x)
    return sum(p * q for p, q in zip(dense(a_block), dense(w_block)))
