"""Cycle-level model of an output-stationary TPE systolic array.

The output matrix is cut into tiles of ``a*m`` rows by ``c*n`` columns.
Each tile streams once over the reduction dimension and pays the systolic
skew ``(m-1)+(n-1)`` on top of its compute cycles:

    SA, SA-ZVCG   k                          scalar MAC per element
    S2TA-W        ceil(k/BZ)                 one weight block per cycle (DP4M8)
    S2TA-AW       ceil(k/BZ) * a_nnz         one activation element per cycle (DP1M4)

Dense weights on the DBB modes run as two half blocks, doubling the compute
cycles.  Accumulator drain overlaps the next tile's fill.

Numeric results come from the mode's compressed operands and always equal
``DAP(A, a_nnz) @ W``.  Event counts are computed in closed form over the
operands; ``trace=True`` instead drives the datapath models lane by lane
(slow, for validation on small problems).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import datapath as dp
from .arch import ArrayConfig, Mode
from .dbb_format import (
    DbbConfig,
    DbbTensor,
    block_tensor,
    storage_bytes_per_block,
    to_blocks,
)
from .errors import AccumulatorOverflow, DensityExceeded, InvalidNnz, ShapeMismatch
from .problem import GemmProblem
from .pruning import DapArrayConfig, DapEventCounts, prune_activation_tile, prune_blocks
from .report import SimReport, merge_reports

ACC_BYTES = 4


@dataclass(frozen=True)
class Tile:
    row0: int
    rows: int
    col0: int
    cols: int


@dataclass(frozen=True)
class Traffic:
    weight: int
    activation: int
    output: int
    refetch_passes: int = 0

    @property
    def total(self) -> int:
        return self.weight + self.activation + self.output


@dataclass(frozen=True)
class BufferAccount:
    operand_bytes_per_mac: float
    accumulator_bytes_per_mac: float
    total_bytes_per_mac: float
    note: str | None = None


# Published per-MAC values the register-count formula does not reproduce for W-DBB.
S2TA_W_PUBLISHED_ROW = (0.375, 0.5, 0.875)


def plan_tiles(problem: GemmProblem, config: ArrayConfig) -> list[Tile]:
    """Output-stationary tiling; edge tiles keep their real extent."""
    th, tw = config.tile_rows, config.tile_cols
    return [Tile(r, min(th, problem.rows - r), c, min(tw, problem.cols - c))
            for r in range(0, problem.rows, th)
            for c in range(0, problem.cols, tw)]


def n_blocks(k: int, block_size: int) -> int:
    return -(-k // block_size)


def block_step_cycles(config: ArrayConfig, a_nnz: int, fallback: bool) -> int:
    halves = 2 if fallback else 1
    if config.mode is Mode.S2TA_AW:
        return a_nnz * halves
    return halves


def compute_cycles(k: int, config: ArrayConfig, a_nnz: int = 8, fallback: bool = False) -> int:
    if not config.mode.uses_dbb:
        return k
    return n_blocks(k, config.block_size) * block_step_cycles(config, a_nnz, fallback)


def tile_cycles(problem: GemmProblem, config: ArrayConfig, fallback: bool | None = None) -> int:
    """Cycles of one tile pass over ``problem``'s reduction dimension, skew included."""
    if fallback is None:
        fallback = weight_fallback(problem, config)
    return compute_cycles(problem.k, config, problem.a_nnz, fallback) + config.skew_cycles


def weight_block_bytes(config: ArrayConfig, fallback: bool) -> int:
    if not config.mode.uses_dbb or fallback or config.weight_nnz == config.block_size:
        return config.block_size
    return storage_bytes_per_block(DbbConfig(config.block_size, config.weight_nnz))


def activation_block_bytes(config: ArrayConfig, a_nnz: int) -> int:
    if config.mode is Mode.S2TA_AW and a_nnz < config.block_size:
        return storage_bytes_per_block(DbbConfig(config.block_size, a_nnz))
    return config.block_size


def _tile_traffic(tile: Tile, k: int, config: ArrayConfig, a_nnz: int, fallback: bool) -> Traffic:
    if config.mode.uses_dbb:
        nb = n_blocks(k, config.block_size)
        w = nb * tile.cols * weight_block_bytes(config, fallback)
    else:
        w = k * tile.cols
    if config.mode is Mode.S2TA_AW:
        a = n_blocks(k, config.block_size) * tile.rows * activation_block_bytes(config, a_nnz)
    else:
        a = k * tile.rows
    refetch = (max(0, math.ceil(w / config.wb_bytes) - 1)
               + max(0, math.ceil(a / config.ab_bytes) - 1))
    return Traffic(w, a, tile.rows * tile.cols * config.output_bytes, refetch)


def sram_traffic(problem: GemmProblem, config: ArrayConfig, fallback: bool | None = None) -> Traffic:
    """SRAM bytes moved over all tile passes.

    Operands are read once per tile pass at their stored size (values plus
    masks for DBB data); outputs are written once.  A tile whose operand
    footprint exceeds the weight or activation buffer is reported as extra
    refetch passes; double buffering hides the DMA so no cycles are added.
    """
    if fallback is None:
        fallback = weight_fallback(problem, config)
    parts = [_tile_traffic(t, problem.k, config, problem.a_nnz, fallback)
             for t in plan_tiles(problem, config)]
    return Traffic(sum(p.weight for p in parts), sum(p.activation for p in parts),
                   sum(p.output for p in parts), sum(p.refetch_passes for p in parts))


def _operand_bytes_per_tpe(config: ArrayConfig) -> tuple[int, int]:
    """(activation bytes written per cycle, weight bytes written per block step) per TPE."""
    if config.mode is Mode.S2TA_W:
        return config.a * config.block_size, config.weight_nnz * config.c
    if config.mode is Mode.S2TA_AW:
        return config.a, config.weight_nnz * config.c
    return config.a, config.b * config.c


def buffer_account(config: ArrayConfig) -> BufferAccount:
    """PE register bytes per physical MAC; positional masks are not counted.

    One 4-byte accumulator sits behind every MAC (SA, S2TA-AW) or every
    dot-product unit (S2TA-W).
    """
    act, wt = config.a, config.b * config.c
    accumulators = config.a * config.c
    operand = (act + wt) / config.macs_per_tpe
    acc = accumulators * ACC_BYTES / config.macs_per_tpe
    note = None
    if config.mode is Mode.S2TA_W:
        t_op, t_acc, t_tot = S2TA_W_PUBLISHED_ROW
        note = (f"formula gives {operand:g}/{acc:g}/{operand + acc:g} B per MAC for "
                f"{config.notation}; the published W-DBB row lists {t_op}/{t_acc}/{t_tot} B "
                "for a different TPE shape and is not derivable from the register counts")
    return BufferAccount(operand, acc, operand + acc, note)


# -- operand preparation ---------------------------------------------------------


@dataclass
class Operands:
    activation: np.ndarray             # pruned, dense rows x k
    weight: np.ndarray                 # dense k x cols
    activation_t: DbbTensor | None     # S2TA-AW compressed activation (axis 1)
    weight_t: DbbTensor | None         # DBB-mode compressed weight (axis 0)
    fallback: bool
    dap: DapEventCounts


def weight_fallback(problem: GemmProblem, config: ArrayConfig) -> bool:
    """Whether the DBB array must process ``problem``'s weights densely."""
    if not config.mode.uses_dbb:
        return False
    if config.weight_nnz == config.block_size:
        return True
    w = problem.weight
    if isinstance(w, DbbTensor) and w.config.block_size == config.block_size \
            and w.config.nnz <= config.weight_nnz:
        return False
    blocks, _ = to_blocks(problem.dense_weight(), 0, config.block_size)
    return bool(np.any(np.count_nonzero(blocks, axis=-1) > config.weight_nnz))


def prepare_operands(problem: GemmProblem, config: ArrayConfig,
                     allow_dense_fallback: bool = True) -> Operands:
    bz = config.block_size
    if not 1 <= problem.a_nnz <= bz:
        raise InvalidNnz(f"a_nnz must be in 1..{bz}, got {problem.a_nnz}")
    if problem.k > dp.MAX_REDUCTION:
        raise ShapeMismatch(f"reduction length {problem.k} exceeds {dp.MAX_REDUCTION}; "
                            "32-bit accumulators could overflow")

    weight = problem.dense_weight()
    weight_t, fallback = None, False
    if config.mode.uses_dbb:
        try:
            weight_t = block_tensor(weight, 0, DbbConfig(bz, config.weight_nnz))
            fallback = config.weight_nnz == bz
        except DensityExceeded:
            if not allow_dense_fallback:
                raise
            weight_t = block_tensor(weight, 0, DbbConfig(bz, bz))
            fallback = True

    dap_events = DapEventCounts()
    activation_t = None
    if config.mode is Mode.S2TA_AW:
        activation_t, dap_events = prune_activation_tile(
            problem.activation, problem.a_nnz, DapArrayConfig(bz, config.dap_max_stages),
            axis=1, strict=config.dap_strict)
        activation = activation_t.to_dense()
    elif problem.a_nnz < bz:
        activation = prune_blocks(problem.activation, 1, DbbConfig(bz, problem.a_nnz)).to_dense()
    else:
        activation = problem.activation.astype(np.int8)
    return Operands(activation, weight, activation_t, weight_t, fallback, dap_events)


# -- numeric paths ------------------------------------------------------------


def _position_planes(t: DbbTensor) -> np.ndarray:
    """Mux outputs of a compressed operand, ``(BZ, outer, n_blocks)`` float64.

    Plane ``p`` holds, per block, the stored value at position ``p`` or 0.
    """
    return np.moveaxis(t.dense_blocks(), -1, 0).astype(np.float64)


def _compute_output(ops: Operands, config: ArrayConfig, tiles: Sequence[Tile]) -> np.ndarray:
    rows, k = ops.activation.shape
    cols = ops.weight.shape[1]
    out = np.zeros((rows, cols), dtype=np.float64)
    if config.mode.uses_dbb:
        bz = config.block_size
        w_planes = _position_planes(ops.weight_t)          # (bz, cols, nb)
        if ops.activation_t is not None:
            a_planes = _position_planes(ops.activation_t)  # (bz, rows, nb)
        else:
            blocks, _ = to_blocks(ops.activation, 1, bz)
            a_planes = np.moveaxis(blocks, -1, 0).astype(np.float64)
        for t in tiles:
            rs, cs = slice(t.row0, t.row0 + t.rows), slice(t.col0, t.col0 + t.cols)
            acc = out[rs, cs]
            for p in range(bz):
                acc += a_planes[p, rs] @ w_planes[p, cs].T
    else:
        a = ops.activation.astype(np.float64)
        w = ops.weight.astype(np.float64)
        for t in tiles:
            rs, cs = slice(t.row0, t.row0 + t.rows), slice(t.col0, t.col0 + t.cols)
            out[rs, cs] = a[rs] @ w[:, cs]
    result = np.rint(out).astype(np.int64)
    if result.size and (result.min() < dp.ACC_MIN or result.max() > dp.ACC_MAX):
        raise AccumulatorOverflow("an output leaves the signed 32-bit accumulator range")
    return result.astype(np.int32)


# -- event accounting ----------------------------------------------------------


def _nonzero_pairs(activation: np.ndarray, weight: np.ndarray) -> int:
    """Count of (row, col, k) with both operands nonzero."""
    a = np.count_nonzero(activation, axis=0).astype(np.int64)
    w = np.count_nonzero(weight, axis=1).astype(np.int64)
    return int(a @ w)


def _dot_units_fired(activation: np.ndarray, weight: np.ndarray, bz: int) -> int:
    """Count of (row, col, block) dot products with at least one live lane."""
    a_blocks, _ = to_blocks(activation, 1, bz)   # rows, nb, bz
    w_blocks, _ = to_blocks(weight, 0, bz)       # cols, nb, bz
    total = 0
    for b in range(a_blocks.shape[1]):
        hits = (a_blocks[:, b] != 0).astype(np.float32) @ (w_blocks[:, b] != 0).astype(np.float32).T
        total += int(np.count_nonzero(hits))
    return total


@dataclass
class _Events:
    active: int = 0
    acc_updates: int = 0
    mux_selects: int = 0


def _closed_form_events(ops: Operands, config: ArrayConfig, a_nnz: int) -> _Events:
    rows, k = ops.activation.shape
    cols = ops.weight.shape[1]
    bz = config.block_size
    if config.mode is Mode.SA:
        macs = rows * cols * k
        return _Events(macs, macs, 0)
    pairs = _nonzero_pairs(ops.activation, ops.weight)
    if config.mode is Mode.SA_ZVCG:
        return _Events(pairs, pairs, 0)
    halves = 2 if ops.fallback else 1
    lanes = rows * cols * n_blocks(k, bz)
    if config.mode is Mode.S2TA_W:
        fired = _dot_units_fired(ops.activation, ops.weight, bz)
        return _Events(pairs, fired, lanes * config.weight_nnz * halves)
    return _Events(pairs, pairs, lanes * a_nnz * halves)


def _traced_events(ops: Operands, config: ArrayConfig, tiles: Sequence[Tile]):
    """Drive the datapath models lane by lane; returns (events, output)."""
    if config.mode.uses_dbb and config.weight_nnz != dp.WEIGHT_NNZ:
        raise ValueError(f"trace mode models {dp.WEIGHT_NNZ}-lane datapaths only")
    rows, k = ops.activation.shape
    cols = ops.weight.shape[1]
    bz = config.block_size
    out = np.zeros((rows, cols), dtype=np.int64)
    ev = dp.MacEventCounts()
    a_blocks, _ = to_blocks(ops.activation, 1, bz)
    nb = a_blocks.shape[1]
    for t in tiles:
        for r in range(t.row0, t.row0 + t.rows):
            for c in range(t.col0, t.col0 + t.cols):
                acc = 0
                if not config.mode.uses_dbb:
                    zvcg = config.mode is Mode.SA_ZVCG
                    for kk in range(k):
                        acc, e = dp.scalar_mac(int(ops.activation[r, kk]), int(ops.weight[kk, c]),
                                               acc, zvcg)
                        ev += e
                elif config.mode is Mode.S2TA_W:
                    for b in range(nb):
                        acc, e = dp.dp4m8(a_blocks[r, b], ops.weight_t.block(c * nb + b), acc)
                        ev += e
                else:
                    for b in range(nb):
                        acc, e = dp.dp1m4_time_unrolled(ops.activation_t.block(r * nb + b),
                                                        ops.weight_t.block(c * nb + b), acc)
                        ev += e
                out[r, c] = acc
    return _Events(ev.active_macs, ev.acc_updates, ev.mux_selects), out.astype(np.int32), ev


def run_gemm(problem: GemmProblem, config: ArrayConfig, compute_output: bool = True,
             trace: bool = False, allow_dense_fallback: bool = True):
    """Simulate ``problem`` on ``config``; returns ``(output or None, SimReport)``."""
    ops = prepare_operands(problem, config, allow_dense_fallback)
    tiles = plan_tiles(problem, config)
    cc = compute_cycles(problem.k, config, problem.a_nnz, ops.fallback)
    output = None
    if trace:
        events, output, _ = _traced_events(ops, config, tiles)
    else:
        events = _closed_form_events(ops, config, problem.a_nnz)
        if compute_output:
            output = _compute_output(ops, config, tiles)

    traffic = [_tile_traffic(t, problem.k, config, problem.a_nnz, ops.fallback) for t in tiles]
    slots = len(tiles) * config.physical_macs * cc
    act_b, wt_b = _operand_bytes_per_tpe(config)
    if config.mode is Mode.S2TA_AW:
        steps = n_blocks(problem.k, config.block_size) * (2 if ops.fallback else 1)
    else:
        steps = cc
    reg_writes = len(tiles) * config.n_tpes * (act_b * cc + wt_b * steps)

    report = SimReport(
        name=problem.name, mode=config.mode.value, arch=config.notation,
        rows=problem.rows, cols=problem.cols, k=problem.k, a_nnz=problem.a_nnz,
        physical_macs=config.physical_macs, clock_hz=config.clock_hz,
        cycles=len(tiles) * (cc + config.skew_cycles),
        fill_cycles=len(tiles) * config.skew_cycles,
        active_macs=events.active, gated_macs=slots - events.active,
        dense_macs=problem.dense_macs, reg_write_bytes=reg_writes,
        acc_updates=events.acc_updates, mux_selects=events.mux_selects,
        dap_compares=ops.dap.compare_ops,
        weight_bytes_read=sum(t.weight for t in traffic),
        activation_bytes_read=sum(t.activation for t in traffic),
        output_bytes_written=sum(t.output for t in traffic),
        tile_count=len(tiles), refetch_passes=sum(t.refetch_passes for t in traffic),
        dense_fallback_tiles=len(tiles) if ops.fallback else 0,
        seed=problem.seed,
    )
    return output, report


def run_layer(layer, config: ArrayConfig, seed: int = 0) -> SimReport:
    """Lower ``layer`` to GEMM(s) on synthetic operands and simulate it.

    A fixed non-GEMM overhead per output element models the MCU path
    (activation function, pooling, requantization).
    """
    from .workloads import layer_problems

    reports = [run_gemm(p, config, compute_output=False)[1]
               for p in layer_problems(layer, config.block_size, seed)]
    rows, cols, k = layer.gemm_dims()
    report = merge_reports(layer.name, reports, keep_layers=False)
    report.rows, report.cols, report.k, report.a_nnz = rows, cols, k, layer.a_nnz
    report.mcu_cycles = math.ceil(layer.output_elements * config.non_gemm_cycles_per_elem)
    report.cycles += report.mcu_cycles
    report.seed = seed
    return report


def run_network(network, config: ArrayConfig, seed: int = 0) -> SimReport:
    layers = [run_layer(layer, config, seed=seed + i) for i, layer in enumerate(network.layers)]
    report = merge_reports(network.name, layers)
    report.seed = seed
    return report
