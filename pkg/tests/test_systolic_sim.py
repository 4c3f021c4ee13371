import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbbsim.arch import ArrayConfig, Mode
from dbbsim.dbb_format import DbbConfig, block_tensor
from dbbsim.errors import DensityExceeded, InvalidNnz, ShapeMismatch, StageCapExceeded
from dbbsim.problem import GemmProblem
from dbbsim.pruning import dap_prune_block
from dbbsim.systolic_sim import (
    buffer_account,
    plan_tiles,
    run_gemm,
    run_layer,
    run_network,
    sram_traffic,
    tile_cycles,
)
from dbbsim.workloads import LayerSpec, NetworkSpec, random_dbb, synth_microbench

MODES = list(Mode)
REF = {m: ArrayConfig.reference(m) for m in MODES}


def oracle(problem: GemmProblem) -> np.ndarray:
    """Scalar-cascade DAP on every activation block, then an int64 matmul."""
    a = problem.activation.astype(np.int64)
    if problem.a_nnz < 8:
        pruned = np.zeros_like(a)
        for r in range(a.shape[0]):
            for b0 in range(0, a.shape[1], 8):
                blk = a[r, b0:b0 + 8].tolist()
                blk += [0] * (8 - len(blk))
                block, _ = dap_prune_block(blk, problem.a_nnz)
                for p, v in zip(block.positions, block.values):
                    if b0 + p < a.shape[1]:
                        pruned[r, b0 + p] = v
        a = pruned
    return a @ problem.dense_weight().astype(np.int64)


def problem_from(rows, cols, k, w_nnz, a_nnz, seed, dense_act=True):
    rng = np.random.default_rng(seed)
    w = random_dbb(rng, cols, k, w_nnz).T.copy()
    a = rng.integers(-128, 128, size=(rows, k)).astype(np.int8) if dense_act \
        else random_dbb(rng, rows, k, a_nnz)
    return GemmProblem(a, w, a_nnz=a_nnz, seed=seed)


# -- tiling and cycle laws --------------------------------------------------------------


def test_plan_tiles_examples():
    p = synth_microbench(64, 32, 16)
    assert [(t.rows, t.cols) for t in plan_tiles(p, REF[Mode.S2TA_AW])] == [(64, 32)]
    p = synth_microbench(65, 32, 16)
    tiles = plan_tiles(p, REF[Mode.S2TA_AW])
    assert [(t.row0, t.rows) for t in tiles] == [(0, 64), (64, 1)]
    assert (REF[Mode.SA].tile_rows, REF[Mode.SA].tile_cols) == (32, 64)


def test_plan_tiles_cover_output_once():
    p = synth_microbench(100, 70, 8)
    cover = np.zeros((100, 70), dtype=int)
    for t in plan_tiles(p, REF[Mode.S2TA_W]):
        cover[t.row0:t.row0 + t.rows, t.col0:t.col0 + t.cols] += 1
    assert (cover == 1).all()


@pytest.mark.parametrize("mode,a_nnz,expected", [
    (Mode.SA, 8, 4096 + 31 + 63),
    (Mode.SA_ZVCG, 3, 4096 + 31 + 63),
    (Mode.S2TA_W, 8, 512 + 3 + 7),
    (Mode.S2TA_AW, 4, 512 * 4 + 7 + 7),
    (Mode.S2TA_AW, 1, 512 + 14),
])
def test_tile_cycles_examples(mode, a_nnz, expected):
    p = synth_microbench(8, 8, 4096, a_nnz=a_nnz)
    assert tile_cycles(p, REF[mode]) == expected


def test_tile_cycles_partial_block_rounds_up():
    p = synth_microbench(8, 8, 20, a_nnz=2)
    assert tile_cycles(p, REF[Mode.S2TA_AW]) == 3 * 2 + 14


def test_dense_weight_fallback_doubles_cycles():
    rng = np.random.default_rng(0)
    w = rng.integers(1, 100, size=(64, 8)).astype(np.int8)
    p = GemmProblem(rng.integers(-5, 5, size=(8, 64)).astype(np.int8), w, a_nnz=2)
    for mode, base in ((Mode.S2TA_W, 8), (Mode.S2TA_AW, 8 * 2)):
        out, r = run_gemm(p, REF[mode])
        assert r.compute_cycles == 2 * base and r.dense_fallback_tiles == 1
        assert np.array_equal(out, oracle(p))
    with pytest.raises(DensityExceeded):
        run_gemm(p, REF[Mode.S2TA_W], allow_dense_fallback=False)


@pytest.mark.parametrize("a_nnz", [1, 2, 4, 8])
def test_speedup_laws_full_tiles(a_nnz):
    sa_p = synth_microbench(32, 64, 4096, a_nnz=a_nnz)
    aw_p = synth_microbench(64, 32, 4096, a_nnz=a_nnz)
    sa = run_gemm(sa_p, REF[Mode.SA], compute_output=False)[1].cycles
    w = run_gemm(sa_p, REF[Mode.S2TA_W], compute_output=False)[1].cycles
    aw = run_gemm(aw_p, REF[Mode.S2TA_AW], compute_output=False)[1].cycles
    assert sa / w == pytest.approx(2.0, rel=0.02)
    assert sa / aw == pytest.approx(8 / a_nnz, rel=0.02)


def test_zvcg_same_cycles_fewer_active():
    p = synth_microbench(40, 70, 256, w_nnz=4, a_nnz=4)
    _, sa = run_gemm(p, REF[Mode.SA])
    _, z = run_gemm(p, REF[Mode.SA_ZVCG])
    assert sa.cycles == z.cycles
    assert z.active_macs < sa.active_macs and z.mac_slots == sa.mac_slots


def test_peak_dense_throughput():
    p = synth_microbench(64, 32, 4096, a_nnz=8)
    _, r = run_gemm(p, REF[Mode.S2TA_AW], compute_output=False)
    assert r.effective_tops == pytest.approx(4.096, rel=0.02)
    assert r.effective_ops == 2 * 64 * 32 * 4096


# -- functional equivalence ------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(MODES), st.integers(1, 80), st.integers(1, 80), st.integers(1, 130),
       st.sampled_from([1, 2, 3, 4, 5, 8]), st.integers(1, 4), st.integers(0, 10**6))
def test_run_gemm_equals_oracle(mode, rows, cols, k, a_nnz, w_nnz, seed):
    p = problem_from(rows, cols, k, w_nnz, a_nnz, seed)
    out, r = run_gemm(p, REF[mode])
    assert out.dtype == np.int32
    assert np.array_equal(out.astype(np.int64), oracle(p))
    assert r.active_macs + r.gated_macs == r.tile_count * r.physical_macs * (
        r.compute_cycles // r.tile_count)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("a_nnz", [1, 3, 8])
def test_trace_matches_vectorised(mode, a_nnz):
    p = problem_from(9, 11, 45, 3, a_nnz, seed=a_nnz, dense_act=False)
    out_v, rv = run_gemm(p, REF[mode])
    out_t, rt = run_gemm(p, REF[mode], trace=True)
    assert np.array_equal(out_v, out_t)
    for key in ("active_macs", "gated_macs", "acc_updates", "mux_selects", "cycles"):
        assert getattr(rv, key) == getattr(rt, key), key


def test_trace_dense_fallback():
    rng = np.random.default_rng(5)
    p = GemmProblem(rng.integers(-9, 9, (5, 16)).astype(np.int8),
                    rng.integers(-9, 9, (16, 3)).astype(np.int8), a_nnz=3)
    for mode in (Mode.S2TA_W, Mode.S2TA_AW):
        ov, rv = run_gemm(p, REF[mode])
        ot, rt = run_gemm(p, REF[mode], trace=True)
        assert np.array_equal(ov, ot) and rv.mux_selects == rt.mux_selects
        assert rv.active_macs == rt.active_macs and rv.acc_updates == rt.acc_updates


def test_identity_weight_returns_pruned_activation():
    rng = np.random.default_rng(1)
    a = rng.integers(-128, 128, size=(20, 16)).astype(np.int8)
    p = GemmProblem(a, np.eye(16, dtype=np.int8), a_nnz=3)
    for mode in MODES:
        out, _ = run_gemm(p, REF[mode])
        assert np.array_equal(out, oracle(p))
    assert np.count_nonzero(run_gemm(p, REF[Mode.S2TA_AW])[0], axis=1).max() <= 2 * 3


def test_sa_and_w_outputs_identical_w_half_cycles():
    p = synth_microbench(64, 64, 4096, w_nnz=4, a_nnz=8, seed=3)
    out_sa, r_sa = run_gemm(p, REF[Mode.SA])
    out_w, r_w = run_gemm(p, REF[Mode.S2TA_W])
    assert np.array_equal(out_sa, out_w)
    assert r_sa.cycles / r_w.cycles == pytest.approx(2.0, rel=0.02)


def test_dbb_tensor_weight_input():
    rng = np.random.default_rng(2)
    w = random_dbb(rng, 12, 40, 2).T.copy()
    wt = block_tensor(w, 0, DbbConfig(8, 2))
    a = rng.integers(-128, 128, size=(7, 40)).astype(np.int8)
    p_dense, p_dbb = GemmProblem(a, w, a_nnz=4), GemmProblem(a, wt, a_nnz=4)
    for mode in MODES:
        assert np.array_equal(run_gemm(p_dense, REF[mode])[0], run_gemm(p_dbb, REF[mode])[0])


def test_problem_validation():
    with pytest.raises(ShapeMismatch):
        GemmProblem(np.zeros((3, 4)), np.zeros((5, 2)))
    with pytest.raises(ShapeMismatch):
        GemmProblem(np.zeros(4), np.zeros((4, 2)))
    with pytest.raises(InvalidNnz):
        run_gemm(GemmProblem(np.zeros((2, 8)), np.zeros((8, 2)), a_nnz=0), REF[Mode.SA])
    with pytest.raises(StageCapExceeded):
        run_gemm(GemmProblem(np.zeros((2, 8)), np.zeros((8, 2)), a_nnz=6), REF[Mode.S2TA_AW])
    with pytest.raises(ShapeMismatch):
        k = (1 << 16) + 8
        run_gemm(GemmProblem(np.zeros((1, k), np.int8), np.zeros((k, 1), np.int8)), REF[Mode.SA],
                 compute_output=False)


def test_relaxed_dap_allows_six():
    p = synth_microbench(8, 8, 64, a_nnz=6)
    out, r = run_gemm(p, REF[Mode.S2TA_AW].replace(dap_strict=False))
    assert np.array_equal(out, oracle(p)) and r.compute_cycles == 8 * 6


# -- traffic -------------------------------------------------------------------------------------


def test_weight_traffic_five_eighths():
    p = synth_microbench(64, 32, 4096, w_nnz=4, a_nnz=8)
    for mode in (Mode.S2TA_W, Mode.S2TA_AW):
        row_tiles = -(-64 // REF[mode].tile_rows)
        t_sparse = sram_traffic(p, REF[mode])
        assert t_sparse.weight * 8 == row_tiles * 4096 * 32 * 5
    dense = sram_traffic(p, REF[Mode.SA])
    assert dense.weight == 4096 * 32 * 2     # two row tiles of 32


def test_dense_traffic_equals_matrix_size():
    p = synth_microbench(32, 64, 1000)
    t = sram_traffic(p, REF[Mode.SA])
    assert (t.weight, t.activation, t.output) == (1000 * 64, 1000 * 32, 32 * 64 * 4)


def test_activation_traffic_three_eighths():
    p = synth_microbench(64, 32, 4096, a_nnz=2)
    assert sram_traffic(p, REF[Mode.S2TA_AW]).activation * 8 == 64 * 4096 * 3


def test_requantized_outputs():
    p = synth_microbench(64, 32, 64)
    assert sram_traffic(p, REF[Mode.S2TA_AW].replace(output_bytes=1)).output == 64 * 32


def test_refetch_passes_when_tile_exceeds_buffers():
    p = synth_microbench(32, 64, 16384)
    small = REF[Mode.SA].replace(wb_bytes=256 * 1024)
    assert sram_traffic(p, REF[Mode.SA]).refetch_passes == 1     # 1 MiB of weights vs 512 KiB
    assert sram_traffic(p, small).refetch_passes == 3
    assert sram_traffic(p, REF[Mode.SA].replace(wb_bytes=1 << 21)).refetch_passes == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 70), st.integers(1, 70), st.integers(1, 300), st.integers(0, 99))
def test_traffic_monotone_in_density(rows, cols, k, seed):
    cfg = REF[Mode.S2TA_AW]
    prev = None
    for a_nnz in (8, 5, 4, 3, 2, 1):
        t = sram_traffic(synth_microbench(rows, cols, k, a_nnz=a_nnz, seed=seed), cfg)
        if prev is not None:
            assert t.weight <= prev.weight and t.activation <= prev.activation
            assert t.output <= prev.output
        prev = t
    w_prev = None
    for w_nnz in (4, 3, 2, 1):
        t = sram_traffic(synth_microbench(rows, cols, k, w_nnz=w_nnz, seed=seed), cfg)
        if w_prev is not None:
            assert t.total <= w_prev.total
        w_prev = t


def test_traffic_at_least_compressed_footprint():
    p = synth_microbench(100, 90, 200, w_nnz=3, a_nnz=2)
    t = sram_traffic(p, REF[Mode.S2TA_AW])
    nb = 25
    assert t.weight >= nb * 90 * 5 and t.activation >= nb * 100 * 3


# -- buffer accounting --------------------------------------------------------------------------


def test_buffer_account_reference_rows():
    sa = buffer_account(REF[Mode.SA])
    assert (sa.operand_bytes_per_mac, sa.accumulator_bytes_per_mac, sa.total_bytes_per_mac) \
        == (2, 4, 6) and sa.note is None
    aw = buffer_account(REF[Mode.S2TA_AW])
    assert (aw.operand_bytes_per_mac, aw.accumulator_bytes_per_mac, aw.total_bytes_per_mac) \
        == (0.75, 4, 4.75)


def test_buffer_account_w_flagged():
    w = buffer_account(REF[Mode.S2TA_W])
    assert w.total_bytes_per_mac == w.operand_bytes_per_mac + w.accumulator_bytes_per_mac
    assert w.operand_bytes_per_mac == (4 + 8 * 4) / 64
    assert w.accumulator_bytes_per_mac == 16 * 4 / 64
    assert w.note and "0.375" in w.note


def test_reference_instances_have_2048_macs():
    assert {c.physical_macs for c in REF.values()} == {2048}


# -- layers and networks ------------------------------------------------------------------------


def test_run_layer_merges_and_adds_mcu():
    layer = LayerSpec("c", "conv", 12, 12, 16, 24, 3, 3, 1, 1, DbbConfig(8, 4), 4)
    cfg = REF[Mode.S2TA_AW]
    r = run_layer(layer, cfg, seed=3)
    assert (r.rows, r.cols, r.k) == (144, 24, 144)
    assert r.mcu_cycles == int(np.ceil(144 * 24 * cfg.non_gemm_cycles_per_elem))
    bare = run_layer(layer, cfg.replace(non_gemm_cycles_per_elem=0), seed=3)
    assert r.cycles == bare.cycles + r.mcu_cycles
    assert r.dense_macs == 144 * 24 * 144


def test_depthwise_layer_is_per_channel():
    layer = LayerSpec("dw", "depthwise", 10, 10, 5, 5, 3, 3, 1, 1, None, 8)
    r = run_layer(layer, REF[Mode.SA].replace(non_gemm_cycles_per_elem=0))
    assert r.dense_macs == 100 * 5 * 9
    # 100 rows -> 4 row tiles per channel, 1 column each
    assert r.tile_count == 5 * 4
    assert r.cycles == 5 * 4 * (9 + 94)


def analytic_cycles(layer, cfg, a_nnz):
    rows, cols, k = layer.gemm_dims()
    tiles = -(-rows // cfg.tile_rows) * -(-cols // cfg.tile_cols)
    if cfg.mode is Mode.S2TA_AW:
        per_tile = -(-k // 8) * a_nnz
    elif cfg.mode is Mode.S2TA_W:
        per_tile = -(-k // 8)
    else:
        per_tile = k
    mcu = int(np.ceil(layer.output_elements * cfg.non_gemm_cycles_per_elem))
    return tiles * (per_tile + cfg.m + cfg.n - 2) + mcu


@pytest.mark.parametrize("mode", MODES)
def test_run_network_matches_analytic_cycles(mode):
    layers = [LayerSpec("a", "conv", 28, 28, 64, 64, 3, 3, 1, 1, DbbConfig(8, 4), 4),
              LayerSpec("b", "conv", 28, 28, 64, 128, 3, 3, 1, 1, DbbConfig(8, 4), 4),
              LayerSpec("c", "fc", 7, 7, 128, 10, w_dbb=DbbConfig(8, 4), a_nnz=4)]
    net = NetworkSpec("n", layers)
    r = run_network(net, REF[mode])
    assert [l.name for l in r.layers] == ["a", "b", "c"]
    assert r.cycles == sum(l.cycles for l in r.layers)
    assert r.cycles == sum(analytic_cycles(l, REF[mode], 4) for l in layers)


def test_run_network_speedup_two_on_deep_layers():
    layers = [LayerSpec("a", "conv", 16, 16, 512, 512, 3, 3, 1, 1, DbbConfig(8, 4), 4),
              LayerSpec("b", "conv", 16, 16, 512, 256, 3, 3, 1, 1, DbbConfig(8, 4), 4)]
    net = NetworkSpec("n", layers)
    sa = run_network(net, REF[Mode.SA])
    aw = run_network(net, REF[Mode.S2TA_AW])
    assert sa.cycles / aw.cycles == pytest.approx(2.0, rel=0.05)
