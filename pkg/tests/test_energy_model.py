import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbbsim.arch import ArrayConfig, Mode
from dbbsim.energy_model import (
    COMPONENTS,
    DEFAULT_COEFFICIENTS,
    EnergyCoefficients,
    compare,
    dump_coefficients,
    estimate,
    load_coefficients,
    parse_coefficients,
)
from dbbsim.errors import ConfigError, NegativeCoefficient, UnknownBaseline
from dbbsim.report import COUNTERS, SimReport
from dbbsim.systolic_sim import run_gemm
from dbbsim.workloads import synth_microbench

coeff_values = st.floats(0, 100, allow_nan=False, allow_infinity=False)


def sim(mode, problem):
    return run_gemm(problem, ArrayConfig.reference(mode), compute_output=False)[1]


def manual_total(r: SimReport, c: EnergyCoefficients) -> float:
    return (r.active_macs * c.active_mac + r.gated_macs * c.gated_mac
            + r.reg_write_bytes * c.operand_reg_write + r.acc_updates * c.acc_update
            + r.weight_bytes_read * c.sram_read_per_byte_w
            + r.activation_bytes_read * c.sram_read_per_byte_a
            + r.output_bytes_written * c.sram_write_per_byte
            + r.dap_compares * c.dap_compare + r.mcu_cycles * c.mcu_per_cycle
            + r.cycles * c.leakage_per_cycle)


@st.composite
def coefficient_tables(draw):
    vals = {f.name: draw(coeff_values) for f in dataclasses.fields(EnergyCoefficients)}
    vals["active_mac"] = vals["gated_mac"] + draw(st.floats(0.001, 10))
    return EnergyCoefficients(**vals)


@pytest.fixture(scope="module")
def micro():
    return synth_microbench(64, 64, 1024, w_nnz=4, a_nnz=4, seed=0)


def test_zero_events_zero_energy():
    e = estimate(SimReport())
    assert e.total == 0 and all(getattr(e, c) == 0 for c in COMPONENTS)


def test_breakdown_matches_manual_sum(micro):
    r = sim(Mode.S2TA_AW, micro)
    e = estimate(r)
    assert e.total == pytest.approx(manual_total(r, DEFAULT_COEFFICIENTS), rel=1e-12)
    assert e.total == sum(e.to_dict()[c] for c in COMPONENTS)


def test_doubling_events_doubles_components(micro):
    r = sim(Mode.SA_ZVCG, micro)
    doubled = dataclasses.replace(r, **{k: 2 * getattr(r, k) for k in COUNTERS})
    e1, e2 = estimate(r), estimate(doubled)
    for comp in COMPONENTS:
        assert getattr(e2, comp) == pytest.approx(2 * getattr(e1, comp))


def test_calibrated_mac_share(micro):
    share = estimate(sim(Mode.SA, micro)).share("datapath")
    assert 0.15 <= share <= 0.25


def test_aw_beats_zvcg_on_sparse_microbenchmark():
    p = synth_microbench(64, 64, 4096, w_nnz=4, a_nnz=3, seed=1)
    rows = compare([("sa-zvcg", sim(Mode.SA_ZVCG, p)), ("s2ta-aw", sim(Mode.S2TA_AW, p))],
                   baseline="sa-zvcg")
    aw = rows[1]
    assert aw["energy_ratio"] < 1
    assert aw["cycle_ratio"] == pytest.approx(3 / 8, rel=0.03)


def test_compare_identical_reports(micro):
    r = sim(Mode.SA, micro)
    rows = compare([("a", r), ("b", r)])
    assert rows[1]["energy_ratio"] == rows[1]["cycle_ratio"] == rows[1]["speedup"] == 1.0


def test_compare_errors(micro):
    r = sim(Mode.SA, micro)
    with pytest.raises(UnknownBaseline):
        compare([("a", r), ("b", r)], baseline="c")
    with pytest.raises(ConfigError):
        compare([("a", r)])
    with pytest.raises(ConfigError):
        compare([("a", r), ("a", r)])


@settings(max_examples=25, deadline=None)
@given(coefficient_tables(), st.floats(0.01, 100))
def test_ratios_invariant_under_rescaling(coeffs, factor):
    p = synth_microbench(40, 40, 256, w_nnz=4, a_nnz=3, seed=2)
    reports = [("sa", sim(Mode.SA, p)), ("aw", sim(Mode.S2TA_AW, p))]
    base = compare(reports, coeffs=coeffs)
    scaled = compare(reports, coeffs=coeffs.scaled(factor))
    if base[0]["energy_pj"] > 0:
        assert scaled[1]["energy_ratio"] == pytest.approx(base[1]["energy_ratio"], rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(coefficient_tables())
def test_zvcg_cheaper_than_sa(coeffs):
    p = synth_microbench(32, 64, 256, w_nnz=4, a_nnz=4, seed=3)
    assert estimate(sim(Mode.SA_ZVCG, p), coeffs).total < estimate(sim(Mode.SA, p), coeffs).total


def _monotone_case(seed, mode, coeffs):
    rng = np.random.default_rng(seed)
    rows, cols, k = (int(v) for v in rng.integers(1, 100, 3))
    k *= 4
    base = synth_microbench(rows, cols, k, w_nnz=int(rng.integers(1, 5)), a_nnz=8, seed=seed)
    prev = None
    for a_nnz in (8, 5, 4, 3, 2, 1):
        base.a_nnz = a_nnz
        e = estimate(sim(mode, base), coeffs).total
        if prev is not None:
            assert e <= prev * (1 + 1e-12), (mode, a_nnz, e, prev)
        prev = e


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("mode", list(Mode))
def test_energy_monotone_as_nnz_drops(seed, mode):
    _monotone_case(seed, mode, DEFAULT_COEFFICIENTS)


@settings(max_examples=20, deadline=None)
@given(coefficient_tables(), st.integers(0, 10**6))
def test_energy_monotone_below_stage_cap_any_table(coeffs, seed):
    # below the DAP cap the compare count per block is linear in nnz_a, so any table works
    rng = np.random.default_rng(seed)
    p = synth_microbench(int(rng.integers(1, 70)), int(rng.integers(1, 70)),
                         int(rng.integers(8, 300)), a_nnz=5, seed=seed)
    prev = None
    for a_nnz in (5, 4, 3, 2, 1):
        p.a_nnz = a_nnz
        e = estimate(sim(Mode.S2TA_AW, p), coeffs).total
        if prev is not None:
            assert e <= prev * (1 + 1e-12)
        prev = e


# -- coefficient files --------------------------------------------------------------------------


def test_coefficient_validation():
    with pytest.raises(NegativeCoefficient):
        EnergyCoefficients(active_mac=-1)
    with pytest.raises(ConfigError):
        EnergyCoefficients(active_mac=0.1, gated_mac=0.1)


def test_coefficient_file_round_trip(tmp_path):
    text = dump_coefficients()
    assert parse_coefficients(text) == DEFAULT_COEFFICIENTS
    path = tmp_path / "c.txt"
    path.write_text("active_mac = 2.0\nleakage_per_cycle: 0  # no leakage\n")
    c = load_coefficients(path)
    assert c.active_mac == 2.0 and c.leakage_per_cycle == 0
    assert c.gated_mac == DEFAULT_COEFFICIENTS.gated_mac


@pytest.mark.parametrize("text,exc", [("active_mac = -3", NegativeCoefficient),
                                      ("bogus = 1", ConfigError),
                                      ("active_mac = fast", ConfigError),
                                      ("active_mac", ConfigError)])
def test_coefficient_file_errors(text, exc):
    with pytest.raises(exc):
        parse_coefficients(text)
