import csv
import io
import json

import pytest

from dbbsim.arch import ArrayConfig, Mode, dump_arch_config, load_arch_config, parse_arch_config
from dbbsim.errors import ConfigError
from dbbsim.report import COUNTERS, SimReport, merge_reports, rows_to_csv
from dbbsim.systolic_sim import run_gemm
from dbbsim.workloads import synth_microbench


@pytest.mark.parametrize("mode,notation,macs", [
    (Mode.SA, "1x1x1_32x64", 2048), (Mode.SA_ZVCG, "1x1x1_32x64", 2048),
    (Mode.S2TA_W, "4x8x4_4x8", 2048), (Mode.S2TA_AW, "8x4x4_8x8", 2048),
])
def test_reference_instances(mode, notation, macs):
    cfg = ArrayConfig.reference(mode)
    assert cfg.notation == notation and cfg.physical_macs == macs
    assert cfg.peak_dense_tops == pytest.approx(4.096)


def test_mode_parse_aliases():
    assert Mode.parse("S2TA-AW") is Mode.S2TA_AW
    assert Mode.parse("sa_zvcg") is Mode.SA_ZVCG
    with pytest.raises(ConfigError):
        Mode.parse("tpu")


@pytest.mark.parametrize("kwargs", [
    dict(mode=Mode.SA, a=2), dict(mode=Mode.S2TA_AW, a=8, b=3, c=4, weight_nnz=4),
    dict(mode=Mode.S2TA_W, a=4, b=4, c=4), dict(mode=Mode.SA, m=0),
    dict(mode=Mode.SA, output_bytes=2), dict(mode=Mode.SA, dap_max_stages=9),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ArrayConfig(**kwargs)


@pytest.mark.parametrize("mode", list(Mode))
def test_arch_dump_round_trip(mode, tmp_path):
    cfg = ArrayConfig.reference(mode, dap_strict=False, clock_hz=5e8)
    path = tmp_path / "a.cfg"
    path.write_text(dump_arch_config(cfg))
    assert load_arch_config(path) == cfg


def test_arch_file_overrides():
    cfg = parse_arch_config("mode: s2ta-aw  # sparse\nm = 4\nrequantize = yes\n")
    assert cfg.mode is Mode.S2TA_AW and cfg.m == 4 and cfg.output_bytes == 1
    assert cfg.a == 8 and cfg.weight_nnz == 4


@pytest.mark.parametrize("text,needle", [
    ("bogus = 1", "bogus"), ("m = four", "m"), ("m = 1\nm = 2", "duplicate"),
    ("just words", "expected"), ("dap_strict = maybe", "dap_strict"), ("requantize = 2", "requantize"),
])
def test_arch_file_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_arch_config(text)


# -- reports -----------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def reports():
    out = []
    for seed in range(3):
        p = synth_microbench(20 + seed, 30, 64, a_nnz=3, seed=seed)
        p.name = f"g{seed}"
        out.append(run_gemm(p, ArrayConfig.reference(Mode.S2TA_AW), compute_output=False)[1])
    return out


def test_json_round_trip(reports):
    net = merge_reports("net", reports)
    again = SimReport.from_dict(json.loads(net.to_json()))
    assert again == net
    assert json.loads(net.to_json())["utilization"] == net.utilization


def test_merge_sums_counters(reports):
    net = merge_reports("net", reports)
    for key in COUNTERS:
        assert getattr(net, key) == sum(getattr(r, key) for r in reports)
    assert [l.name for l in net.layers] == ["g0", "g1", "g2"]
    assert merge_reports("net", reports, keep_layers=False).layers == []
    assert merge_reports("empty", []).cycles == 0


def test_merge_rejects_mixed_arrays(reports):
    p = synth_microbench(8, 8, 16, seed=0)
    sa = run_gemm(p, ArrayConfig.reference(Mode.SA), compute_output=False)[1]
    with pytest.raises(ValueError):
        merge_reports("x", [reports[0], sa])


def test_csv_rows(reports):
    net = merge_reports("net", reports)
    parsed = list(csv.DictReader(io.StringIO(net.to_csv())))
    assert [row["name"] for row in parsed] == ["g0", "g1", "g2"]
    assert [int(row["cycles"]) for row in parsed] == [r.cycles for r in reports]
    assert float(parsed[0]["utilization"]) == reports[0].utilization
    assert len(list(csv.DictReader(io.StringIO(reports[0].to_csv())))) == 1
    assert rows_to_csv([]) == ""


def test_derived_metrics():
    r = SimReport(cycles=1000, fill_cycles=100, mcu_cycles=100, active_macs=900,
                  physical_macs=1, dense_macs=2000, clock_hz=1e9)
    assert r.compute_cycles == 800
    assert r.utilization == 900 / 800
    assert r.effective_tops == pytest.approx(2 * 2000 / 1e-6 / 1e12)
    assert SimReport().utilization == 0.0 and SimReport().effective_tops == 0.0
