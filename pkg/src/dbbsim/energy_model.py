"""Event-linear energy model.

Energy is a fixed linear combination of simulator event counts::

    datapath    active_macs * active_mac + gated_macs * gated_mac
    pe_buffers  reg_write_bytes * operand_reg_write + acc_updates * acc_update
    sram        weight/activation bytes read, output bytes written
    dap         dap_compares * dap_compare
    mcu         mcu_cycles * mcu_per_cycle
    leakage     cycles * leakage_per_cycle

The model is relative: coefficients are in picojoules but only ratios are
meaningful.  The default table is calibrated so that a dense systolic array
running a half-sparse INT8 GEMM spends about a fifth of its energy in the
MAC datapath, with operand and accumulator registers dominating.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

from .arch import parse_key_values
from .errors import ConfigError, NegativeCoefficient, UnknownBaseline
from .report import SimReport, rows_to_csv

COMPONENTS = ("datapath", "pe_buffers", "sram", "dap", "mcu", "leakage")


@dataclass(frozen=True)
class EnergyCoefficients:
    active_mac: float = 0.25
    gated_mac: float = 0.02
    operand_reg_write: float = 0.2       # per byte
    acc_update: float = 0.45            # 32-bit accumulator write
    sram_read_per_byte_w: float = 1.0
    sram_read_per_byte_a: float = 1.0
    sram_write_per_byte: float = 1.2
    dap_compare: float = 0.02
    mcu_per_cycle: float = 20.0
    leakage_per_cycle: float = 50.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or v != v:
                raise ConfigError(f"coefficient {f.name} must be a number, got {v!r}")
            if v < 0:
                raise NegativeCoefficient(f"coefficient {f.name} is negative ({v})")
        if not self.gated_mac < self.active_mac:
            raise ConfigError("gated_mac must be smaller than active_mac")

    def scaled(self, factor: float) -> "EnergyCoefficients":
        return EnergyCoefficients(**{k: v * factor for k, v in asdict(self).items()})


DEFAULT_COEFFICIENTS = EnergyCoefficients()

CALIBRATION_NOTE = (
    "default coefficients: dense SA on a 4/8-W 4/8-A microbenchmark puts "
    "about 20% of total energy in the MAC datapath"
)


@dataclass(frozen=True)
class EnergyBreakdown:
    datapath: float = 0.0
    pe_buffers: float = 0.0
    sram: float = 0.0
    dap: float = 0.0
    mcu: float = 0.0
    leakage: float = 0.0

    @property
    def total(self) -> float:
        return self.datapath + self.pe_buffers + self.sram + self.dap + self.mcu + self.leakage

    def share(self, component: str) -> float:
        return getattr(self, component) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out


def estimate(report: SimReport, coeffs: EnergyCoefficients = DEFAULT_COEFFICIENTS) -> EnergyBreakdown:
    c = coeffs
    return EnergyBreakdown(
        datapath=report.active_macs * c.active_mac + report.gated_macs * c.gated_mac,
        pe_buffers=report.reg_write_bytes * c.operand_reg_write + report.acc_updates * c.acc_update,
        sram=(report.weight_bytes_read * c.sram_read_per_byte_w
              + report.activation_bytes_read * c.sram_read_per_byte_a
              + report.output_bytes_written * c.sram_write_per_byte),
        dap=report.dap_compares * c.dap_compare,
        mcu=report.mcu_cycles * c.mcu_per_cycle,
        leakage=report.cycles * c.leakage_per_cycle,
    )


def compare(reports: Sequence[tuple[str, SimReport]], baseline: str | None = None,
            coeffs: EnergyCoefficients = DEFAULT_COEFFICIENTS) -> list[dict]:
    """Energy and cycles of each report normalized to the ``baseline`` label.

    The baseline defaults to the first report.
    """
    if len(reports) < 2:
        raise ConfigError("compare needs at least two reports")
    labels = [label for label, _ in reports]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate report labels in {labels}")
    baseline = labels[0] if baseline is None else baseline
    if baseline not in labels:
        raise UnknownBaseline(f"baseline {baseline!r} is not one of {labels}")
    energies = {label: estimate(r, coeffs) for label, r in reports}
    base_r = dict(reports)[baseline]
    base_e = energies[baseline]
    rows = []
    for label, r in reports:
        e = energies[label]
        row = {"label": label, "mode": r.mode, "cycles": r.cycles,
               "energy_pj": e.total,
               "cycle_ratio": r.cycles / base_r.cycles if base_r.cycles else float("nan"),
               "speedup": base_r.cycles / r.cycles if r.cycles else float("nan"),
               "energy_ratio": e.total / base_e.total if base_e.total else float("nan")}
        for comp in COMPONENTS:
            row[f"{comp}_norm"] = getattr(e, comp) / base_e.total if base_e.total else float("nan")
        rows.append(row)
    return rows


def compare_csv(rows: list[dict]) -> str:
    return rows_to_csv(rows)


def compare_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"


# -- coefficient files ---------------------------------------------------------------


def parse_coefficients(text: str, source: str = "<text>") -> EnergyCoefficients:
    """Key-value table in picojoules; missing keys keep their default."""
    kv = parse_key_values(text, source)
    names = {f.name for f in fields(EnergyCoefficients)}
    values = {}
    for key, raw in kv.items():
        if key not in names:
            raise ConfigError(f"{source}: unknown coefficient {key!r}")
        try:
            values[key] = float(raw)
        except ValueError:
            raise ConfigError(f"{source}: bad value {raw!r} for {key!r}") from None
    return EnergyCoefficients(**{**asdict(DEFAULT_COEFFICIENTS), **values})


def load_coefficients(path) -> EnergyCoefficients:
    path = Path(path)
    return parse_coefficients(path.read_text(), str(path))


def dump_coefficients(coeffs: EnergyCoefficients = DEFAULT_COEFFICIENTS) -> str:
    lines = [f"# {CALIBRATION_NOTE}", "# units: picojoules per event"]
    lines += [f"{k} = {v!r}" for k, v in asdict(coeffs).items()]
    return "\n".join(lines) + "\n"
