"""Simulation reports: per-layer records, aggregation and JSON / CSV output."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from typing import Iterable

COUNTERS = (
    "cycles", "fill_cycles", "mcu_cycles", "active_macs", "gated_macs", "dense_macs",
    "reg_write_bytes", "acc_updates", "mux_selects", "dap_compares", "weight_bytes_read",
    "activation_bytes_read", "output_bytes_written", "tile_count", "refetch_passes",
    "dense_fallback_tiles",
)


@dataclass
class SimReport:
    name: str = ""
    mode: str = ""
    arch: str = ""
    rows: int = 0
    cols: int = 0
    k: int = 0
    a_nnz: int = 0
    physical_macs: int = 0
    clock_hz: float = 1e9
    cycles: int = 0
    fill_cycles: int = 0
    mcu_cycles: int = 0
    active_macs: int = 0
    gated_macs: int = 0
    dense_macs: int = 0
    reg_write_bytes: int = 0
    acc_updates: int = 0
    mux_selects: int = 0
    dap_compares: int = 0
    weight_bytes_read: int = 0
    activation_bytes_read: int = 0
    output_bytes_written: int = 0
    tile_count: int = 0
    refetch_passes: int = 0
    dense_fallback_tiles: int = 0
    seed: int | None = None
    layers: list["SimReport"] = field(default_factory=list)

    @property
    def compute_cycles(self) -> int:
        return self.cycles - self.fill_cycles - self.mcu_cycles

    @property
    def mac_slots(self) -> int:
        return self.active_macs + self.gated_macs

    @property
    def utilization(self) -> float:
        slots = self.physical_macs * self.compute_cycles
        return self.active_macs / slots if slots else 0.0

    @property
    def runtime_s(self) -> float:
        return self.cycles / self.clock_hz

    @property
    def effective_ops(self) -> int:
        return 2 * self.dense_macs

    @property
    def effective_tops(self) -> float:
        return self.effective_ops / self.runtime_s / 1e12 if self.cycles else 0.0

    @property
    def sram_bytes(self) -> int:
        return self.weight_bytes_read + self.activation_bytes_read + self.output_bytes_written

    def _flat(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "layers"}
        out.update(compute_cycles=self.compute_cycles, utilization=self.utilization,
                   effective_tops=self.effective_tops, runtime_s=self.runtime_s)
        return out

    def to_dict(self) -> dict:
        out = self._flat()
        out["layers"] = [layer.to_dict() for layer in self.layers]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "SimReport":
        names = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in names and k != "layers"}
        kwargs["layers"] = [cls.from_dict(d) for d in data.get("layers", [])]
        return cls(**kwargs)

    def csv_rows(self) -> list[dict]:
        """One flat row per layer, or a single row for a leaf report."""
        return [layer._flat() for layer in self.layers] if self.layers else [self._flat()]

    def to_csv(self) -> str:
        return rows_to_csv(self.csv_rows())


def merge_reports(name: str, reports: Iterable[SimReport], keep_layers: bool = True) -> SimReport:
    """Sum counters of reports run on the same array; the layer list keeps the parts."""
    reports = list(reports)
    if not reports:
        return SimReport(name=name)
    first = reports[0]
    out = SimReport(name=name, mode=first.mode, arch=first.arch, physical_macs=first.physical_macs,
                    clock_hz=first.clock_hz, seed=first.seed)
    for r in reports:
        if (r.mode, r.arch) != (first.mode, first.arch):
            raise ValueError("cannot merge reports from different arrays")
        for key in COUNTERS:
            setattr(out, key, getattr(out, key) + getattr(r, key))
    if keep_layers:
        out.layers = reports
    return out


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
