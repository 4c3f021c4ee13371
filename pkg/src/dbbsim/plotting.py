"""Static figures for reports and sweeps, written to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .energy_model import COMPONENTS  # noqa: E402
from .report import SimReport  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[dict], path) -> Path:
    """Speedup and energy ratio against activation nnz, one line per mode."""
    fig, (ax_s, ax_e) = plt.subplots(1, 2, figsize=(9, 3.6))
    modes = list(dict.fromkeys(r["mode"] for r in rows))
    for mode in modes:
        pts = sorted((r for r in rows if r["mode"] == mode), key=lambda r: -r["a_nnz"])
        x = [f"{r['a_nnz']}/8" for r in pts]
        ax_s.plot(x, [r["speedup"] for r in pts], marker="o", label=mode)
        ax_e.plot(x, [r["energy_ratio"] for r in pts], marker="o", label=mode)
    ax_s.set_ylabel("speedup")
    ax_e.set_ylabel("energy (normalized)")
    for ax in (ax_s, ax_e):
        ax.set_xlabel("activation density")
        ax.grid(alpha=0.3)
    ax_s.legend(fontsize=8)
    return _save(fig, path)


def plot_layers(report: SimReport, path) -> Path:
    """Per-layer cycles with the fill and MCU portions stacked on compute."""
    layers = report.layers or [report]
    names = [layer.name for layer in layers]
    compute = [layer.compute_cycles for layer in layers]
    fill = [layer.fill_cycles for layer in layers]
    mcu = [layer.mcu_cycles for layer in layers]
    fig, ax = plt.subplots(figsize=(max(4, 0.4 * len(names) + 2), 3.6))
    ax.bar(names, compute, label="compute")
    ax.bar(names, fill, bottom=compute, label="fill")
    ax.bar(names, mcu, bottom=[c + f for c, f in zip(compute, fill)], label="mcu")
    ax.set_ylabel("cycles")
    ax.set_title(f"{report.name} on {report.mode} {report.arch}")
    ax.tick_params(axis="x", rotation=90, labelsize=7)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_breakdown(rows: Sequence[dict], path) -> Path:
    """Stacked normalized energy per compared report, from ``energy_model.compare``."""
    labels = [r["label"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(labels) + 2), 3.6))
    bottom = [0.0] * len(rows)
    for comp in COMPONENTS:
        vals = [r[f"{comp}_norm"] for r in rows]
        ax.bar(labels, vals, bottom=bottom, label=comp)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("energy (normalized to baseline)")
    ax.legend(fontsize=7)
    return _save(fig, path)
