"""Accelerator instances and the key-value architecture file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ConfigError


class Mode(str, Enum):
    SA = "sa"
    SA_ZVCG = "sa-zvcg"
    S2TA_W = "s2ta-w"
    S2TA_AW = "s2ta-aw"

    @classmethod
    def parse(cls, text: "str | Mode") -> "Mode":
        if isinstance(text, Mode):
            return text
        key = str(text).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ConfigError(f"unknown mode {text!r}; expected one of {[m.value for m in cls]}")

    @property
    def uses_dbb(self) -> bool:
        return self in (Mode.S2TA_W, Mode.S2TA_AW)

    @property
    def gates_zeros(self) -> bool:
        return self is not Mode.SA

    def __str__(self):
        return self.value


# 4 Cortex-M33 cores, 4 INT8 lanes per 32-bit SIMD instruction
DEFAULT_NON_GEMM_CYCLES_PER_ELEM = 1 / 16


@dataclass(frozen=True)
class ArrayConfig:
    """A TPE array ``a x b x c _ m x n`` running in one of the four modes.

    ``a`` activation blocks and ``c`` weight blocks enter each TPE per
    block step; ``b`` is the dense activation width for S2TA-W and the weight
    NNZ for S2TA-AW.  The array has ``m`` TPE rows and ``n`` TPE columns.
    """

    a: int = 1
    b: int = 1
    c: int = 1
    m: int = 32
    n: int = 64
    block_size: int = 8
    mode: Mode = Mode.SA
    clock_hz: float = 1e9
    weight_nnz: int = 8
    dap_max_stages: int = 5
    wb_bytes: int = 512 * 1024
    ab_bytes: int = 2 * 1024 * 1024
    non_gemm_cycles_per_elem: float = DEFAULT_NON_GEMM_CYCLES_PER_ELEM
    output_bytes: int = 4
    dap_strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        for name in ("a", "b", "c", "m", "n", "block_size", "weight_nnz", "dap_max_stages"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.block_size > 64:
            raise ConfigError("block_size must be at most 64")
        if not 1 <= self.weight_nnz <= self.block_size:
            raise ConfigError(f"weight_nnz must be in 1..{self.block_size}")
        if not 1 <= self.dap_max_stages <= self.block_size:
            raise ConfigError(f"dap_max_stages must be in 1..{self.block_size}")
        if self.clock_hz <= 0 or self.non_gemm_cycles_per_elem < 0:
            raise ConfigError("clock_hz must be positive and non_gemm_cycles_per_elem non-negative")
        if self.output_bytes not in (1, 4):
            raise ConfigError("output_bytes must be 4 (accumulators) or 1 (requantized)")
        if self.mode in (Mode.SA, Mode.SA_ZVCG) and (self.a, self.b, self.c) != (1, 1, 1):
            raise ConfigError(f"{self.mode} needs a 1x1x1 PE, got {self.tpe}")
        if self.mode is Mode.S2TA_W and self.b != self.block_size:
            raise ConfigError("S2TA-W TPEs take dense activation rows: b must equal block_size")
        if self.mode is Mode.S2TA_AW and self.b != self.weight_nnz:
            raise ConfigError("S2TA-AW TPEs hold weight blocks: b must equal weight_nnz")

    @classmethod
    def reference(cls, mode: "Mode | str", **overrides) -> "ArrayConfig":
        """The 2048-MAC reference instance of ``mode``."""
        mode = Mode.parse(mode)
        if mode in (Mode.SA, Mode.SA_ZVCG):
            base = dict(a=1, b=1, c=1, m=32, n=64, weight_nnz=8)
        elif mode is Mode.S2TA_W:
            base = dict(a=4, b=8, c=4, m=4, n=8, weight_nnz=4)
        else:
            base = dict(a=8, b=4, c=4, m=8, n=8, weight_nnz=4)
        base.update(overrides)
        return cls(mode=mode, **base)

    def replace(self, **changes) -> "ArrayConfig":
        return dataclasses.replace(self, **changes)

    @property
    def tpe(self) -> str:
        return f"{self.a}x{self.b}x{self.c}"

    @property
    def notation(self) -> str:
        return f"{self.tpe}_{self.m}x{self.n}"

    @property
    def n_tpes(self) -> int:
        return self.m * self.n

    @property
    def macs_per_tpe(self) -> int:
        if self.mode is Mode.S2TA_W:
            return self.a * self.weight_nnz * self.c
        return self.a * self.c

    @property
    def physical_macs(self) -> int:
        return self.macs_per_tpe * self.n_tpes

    @property
    def tile_rows(self) -> int:
        return self.a * self.m

    @property
    def tile_cols(self) -> int:
        return self.c * self.n

    @property
    def skew_cycles(self) -> int:
        return (self.m - 1) + (self.n - 1)

    @property
    def peak_dense_tops(self) -> float:
        return 2 * self.physical_macs * self.clock_hz / 1e12


_INT_KEYS = ("a", "b", "c", "m", "n", "block_size", "weight_nnz", "dap_max_stages",
             "wb_bytes", "ab_bytes", "output_bytes")
_FLOAT_KEYS = ("clock_hz", "non_gemm_cycles_per_elem")
_BOOL_KEYS = ("dap_strict",)
_TRUE, _FALSE = ("1", "true", "yes"), ("0", "false", "no")


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(value)


def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, ``:`` also separates."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_arch_config(text: str, source: str = "<text>") -> ArrayConfig:
    kv = parse_key_values(text, source)
    mode = Mode.parse(kv.pop("mode", "sa"))
    ref = ArrayConfig.reference(mode)
    kwargs = {}
    if "requantize" in kv:
        requant = kv.pop("requantize")
        try:
            kv.setdefault("output_bytes", "1" if _parse_bool(requant) else "4")
        except ValueError:
            raise ConfigError(f"{source}: bad value {requant!r} for 'requantize'") from None
    for key, value in kv.items():
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _BOOL_KEYS:
                kwargs[key] = _parse_bool(value)
            else:
                raise ConfigError(f"{source}: unknown architecture key {key!r}")
        except ValueError:
            raise ConfigError(f"{source}: bad value {value!r} for {key!r}") from None
    return ref.replace(**kwargs)


def load_arch_config(path) -> ArrayConfig:
    path = Path(path)
    return parse_arch_config(path.read_text(), str(path))


def dump_arch_config(config: ArrayConfig) -> str:
    lines = [f"mode = {config.mode.value}"]
    for key in _INT_KEYS + _FLOAT_KEYS:
        lines.append(f"{key} = {getattr(config, key)!r}")
    for key in _BOOL_KEYS:
        lines.append(f"{key} = {str(getattr(config, key)).lower()}")
    return "\n".join(lines) + "\n"
