"""Layer and network descriptions, built-in CNNs and synthetic GEMM operands.

A network file is JSON::

    {"name": "net", "layers": [
        {"name": "conv1", "kind": "conv", "in": [224, 224, 3], "kernel": [3, 3],
         "stride": 1, "padding": 1, "out_channels": 64, "w_dbb": "dense", "a_nnz": 4},
        ...]}

``padding`` (default 0) and ``source`` (the producing layer's name, default
the previous layer; ``"input"`` for the network input) are optional.  Layers
lower to GEMM via im2col with the reduction axis flattened in
``(kh, kw, C)`` order, channels innermost.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dbb_format import DbbConfig, block_tensor
from .errors import ConfigError, NetworkSchemaError, UnknownNetwork, UnsupportedLayer
from .problem import GemmProblem

KINDS = ("conv", "pointwise", "depthwise", "fc")
STRICT_A_NNZ = (1, 2, 3, 4, 5, 8)
BLOCK_SIZE = 8


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_h: int
    in_w: int
    in_c: int
    out_channels: int
    kh: int = 1
    kw: int = 1
    stride: int = 1
    padding: int = 0
    w_dbb: DbbConfig | None = None      # None means dense
    a_nnz: int = 8
    source: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedLayer(f"layer {self.name!r}: kind {self.kind!r} is not one of {KINDS}")
        for key in ("in_h", "in_w", "in_c", "out_channels", "kh", "kw", "stride"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"layer {self.name!r}: {key} must be positive")
        if self.padding < 0:
            raise ConfigError(f"layer {self.name!r}: padding must be non-negative")
        if not 1 <= self.a_nnz <= BLOCK_SIZE:
            raise ConfigError(f"layer {self.name!r}: a_nnz must be in 1..{BLOCK_SIZE}")
        if self.kind == "pointwise" and (self.kh, self.kw) != (1, 1):
            raise ConfigError(f"layer {self.name!r}: pointwise layers have a 1x1 kernel")
        if self.kind == "depthwise" and self.out_channels != self.in_c:
            raise ConfigError(f"layer {self.name!r}: depthwise out_channels must equal in_c")
        if self.kind != "fc" and (self.out_h < 1 or self.out_w < 1):
            raise ConfigError(f"layer {self.name!r}: kernel larger than padded input")

    @property
    def out_h(self) -> int:
        if self.kind == "fc":
            return 1
        return (self.in_h + 2 * self.padding - self.kh) // self.stride + 1

    @property
    def out_w(self) -> int:
        if self.kind == "fc":
            return 1
        return (self.in_w + 2 * self.padding - self.kw) // self.stride + 1

    @property
    def output_elements(self) -> int:
        return self.out_h * self.out_w * self.out_channels

    def gemm_dims(self) -> tuple[int, int, int]:
        """(rows, cols, k) of the lowered GEMM; depthwise reports one channel's k."""
        if self.kind == "fc":
            return 1, self.out_channels, self.in_h * self.in_w * self.in_c
        rows = self.out_h * self.out_w
        if self.kind == "depthwise":
            return rows, self.out_channels, self.kh * self.kw
        return rows, self.out_channels, self.kh * self.kw * self.in_c

    @property
    def macs(self) -> int:
        rows, cols, k = self.gemm_dims()
        return rows * cols * k

    @property
    def w_density(self) -> str:
        return "dense" if self.w_dbb is None or self.w_dbb.is_dense else str(self.w_dbb)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError(f"network {self.name!r} has no layers")
        check_chain(self.layers)

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def select(self, kinds) -> "NetworkSpec":
        return _subset(self, kinds)

    def with_densities(self, w_dbb: DbbConfig | None = None, a_nnz: int | None = None,
                       include_first: bool = True) -> "NetworkSpec":
        """Override weight density and/or activation nnz on every layer."""
        layers = []
        for i, layer in enumerate(self.layers):
            changes = {}
            if w_dbb is not None and (include_first or i > 0):
                changes["w_dbb"] = w_dbb
            if a_nnz is not None:
                changes["a_nnz"] = a_nnz
            layers.append(replace(layer, **changes))
        return NetworkSpec(self.name, tuple(layers))

    @property
    def macs(self) -> int:
        return sum(layer.macs for layer in self.layers)


def _subset(net: NetworkSpec, kinds) -> NetworkSpec:
    """Layers of the given kinds; chain checks are dropped since gaps appear."""
    layers = tuple(l for l in net.layers if l.kind in kinds)
    out = object.__new__(NetworkSpec)
    object.__setattr__(out, "name", net.name)
    object.__setattr__(out, "layers", layers)
    if not layers:
        raise ConfigError(f"network {net.name!r} has no layers of kind {tuple(kinds)}")
    return out


def check_chain(layers) -> None:
    """Each layer's input must follow from its source layer's output.

    Channels must match; spatial dims may shrink (pooling on the MCU path).
    An FC layer may also consume its source flattened.
    """
    seen: dict[str, LayerSpec] = {}
    prev = None
    for i, layer in enumerate(layers):
        if layer.name in seen:
            raise ConfigError(f"duplicate layer name {layer.name!r}")
        src_name = layer.source if layer.source is not None else (prev.name if prev else "input")
        if src_name != "input":
            if src_name not in seen:
                raise ConfigError(f"layer {layer.name!r}: unknown source {src_name!r}")
            src = seen[src_name]
            oh, ow, oc = src.out_h, src.out_w, src.out_channels
            flat = layer.kind == "fc" and layer.in_h * layer.in_w * layer.in_c == oh * ow * oc
            if not flat and (layer.in_c != oc or layer.in_h > oh or layer.in_w > ow):
                raise ConfigError(
                    f"layer {layer.name!r} input {layer.in_h}x{layer.in_w}x{layer.in_c} does not "
                    f"follow from {src.name!r} output {oh}x{ow}x{oc}")
        seen[layer.name] = layer
        prev = layer


# -- built-in networks ---------------------------------------------------------


def _pool(x: int, k: int, s: int, pad: int = 0) -> int:
    return (x + 2 * pad - k) // s + 1


class _Builder:
    def __init__(self, h, w, c):
        self.h, self.w, self.c = h, w, c
        self.layers: list[LayerSpec] = []

    def add(self, name, kind, out, k=1, stride=1, pad=0, source=None, in_shape=None):
        h, w, c = in_shape or (self.h, self.w, self.c)
        layer = LayerSpec(name, kind, h, w, c, out, k, k, stride, pad, source=source)
        self.layers.append(layer)
        self.h, self.w, self.c = layer.out_h, layer.out_w, layer.out_channels
        return layer

    def pool(self, k, s, pad=0):
        self.h, self.w = _pool(self.h, k, s, pad), _pool(self.w, k, s, pad)


def alexnet() -> list[LayerSpec]:
    b = _Builder(224, 224, 3)
    b.add("conv1", "conv", 96, 11, 4, 2)
    b.pool(3, 2)
    b.add("conv2", "conv", 256, 5, 1, 2)
    b.pool(3, 2)
    b.add("conv3", "conv", 384, 3, 1, 1)
    b.add("conv4", "conv", 384, 3, 1, 1)
    b.add("conv5", "conv", 256, 3, 1, 1)
    b.pool(3, 2)
    b.add("fc6", "fc", 4096)
    b.h = b.w = 1
    b.add("fc7", "fc", 4096)
    b.add("fc8", "fc", 1000)
    return b.layers


def vgg16() -> list[LayerSpec]:
    b = _Builder(224, 224, 3)
    plan = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    for stage, (width, reps) in enumerate(plan, 1):
        for r in range(1, reps + 1):
            b.add(f"conv{stage}_{r}", "conv", width, 3, 1, 1)
        b.pool(2, 2)
    b.add("fc6", "fc", 4096)
    b.h = b.w = 1
    b.add("fc7", "fc", 4096)
    b.add("fc8", "fc", 1000)
    return b.layers


def mobilenet_v1() -> list[LayerSpec]:
    b = _Builder(224, 224, 3)
    b.add("conv1", "conv", 32, 3, 2, 1)
    plan = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2)] + [(512, 1)] * 5 \
        + [(1024, 2), (1024, 1)]
    for i, (width, stride) in enumerate(plan, 1):
        b.add(f"dw{i}", "depthwise", b.c, 3, stride, 1)
        b.add(f"pw{i}", "pointwise", width)
    b.h = b.w = 1
    b.add("fc", "fc", 1000)
    return b.layers


def resnet50_v1() -> list[LayerSpec]:
    b = _Builder(224, 224, 3)
    b.add("conv1", "conv", 64, 7, 2, 3)
    b.pool(3, 2, 1)
    block_in = "conv1"
    for stage, (width, reps) in enumerate([(64, 3), (128, 4), (256, 6), (512, 3)], 2):
        for r in range(1, reps + 1):
            stride = 2 if r == 1 and stage > 2 else 1
            shape = (b.h, b.w, b.c)
            p = f"res{stage}{chr(96 + r)}"
            if r == 1:
                b.add(f"{p}_proj", "pointwise", 4 * width, 1, stride, source=block_in, in_shape=shape)
            b.add(f"{p}_1", "pointwise", width, 1, stride, source=block_in, in_shape=shape)
            b.add(f"{p}_2", "conv", width, 3, 1, 1)
            block_in = b.add(f"{p}_3", "pointwise", 4 * width).name
    b.h = b.w = 1
    b.add("fc", "fc", 1000)
    return b.layers


BUILTINS = {
    "alexnet": (alexnet, DbbConfig(8, 4)),
    "vgg16": (vgg16, DbbConfig(8, 3)),
    "mobilenetv1": (mobilenet_v1, DbbConfig(8, 4)),
    "resnet50v1": (resnet50_v1, DbbConfig(8, 4)),
}
DEFAULT_A_NNZ = 4


def _canonical(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


def builtin(name: str, w_dbb: DbbConfig | None = None, a_nnz: int = DEFAULT_A_NNZ) -> NetworkSpec:
    """A canonical network with its default densities; the first layer keeps dense weights."""
    key = _canonical(name)
    aliases = {"vgg": "vgg16", "mobilenet": "mobilenetv1", "resnet50": "resnet50v1"}
    key = aliases.get(key, key)
    if key not in BUILTINS:
        raise UnknownNetwork(f"unknown network {name!r}; built-ins are {sorted(BUILTINS)}")
    make, default_w = BUILTINS[key]
    w = w_dbb or default_w
    layers = [replace(l, w_dbb=None if i == 0 else w, a_nnz=a_nnz)
              for i, l in enumerate(make())]
    return NetworkSpec(key, tuple(layers))


# -- network files --------------------------------------------------------------

_LAYER_KEYS = {"name", "kind", "in", "kernel", "stride", "padding", "out_channels", "w_dbb",
               "a_nnz", "source"}


def _layer_line(text: str, index: int, name) -> int | None:
    if isinstance(name, str):
        m = re.search(r'"name"\s*:\s*' + re.escape(json.dumps(name)), text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return None


def _int_field(obj: dict, key: str, where: str, line, default=None, length=None):
    if key not in obj:
        if default is None:
            raise NetworkSchemaError("missing required field", f"{where}.{key}", line)
        return default
    v = obj[key]
    want = "integer" if length is None else f"list of {length} integers"
    if length is None:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, list) and len(v) == length and all(
            isinstance(x, int) and not isinstance(x, bool) for x in v)
    if not ok:
        raise NetworkSchemaError(f"expected {want}, got {v!r}", f"{where}.{key}", line)
    return v


def _parse_layer(obj, index: int, text: str, strict: bool) -> LayerSpec:
    where = f"layers[{index}]"
    if not isinstance(obj, dict):
        raise NetworkSchemaError("layer must be an object", where)
    line = _layer_line(text, index, obj.get("name"))
    unknown = sorted(set(obj) - _LAYER_KEYS)
    if unknown:
        raise NetworkSchemaError(f"unknown field(s) {unknown}", f"{where}.{unknown[0]}", line)
    name = obj.get("name")
    if not isinstance(name, str) or not name:
        raise NetworkSchemaError("expected a non-empty string", f"{where}.name", line)
    kind = obj.get("kind")
    if kind not in KINDS:
        raise NetworkSchemaError(f"kind must be one of {list(KINDS)}, got {kind!r}",
                                 f"{where}.kind", line)
    h, w, c = _int_field(obj, "in", where, line, length=3)
    kh, kw = _int_field(obj, "kernel", where, line, default=[1, 1], length=2)
    stride = _int_field(obj, "stride", where, line, default=1)
    padding = _int_field(obj, "padding", where, line, default=0)
    out = _int_field(obj, "out_channels", where, line)
    a_nnz = _int_field(obj, "a_nnz", where, line, default=8)
    allowed = STRICT_A_NNZ if strict else tuple(range(1, BLOCK_SIZE + 1))
    if a_nnz not in allowed:
        raise NetworkSchemaError(f"a_nnz must be one of {list(allowed)}, got {a_nnz}",
                                 f"{where}.a_nnz", line)
    w_text = obj.get("w_dbb", "dense")
    try:
        w_dbb = DbbConfig.parse(w_text) if isinstance(w_text, str) else None
    except ConfigError as e:
        raise NetworkSchemaError(str(e), f"{where}.w_dbb", line) from None
    if not isinstance(w_text, str) or w_dbb.block_size != BLOCK_SIZE:
        raise NetworkSchemaError(f"w_dbb must be 'NNZ/{BLOCK_SIZE}' or 'dense', got {w_text!r}",
                                 f"{where}.w_dbb", line)
    source = obj.get("source")
    if source is not None and not isinstance(source, str):
        raise NetworkSchemaError("expected a layer name", f"{where}.source", line)
    try:
        return LayerSpec(name, kind, h, w, c, out, kh, kw, stride, padding,
                         None if w_dbb.is_dense else w_dbb, a_nnz, source)
    except ConfigError as e:
        raise NetworkSchemaError(str(e), where, line) from None


def parse_network(text: str, strict: bool = True) -> NetworkSpec:
    """Parse a network file; ``strict`` restricts a_nnz to what the DAP array supports."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkSchemaError(f"invalid JSON: {e.msg}", line=e.lineno) from None
    if not isinstance(data, dict):
        raise NetworkSchemaError("top level must be an object")
    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise NetworkSchemaError("expected a non-empty string", "name")
    layers = data.get("layers")
    if not isinstance(layers, list) or not layers:
        raise NetworkSchemaError("expected a non-empty list", "layers")
    parsed = [_parse_layer(obj, i, text, strict) for i, obj in enumerate(layers)]
    try:
        return NetworkSpec(name, tuple(parsed))
    except ConfigError as e:
        raise NetworkSchemaError(str(e), "layers") from None


def layer_to_dict(layer: LayerSpec) -> dict:
    out = {"name": layer.name, "kind": layer.kind, "in": [layer.in_h, layer.in_w, layer.in_c],
           "kernel": [layer.kh, layer.kw], "stride": layer.stride, "padding": layer.padding,
           "out_channels": layer.out_channels, "w_dbb": layer.w_density, "a_nnz": layer.a_nnz}
    if layer.source is not None:
        out["source"] = layer.source
    return out


def serialize_network(net: NetworkSpec) -> str:
    body = {"name": net.name, "layers": [layer_to_dict(l) for l in net.layers]}
    return json.dumps(body, indent=2) + "\n"


def load_network(path, strict: bool = True) -> NetworkSpec:
    return parse_network(Path(path).read_text(), strict)


def resolve_network(ref: str, strict: bool = True) -> NetworkSpec:
    """A built-in name or a path to a network file."""
    if _canonical(ref) in BUILTINS or _canonical(ref) in ("vgg", "mobilenet", "resnet50"):
        return builtin(ref)
    path = Path(ref)
    if path.exists():
        return load_network(path, strict)
    raise UnknownNetwork(f"{ref!r} is neither a built-in network nor an existing file")


# -- synthetic operands -----------------------------------------------------------


def random_dbb(rng: np.random.Generator, outer: int, length: int, nnz: int,
               block_size: int = BLOCK_SIZE) -> np.ndarray:
    """``outer x length`` INT8 with exactly ``nnz`` nonzeros per block at uniform positions.

    A trailing partial block keeps ``min(nnz, remainder)`` nonzeros.
    """
    nb = -(-length // block_size)
    keys = rng.random((outer, nb, block_size))
    keys[:, -1, length - (nb - 1) * block_size:] = 2.0      # padding never selected
    ranks = np.argsort(np.argsort(keys, axis=-1, kind="stable"), axis=-1, kind="stable")
    keep = ranks < nnz
    mags = rng.integers(1, 128, size=keys.shape, dtype=np.int16)
    signs = rng.choice(np.array([-1, 1], dtype=np.int16), size=keys.shape)
    vals = np.where(keep, mags * signs, 0).astype(np.int8)
    return vals.reshape(outer, nb * block_size)[:, :length]


def synth_microbench(rows: int, cols: int, k: int, w_nnz: int = 4, a_nnz: int = 8,
                     seed: int = 0, block_size: int = BLOCK_SIZE,
                     name: str = "microbench") -> GemmProblem:
    """Random GEMM whose weight and activation blocks hold exactly the requested nonzeros.

    Densities are NNZ out of ``block_size``; ``w_nnz = block_size`` or
    ``a_nnz = block_size`` gives fully dense (all nonzero) operands.
    """
    if min(rows, cols, k) < 1:
        raise ConfigError("rows, cols and k must be positive")
    for label, nnz in (("w_nnz", w_nnz), ("a_nnz", a_nnz)):
        if not 1 <= nnz <= block_size:
            raise ConfigError(f"{label} must be in 1..{block_size}, got {nnz}")
    rng = np.random.default_rng(seed)
    weight = random_dbb(rng, cols, k, w_nnz, block_size).T.copy()
    activation = random_dbb(rng, rows, k, a_nnz, block_size)
    return GemmProblem(activation, weight, a_nnz=a_nnz, name=name, seed=seed)


def layer_problems(layer: LayerSpec, block_size: int = BLOCK_SIZE, seed: int = 0) -> list[GemmProblem]:
    """Synthetic GEMM operands for ``layer`` at its configured densities.

    Depthwise layers become one single-column GEMM per channel.
    """
    w_nnz = block_size if layer.w_dbb is None else layer.w_dbb.nnz
    rows, cols, k = layer.gemm_dims()
    if layer.kind != "depthwise":
        p = synth_microbench(rows, cols, k, w_nnz, layer.a_nnz, seed, block_size, layer.name)
        return [p]
    return [synth_microbench(rows, 1, k, w_nnz, layer.a_nnz, seed * 100003 + ch, block_size,
                             f"{layer.name}[{ch}]")
            for ch in range(layer.in_c)]


# -- im2col ------------------------------------------------------------------------


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """``(H, W, C)`` -> ``(oH*oW, kh*kw*C)`` patch matrix, channels innermost."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"im2col expects an (H, W, C) tensor, got shape {x.shape}")
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]                  # oH, oW, C, kh, kw
    oh, ow = windows.shape[:2]
    return windows.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * x.shape[2])


def weights_to_matrix(w: np.ndarray) -> np.ndarray:
    """``(kh, kw, C, out)`` filters -> ``(kh*kw*C, out)`` matching :func:`im2col`."""
    kh, kw, c, out = w.shape
    return w.reshape(kh * kw * c, out)


def conv_problem(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0,
                 a_nnz: int = 8, w_dbb: DbbConfig | None = None, name: str = "conv") -> GemmProblem:
    """Lower a real convolution to a GemmProblem, optionally DBB-blocking the weights."""
    kh, kw = w.shape[:2]
    a = im2col(x, kh, kw, stride, padding).astype(np.int8)
    wm = weights_to_matrix(w).astype(np.int8)
    weight = block_tensor(wm, 0, w_dbb) if w_dbb is not None else wm
    return GemmProblem(a, weight, a_nnz=a_nnz, name=name)
