"""Static layer graphs and MAC accounting under per-layer filter pruning."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from .tensor import conv_output_size

KINDS = ("conv", "linear", "pool", "add", "input", "output")
KNOWN_ARCHS = ("resnet20", "resnet56", "resnet110", "vgg16", "tinyconvnet")


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    out_spatial: tuple[int, int] = (1, 1)
    predecessors: tuple[str, ...] = ()


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    prunable: tuple[str, ...]
    by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "by_id", {l.id: l for l in self.layers})
        validate(self)

    def __getitem__(self, layer_id: str) -> LayerSpec:
        return self.by_id[layer_id]

    @property
    def convs(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]

    def successors(self, layer_id: str) -> list[LayerSpec]:
        return [l for l in self.layers if layer_id in l.predecessors]


def validate(arch: ArchSpec) -> None:
    seen: dict[str, LayerSpec] = {}
    for layer in arch.layers:
        if layer.kind not in KINDS:
            raise ArchError(f"{layer.id}: unknown kind {layer.kind!r}")
        if layer.id in seen:
            raise ArchError(f"duplicate layer id {layer.id!r}")
        # predecessors must be declared earlier, which also rules out cycles
        for p in layer.predecessors:
            if p not in seen:
                raise ArchError(f"{layer.id}: predecessor {p!r} not defined before use")
        preds = [seen[p] for p in layer.predecessors]
        if layer.kind == "input":
            if preds:
                raise ArchError(f"{layer.id}: input layer cannot have predecessors")
        elif len(preds) != (2 if layer.kind == "add" else 1):
            raise ArchError(f"{layer.id}: wrong number of predecessors for {layer.kind}")
        if layer.kind == "add":
            a, b = preds
            if a.out_channels != b.out_channels or a.out_spatial != b.out_spatial:
                raise ArchError(f"{layer.id}: add operands differ ({a.id} vs {b.id})")
        elif preds:
            p = preds[0]
            if layer.in_channels != p.out_channels:
                raise ArchError(
                    f"{layer.id}: in_channels {layer.in_channels} != {p.id}.out_channels {p.out_channels}")
            if layer.kind in ("conv", "pool"):
                stride = layer.stride if layer.kind == "conv" else layer.kernel
                pad = layer.padding if layer.kind == "conv" else 0
                try:
                    expect = tuple(conv_output_size(d, layer.kernel, stride, pad) for d in p.out_spatial)
                except ValueError as e:
                    raise ArchError(f"{layer.id}: {e}") from None
                if expect != tuple(layer.out_spatial):
                    raise ArchError(f"{layer.id}: out_spatial {layer.out_spatial} != expected {expect}")
        seen[layer.id] = layer
    inputs = [l for l in arch.layers if l.kind == "input"]
    outputs = [l for l in arch.layers if l.kind == "output"]
    if len(inputs) != 1 or len(outputs) != 1:
        raise ArchError("graph needs exactly one input and one output layer")
    for lid in arch.prunable:
        if lid not in seen or seen[lid].kind != "conv":
            raise ArchError(f"prunable layer {lid!r} is not a conv layer")


class _Builder:
    def __init__(self, channels: int, size: int):
        self.layers = [LayerSpec("input", "input", channels, channels, out_spatial=(size, size))]
        self.prunable: list[str] = []

    def add(self, layer: LayerSpec) -> str:
        self.layers.append(layer)
        return layer.id

    def conv(self, lid, pred, n, s=3, stride=1, padding=1, prunable=True):
        p = self.get(pred)
        hw = tuple(conv_output_size(d, s, stride, padding) for d in p.out_spatial)
        if prunable:
            self.prunable.append(lid)
        return self.add(LayerSpec(lid, "conv", p.out_channels, n, s, stride, padding, hw, (pred,)))

    def pool(self, lid, pred, k):
        p = self.get(pred)
        hw = tuple(d // k for d in p.out_spatial)
        return self.add(LayerSpec(lid, "pool", p.out_channels, p.out_channels, k, k, 0, hw, (pred,)))

    def residual(self, lid, a, b):
        p = self.get(a)
        return self.add(LayerSpec(lid, "add", p.out_channels, p.out_channels,
                                  out_spatial=p.out_spatial, predecessors=(a, b)))

    def head(self, pred, classes):
        p = self.get(pred)
        fc = self.add(LayerSpec("fc", "linear", p.out_channels, classes, predecessors=(pred,)))
        self.add(LayerSpec("output", "output", classes, classes, predecessors=(fc,)))

    def get(self, lid) -> LayerSpec:
        return next(l for l in self.layers if l.id == lid)

    def build(self, name) -> ArchSpec:
        return ArchSpec(name, tuple(self.layers), tuple(self.prunable))


def _resnet(depth: int, classes: int) -> ArchSpec:
    blocks = (depth - 2) // 6
    b = _Builder(3, 32)
    x = b.conv("stem", "input", 16)
    for stage, width in enumerate((16, 32, 64), start=1):
        for k in range(1, blocks + 1):
            tag = f"s{stage}b{k}"
            stride = 2 if stage > 1 and k == 1 else 1
            c1 = b.conv(f"{tag}c1", x, width, stride=stride)
            c2 = b.conv(f"{tag}c2", c1, width)
            shortcut = x
            if stride != 1:
                shortcut = b.conv(f"{tag}proj", x, width, s=1, stride=2, padding=0, prunable=False)
            x = b.residual(f"{tag}add", c2, shortcut)
    x = b.pool("gap", x, 8)
    b.head(x, classes)
    return b.build(f"resnet{depth}")


def _vgg16(classes: int) -> ArchSpec:
    cfg = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]
    b = _Builder(3, 32)
    x, ci, pi = "input", 0, 0
    for v in cfg:
        if v == "M":
            pi += 1
            x = b.pool(f"pool{pi}", x, 2)
        else:
            ci += 1
            x = b.conv(f"conv{ci}", x, v)
    b.head(x, classes)
    return b.build("vgg16")


def _tinyconvnet(classes: int) -> ArchSpec:
    b = _Builder(3, 8)
    x = b.conv("conv1", "input", 16)
    x = b.conv("conv2", x, 16)
    x = b.pool("pool", x, 2)
    x = b.conv("conv3", x, 32)
    x = b.pool("gap", x, 4)
    b.head(x, classes)
    return b.build("tinyconvnet")


def build_arch(name: str, num_classes: int = 10) -> ArchSpec:
    builders = {
        "resnet20": lambda: _resnet(20, num_classes),
        "resnet56": lambda: _resnet(56, num_classes),
        "resnet110": lambda: _resnet(110, num_classes),
        "vgg16": lambda: _vgg16(num_classes),
        "tinyconvnet": lambda: _tinyconvnet(num_classes),
    }
    if name not in builders:
        raise ArchError(f"unknown architecture {name!r}; known: {', '.join(KNOWN_ARCHS)}")
    return builders[name]()


_ROUND_SLACK = 1e-9  # absorbs binary noise such as 0.29 * 100 = 28.999999999999996


def pruned_count(n: int, rate: float) -> int:
    return math.floor(n * rate + _ROUND_SLACK)


def live_filters(n: int, rate: float) -> int:
    """Filters kept when ``floor(n * rate)`` are pruned, i.e. ceil(n * (1 - rate))."""
    return n - pruned_count(n, rate)


def _check_rates(arch: ArchSpec, rates: Mapping[str, float]) -> None:
    for lid, r in rates.items():
        if lid not in arch.prunable:
            raise ArchError(f"rate given for non-prunable layer {lid!r}")
        if not 0 <= r < 1:
            raise ArchError(f"rate for {lid!r} must be in [0, 1), got {r}")


def _live_outputs(arch: ArchSpec, rates: Mapping[str, float], fractional: bool = False) -> dict:
    live: dict = {}
    for layer in arch.layers:
        if layer.kind == "input":
            live[layer.id] = layer.out_channels
        elif layer.kind == "conv":
            r = rates.get(layer.id, 0.0)
            live[layer.id] = layer.out_channels * (1.0 - r) if fractional else live_filters(layer.out_channels, r)
        elif layer.kind in ("pool", "output"):
            live[layer.id] = live[layer.predecessors[0]]
        else:
            # add: zeroed positions on one operand are refilled by the other
            live[layer.id] = layer.out_channels
    return live


def liveness_propagate(arch: ArchSpec, prune_rates: Mapping[str, float] | None = None) -> dict[str, int]:
    """Live input-channel count of every non-input layer."""
    rates = dict(prune_rates or {})
    _check_rates(arch, rates)
    out = _live_outputs(arch, rates)
    live_in = {}
    for layer in arch.layers:
        if layer.kind == "input":
            continue
        live_in[layer.id] = layer.out_channels if layer.kind == "add" else out[layer.predecessors[0]]
    return live_in


@dataclass(frozen=True)
class FlopsReport:
    per_layer: dict[str, float]
    total: float
    reduction_pct: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,macs\n")
        for lid, macs in self.per_layer.items():
            buf.write(f"{lid},{macs}\n" if isinstance(macs, int) else f"{lid},{macs:.2f}\n")
        return buf.getvalue()

    def summary(self) -> str:
        return f"total={round(self.total)} reduction_pct={self.reduction_pct:.4f}"


def _macs(arch: ArchSpec, rates: Mapping[str, float], fractional: bool) -> dict:
    out = _live_outputs(arch, rates, fractional)
    per_layer = {}
    for layer in arch.layers:
        if layer.kind == "conv":
            live_in = out[layer.predecessors[0]]
            h, w = layer.out_spatial
            per_layer[layer.id] = out[layer.id] * live_in * layer.kernel ** 2 * h * w
        elif layer.kind == "linear":
            per_layer[layer.id] = out[layer.predecessors[0]] * layer.out_channels
    return per_layer


def count_flops(arch: ArchSpec, prune_rates: Mapping[str, float] | None = None,
                baseline_total: float | None = None, channels: str = "fractional") -> FlopsReport:
    """MACs of conv and linear layers under per-layer pruning rates.

    ``channels="fractional"`` counts a pruned layer as having ``n * (1 - P)``
    outputs, i.e. the expected width under rate P.
    ``channels="integer"`` counts the ``n - floor(n * P)`` filters that are
    physically left, which is what a compacted model actually executes.
    Reduction is measured against the unpruned ``arch`` unless
    ``baseline_total`` is given.
    """
    if channels not in ("fractional", "integer"):
        raise ValueError(f"channels must be 'fractional' or 'integer', got {channels!r}")
    fractional = channels == "fractional"
    rates = dict(prune_rates or {})
    _check_rates(arch, rates)
    per_layer = _macs(arch, rates, fractional)
    total = sum(per_layer.values())
    if baseline_total is None:
        baseline_total = sum(_macs(arch, {}, fractional).values())
    reduction = 100.0 * (1.0 - total / baseline_total)
    return FlopsReport(per_layer, total, min(max(reduction, 0.0), 100.0))


def uniform_rates(arch: ArchSpec, rate: float) -> dict[str, float]:
    return {lid: rate for lid in arch.prunable}


def with_channels(arch: ArchSpec, out_channels: Mapping[str, int], name: str | None = None) -> ArchSpec:
    """Copy of ``arch`` with some conv widths changed and in_channels re-derived."""
    widths: dict[str, int] = {}
    layers = []
    for layer in arch.layers:
        in_ch = layer.in_channels
        if layer.predecessors and layer.kind != "add":
            in_ch = widths[layer.predecessors[0]]
        n = layer.out_channels
        if layer.kind == "conv":
            n = out_channels.get(layer.id, n)
        elif layer.kind in ("pool", "output"):
            n = in_ch
        layers.append(replace(layer, in_channels=in_ch, out_channels=n))
        widths[layer.id] = n
    return ArchSpec(name or arch.name, tuple(layers), arch.prunable)


# --- text serialization -----------------------------------------------------

def arch_to_text(arch: ArchSpec) -> str:
    lines = [f"arch {arch.name}", f"prunable {','.join(arch.prunable)}"]
    for l in arch.layers:
        h, w = l.out_spatial
        lines.append(
            f"layer id={l.id} kind={l.kind} m={l.in_channels} n={l.out_channels} s={l.kernel} "
            f"stride={l.stride} padding={l.padding} spatial={h}x{w} "
            f"preds={','.join(l.predecessors) or '-'}")
    return "\n".join(lines) + "\n"


def arch_from_text(text: str) -> ArchSpec:
    name, prunable, layers = None, (), []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        try:
            if head == "arch":
                name = rest.strip()
            elif head == "prunable":
                prunable = tuple(p for p in rest.strip().split(",") if p)
            elif head == "layer":
                f = dict(tok.split("=", 1) for tok in rest.split())
                h, w = (int(v) for v in f["spatial"].split("x"))
                preds = () if f["preds"] == "-" else tuple(f["preds"].split(","))
                layers.append(LayerSpec(f["id"], f["kind"], int(f["m"]), int(f["n"]), int(f["s"]),
                                        int(f["stride"]), int(f["padding"]), (h, w), preds))
            else:
                raise ArchError(f"unknown record {head!r}")
        except (KeyError, ValueError) as e:
            raise ArchError(f"line {lineno}: malformed record: {e}") from None
    if name is None:
        raise ArchError("missing 'arch' record")
    return ArchSpec(name, tuple(layers), prunable)
