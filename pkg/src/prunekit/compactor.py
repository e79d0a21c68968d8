"""Turn a masked model into a physically smaller one.

Pruned filters must be exactly zero. Their output channels are dropped
together with the matching input slices of whatever conv or linear layer
consumes them (pool layers pass channels through). Channels that end up
in a residual add are kept as zero channels, since the other operand of
the add still writes those positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import ArchSpec, with_channels
from .network import Network
from .pruning import FilterMask
from .tensor import Tensor


class NotCompactibleError(ValueError):
    pass


@dataclass
class Compacted:
    network: Network
    mask: FilterMask
    report: str

    @property
    def arch(self) -> ArchSpec:
        return self.network.arch


def _source_conv(arch: ArchSpec, layer_id: str) -> str | None:
    """Conv whose channels arrive at ``layer_id``'s input, looking through pools."""
    lid = arch[layer_id].predecessors[0]
    while arch[lid].kind == "pool":
        lid = arch[lid].predecessors[0]
    return lid if arch[lid].kind == "conv" else None


def _feeds_add(arch: ArchSpec, layer_id: str) -> bool:
    for s in arch.successors(layer_id):
        if s.kind == "add" or (s.kind == "pool" and _feeds_add(arch, s.id)):
            return True
    return False


def compact(net: Network, mask: FilterMask) -> Compacted:
    arch = net.arch
    keep: dict[str, np.ndarray] = {}
    for lid, states in mask.items():
        w = net.weights[lid].data
        pruned = np.flatnonzero(states)
        for j in pruned:
            if np.any(w[j] != 0.0):
                raise NotCompactibleError(
                    f"not compactible: alpha not snapped; layer {lid} filter {j} is nonzero")
        if not _feeds_add(arch, lid):
            keep[lid] = np.flatnonzero(states == 0)

    weights, biases, report = {}, {}, []
    for l in arch.layers:
        if l.kind not in ("conv", "linear"):
            continue
        w = net.weights[l.id].data
        src = _source_conv(arch, l.id)
        if src in keep:
            w = w[:, keep[src]]
        if l.id in keep:
            w = w[keep[l.id]]
        weights[l.id] = Tensor(w.copy())
        if l.id in net.biases:
            biases[l.id] = Tensor(net.biases[l.id].data.copy())
        if w.shape != net.weights[l.id].shape:
            report.append(f"{l.id}: {list(net.weights[l.id].shape)} -> {list(w.shape)}")

    widths = {lid: len(k) for lid, k in keep.items()}
    new_arch = with_channels(arch, widths, name=arch.name if not report else f"{arch.name}-compact")
    new_mask = FilterMask({lid: (np.zeros(widths[lid], dtype=np.int8) if lid in keep else s.copy())
                           for lid, s in mask.items()})
    text = "\n".join(report) if report else "no shape changes"
    return Compacted(Network(new_arch, weights, biases), new_mask, text + "\n")


def verify_equivalence(original: Network, compacted: Network, n_samples: int = 100,
                       seed: int = 0) -> float:
    """Largest absolute logit difference over seeded uniform inputs in [-1, 1]."""
    a, b = original.arch.layers[0], compacted.arch.layers[0]
    if (a.out_channels, a.out_spatial) != (b.out_channels, b.out_spatial):
        raise ValueError(f"input shapes differ: {a.out_channels}x{a.out_spatial} vs "
                         f"{b.out_channels}x{b.out_spatial}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, (n_samples, a.out_channels, *a.out_spatial))
    return float(np.max(np.abs(original(x) - compacted(x))))
