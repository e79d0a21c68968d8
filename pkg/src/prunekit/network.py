"""Executable network over an ArchSpec graph.

ReLU follows every conv whose output is not summed into a residual add,
and every add. Pool layers average; a pool whose kernel equals the input
size is the global average pool feeding the classifier.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .arch import ArchSpec
from .tensor import Tensor


class Network:
    def __init__(self, arch: ArchSpec, weights: dict[str, Tensor], biases: dict[str, Tensor]):
        self.arch = arch
        self.weights = weights
        self.biases = biases
        self._relu_after = {
            l.id for l in arch.layers
            if l.kind == "add" or (l.kind == "conv"
                                   and not any(s.kind == "add" for s in arch.successors(l.id)))
        }
        self._cache: dict = {}

    @classmethod
    def init(cls, arch: ArchSpec, seed: int) -> "Network":
        rng = np.random.default_rng(seed)
        weights, biases = {}, {}
        for l in arch.layers:
            if l.kind == "conv":
                fan_in = l.in_channels * l.kernel ** 2
                weights[l.id] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                                  (l.out_channels, l.in_channels, l.kernel, l.kernel)))
            elif l.kind == "linear":
                weights[l.id] = Tensor(rng.normal(0.0, np.sqrt(1.0 / l.in_channels),
                                                  (l.out_channels, l.in_channels)))
                biases[l.id] = Tensor(np.zeros(l.out_channels))
        return cls(arch, weights, biases)

    def copy(self) -> "Network":
        return Network(self.arch, {k: t.copy() for k, t in self.weights.items()},
                       {k: t.copy() for k, t in self.biases.items()})

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for l in self.arch.layers:
            if l.id in self.weights:
                yield l.id, self.weights[l.id]
            if l.id in self.biases:
                yield l.id + ".bias", self.biases[l.id]

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        acts: dict[str, np.ndarray] = {}
        cache: dict[str, tuple] = {}
        for l in self.arch.layers:
            if l.kind == "input":
                out = x
            else:
                inp = acts[l.predecessors[0]]
                if l.kind == "conv":
                    out, cols = T.conv2d_forward(inp, self.weights[l.id].data, l.stride,
                                                 l.padding, return_cols=True)
                    cache[l.id + "/cols"] = cols
                elif l.kind == "pool":
                    out = T.avgpool2d_forward(inp, l.kernel)
                    cache[l.id] = (inp.shape,)
                elif l.kind == "linear":
                    cache[l.id + "/shape"] = inp.shape
                    inp = inp.reshape(inp.shape[0], -1)
                    out = T.linear_forward(inp, self.weights[l.id].data, self.biases[l.id].data)
                elif l.kind == "add":
                    out = inp + acts[l.predecessors[1]]
                else:
                    out = inp
                if l.kind in ("conv", "linear"):
                    cache[l.id] = (inp,)
                if l.id in self._relu_after:
                    cache[l.id + "/relu"] = (out,)
                    out = T.relu_forward(out)
            acts[l.id] = out
        self._cache = cache
        return acts[self.arch.layers[-1].id]

    __call__ = forward

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients for the last ``forward`` call."""
        cache = self._cache
        grads: dict[str, np.ndarray] = {self.arch.layers[-1].id: grad_out}
        for l in reversed(self.arch.layers):
            if l.kind == "input" or l.id not in grads:
                continue
            g = grads.pop(l.id)
            if l.id in self._relu_after:
                g = T.relu_backward(g, cache[l.id + "/relu"][0])
            if l.kind == "conv":
                (inp,) = cache[l.id]
                w = self.weights[l.id]
                gin, gw = T.conv2d_backward(g, inp, w.data, l.stride, l.padding,
                                            cols=cache[l.id + "/cols"])
                w.grad = gw if w.grad is None else w.grad + gw
                upstream = [gin]
            elif l.kind == "linear":
                (inp,) = cache[l.id]
                w, b = self.weights[l.id], self.biases[l.id]
                gin, gw, gb = T.linear_backward(g, inp, w.data)
                w.grad = gw if w.grad is None else w.grad + gw
                b.grad = gb if b.grad is None else b.grad + gb
                upstream = [gin.reshape(cache[l.id + "/shape"])]
            elif l.kind == "pool":
                upstream = [T.avgpool2d_backward(g, cache[l.id][0], l.kernel)]
            elif l.kind == "add":
                upstream = [g, g]
            else:
                upstream = [g]
            for p, gp in zip(l.predecessors, upstream):
                grads[p] = gp if p not in grads else grads[p] + gp
        self._cache = {}

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        self._cache = {}
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
