"""Dense float64 tensors and hand-written adjoints for a small CNN.

Every op comes as a ``*_forward`` / ``*_backward`` pair working on numpy
arrays. Activations carry a leading batch axis; the unbatched form of an
input is accepted and promoted. Losses are batch means, so the adjoints
produced here are already batch-averaged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


@dataclass
class Tensor:
    """A parameter tensor with an optional gradient slot."""

    data: np.ndarray
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.grad is not None:
            self.grad = np.asarray(self.grad, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                raise DimensionError(
                    f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise DimensionError(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    # floor convention: trailing rows a strided window cannot reach are dropped
    span = size + 2 * padding - kernel
    if span < 0:
        raise DimensionError(
            f"kernel {kernel} does not fit size {size} with padding {padding}")
    return span // stride + 1


def _im2col(x: np.ndarray, s: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """(B, m, h, w) -> (B, m*s*s, ho*wo) unfolded receptive fields."""
    B, m = x.shape[:2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((B, m, s, s, ho, wo))
    for i in range(s):
        for j in range(s):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(B, m * s * s, ho * wo)


def conv2d_forward(x, weights, stride: int = 1, padding: int = 0, return_cols: bool = False):
    """Cross-correlate ``x`` [B?, m, h, w] with ``weights`` [n, m, s, s] (no bias).

    With ``return_cols`` the unfolded input is returned as well so a later
    ``conv2d_backward`` can skip recomputing it.
    """
    x, squeeze = _batched(x, 4)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise DimensionError(f"weights must be [n, m, s, s], got {weights.shape}")
    n, m, s, _ = weights.shape
    if x.shape[1] != m:
        raise DimensionError(
            f"input shape {x.shape} has {x.shape[1]} channels but weights {weights.shape} expect {m}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} padding={padding}")
    B, _, h, w = x.shape
    ho = conv_output_size(h, s, stride, padding)
    wo = conv_output_size(w, s, stride, padding)
    cols = _im2col(x, s, stride, padding, ho, wo)
    out = np.matmul(weights.reshape(n, -1), cols).reshape(B, n, ho, wo)
    out = out[0] if squeeze else out
    return (out, cols) if return_cols else out


def conv2d_backward(output_grad, saved_input, weights, stride: int = 1,
                    padding: int = 0, cols=None) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(input_grad, weight_grad)``."""
    x, squeeze = _batched(saved_input, 4)
    g, _ = _batched(output_grad, 4)
    weights = np.asarray(weights, dtype=np.float64)
    n, m, s, _ = weights.shape
    B, mx, h, w = x.shape
    ho = conv_output_size(h, s, stride, padding)
    wo = conv_output_size(w, s, stride, padding)
    if mx != m or g.shape != (B, n, ho, wo):
        raise DimensionError(
            f"output_grad {g.shape}, input {x.shape} and weights {weights.shape} are inconsistent")
    if cols is None:
        cols = _im2col(x, s, stride, padding, ho, wo)
    gmat = g.reshape(B, n, ho * wo)
    weight_grad = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(n, m, s, s)

    dcols = np.matmul(weights.reshape(n, -1).T, gmat).reshape(B, m, s, s, ho, wo)
    dpad = np.zeros((B, m, h + 2 * padding, w + 2 * padding))
    for i in range(s):
        for j in range(s):
            dpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    input_grad = np.ascontiguousarray(dpad[:, :, padding:padding + h, padding:padding + w])
    return (input_grad[0] if squeeze else input_grad), weight_grad


def linear_forward(x, weight, bias) -> np.ndarray:
    """``x`` [B, in] -> [B, out] with ``weight`` [out, in]."""
    x, squeeze = _batched(x, 2)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or x.shape[1] != weight.shape[1] or np.shape(bias) != (weight.shape[0],):
        raise DimensionError(
            f"input {x.shape}, weight {weight.shape}, bias {np.shape(bias)} are inconsistent")
    out = x @ weight.T + bias
    return out[0] if squeeze else out


def linear_backward(output_grad, saved_input, weight):
    """Returns ``(input_grad, weight_grad, bias_grad)``."""
    x, squeeze = _batched(saved_input, 2)
    g, _ = _batched(output_grad, 2)
    if g.shape != (x.shape[0], weight.shape[0]):
        raise DimensionError(f"output_grad {g.shape} does not match input {x.shape} / weight {weight.shape}")
    input_grad = g @ weight
    return (input_grad[0] if squeeze else input_grad), g.T @ x, g.sum(axis=0)


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(output_grad, saved_input) -> np.ndarray:
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != np.shape(saved_input):
        raise DimensionError(f"output_grad {output_grad.shape} vs input {np.shape(saved_input)}")
    return output_grad * (np.asarray(saved_input) > 0)


def avgpool2d_forward(x, kernel: int) -> np.ndarray:
    """Non-overlapping average pooling (stride == kernel)."""
    x, squeeze = _batched(x, 4)
    B, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise DimensionError(f"input {x.shape} not divisible by pool kernel {kernel}")
    out = x.reshape(B, c, h // kernel, kernel, w // kernel, kernel).mean(axis=(3, 5))
    return out[0] if squeeze else out


def avgpool2d_backward(output_grad, input_shape: Sequence[int], kernel: int) -> np.ndarray:
    g = np.asarray(output_grad, dtype=np.float64)
    h, w = input_shape[-2:]
    if g.shape[-2:] != (h // kernel, w // kernel):
        raise DimensionError(f"output_grad {g.shape} does not match input {tuple(input_shape)}")
    up = np.repeat(np.repeat(g, kernel, axis=-2), kernel, axis=-1)
    return up / (kernel * kernel)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    z, _ = _batched(logits, 2)
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise DimensionError(f"labels {labels.shape} do not match logits {z.shape}")
    C = z.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / z.shape[0]


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             velocity: Sequence[np.ndarray], cfg: SgdConfig) -> None:
    """In-place heavy-ball update: v = mu*v + g + wd*p; p -= lr*v."""
    if not len(params) == len(grads) == len(velocity):
        raise DimensionError("params, grads and velocity differ in length")
    for p, g, v in zip(params, grads, velocity):
        if not p.shape == g.shape == v.shape:
            raise DimensionError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= cfg.momentum
        v += g
        if cfg.weight_decay:
            v += cfg.weight_decay * p
        p -= cfg.learning_rate * v
