"""Layers used by Xception-1d, built on the autodiff primitives in :mod:`tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

INSTANCE_NORM_EPS = 1e-5


@dataclass
class Conv1dParams:
    weight: Tensor  # [N, C_in, m]
    bias: Tensor | None  # [N]
    stride: int = 1

    def __post_init__(self):
        if self.weight.shape[2] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.weight.shape[2]}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


@dataclass
class SeparableConv1dParams:
    depthwise: Tensor  # [C, 1, S]
    pointwise: Tensor  # [N, C, 1]
    bias: Tensor | None  # [N]

    def __post_init__(self):
        if self.depthwise.shape[1] != 1:
            raise ValueError("depthwise weight must have a single input channel per filter")
        if self.pointwise.shape[2] != 1:
            raise ValueError("pointwise kernel size must be 1")
        if self.depthwise.shape[2] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.depthwise.shape[2]}")


@dataclass
class InstanceNorm1dParams:
    gamma: Tensor  # [C]
    beta: Tensor  # [C]
    eps: float = INSTANCE_NORM_EPS


def conv1d(x: Tensor, p: Conv1dParams) -> Tensor:
    return T.conv1d(x, p.weight, p.bias, p.stride)


def separable_conv1d(x: Tensor, p: SeparableConv1dParams) -> Tensor:
    """Depthwise (stride 1, same padding) followed by a 1x1 pointwise conv."""
    if x.ndim != 3 or x.shape[1] != p.depthwise.shape[0] or p.pointwise.shape[1] != p.depthwise.shape[0]:
        raise ShapeError("separable_conv1d", x.shape, p.depthwise.shape, p.pointwise.shape)
    h = T.depthwise_conv1d(x, p.depthwise)
    return T.conv1d(h, p.pointwise, p.bias, 1)


def instance_norm1d(x: Tensor, p: InstanceNorm1dParams) -> Tensor:
    """Normalize every (item, channel) over time with the biased variance."""
    if x.ndim != 3 or p.gamma.shape != (x.shape[1],):
        raise ShapeError("instance_norm1d", x.shape, p.gamma.shape)
    mean = x.mean(axis=2, keepdims=True)
    var = x.var(axis=2, keepdims=True)
    xhat = (x - mean) * T.power(var + p.eps, -0.5)
    c = x.shape[1]
    return xhat * p.gamma.reshape(1, c, 1) + p.beta.reshape(1, c, 1)


def global_avg_pool1d(x: Tensor) -> Tensor:
    if x.ndim != 3:
        raise ShapeError("global_avg_pool1d", x.shape)
    return x.mean(axis=2)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeError("dense", x.shape, weight.shape, bias.shape)
    return T.matmul(x, weight) + bias


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is the identity."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return x * Tensor(mask)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    # max-shift is a constant: log-sum-exp is shift invariant
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = logits - shift
    logp = z - z.exp().sum(axis=1, keepdims=True).log()
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    return -(logp * Tensor(onehot)).sum() / len(labels)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class OpCount(NamedTuple):
    regular: int
    separable: int
    ratio: float


def opcount(length: int, kernel: int, in_channels: int, out_channels: int) -> OpCount:
    """Multiply-accumulates of a regular vs depthwise separable conv (stride 1).

    The ratio is separable/regular = 1/out_channels + 1/kernel.
    """
    if min(length, kernel, in_channels, out_channels) < 1:
        raise ValueError("opcount arguments must be positive")
    regular = length * kernel * in_channels * out_channels
    separable = length * kernel * in_channels + length * in_channels * out_channels
    return OpCount(regular, separable, separable / regular)


def measure_macs(length: int, kernel: int, in_channels: int, out_channels: int) -> tuple[int, int]:
    """Multiply-accumulates tallied by the kernels for one stride-1 input: (regular, separable)."""
    x = Tensor(np.zeros((1, in_channels, length), dtype=np.float32))
    with T.count_macs() as regular:
        T.conv1d(x, Tensor(np.zeros((out_channels, in_channels, kernel), np.float32)))
    sep = SeparableConv1dParams(
        Tensor(np.zeros((in_channels, 1, kernel), np.float32)),
        Tensor(np.zeros((out_channels, in_channels, 1), np.float32)),
        None,
    )
    with T.count_macs() as separable:
        separable_conv1d(x, sep)
    return regular.total, separable.total
