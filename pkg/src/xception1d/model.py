"""Xception-1d: entry module, middle module of residual separable blocks, classifier head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np

from . import layers as L
from . import tensor as T
from .tensor import ShapeError, Tensor

ModelParams = Dict[str, Tensor]


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 35
    n_mod: int = 8
    # (channels, stride, kernel) for each entry convolution
    entry_channels: tuple = ((16, 4, 9), (32, 4, 9), (64, 4, 9), (128, 4, 9))
    block_channels: int = 128
    block_kernel: int = 9
    dropout_p: float = 0.75
    input_length: int = 16000
    residual: bool = True
    # Every block ends in instance norm, whose per-channel time average is
    # exactly beta. Without a relu in front of the average pool the middle
    # module would only reach the classifier through its betas.
    pre_pool_relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "entry_channels", tuple(tuple(int(v) for v in e) for e in self.entry_channels))

    def violations(self) -> list[str]:
        problems = []
        if self.n_classes < 1:
            problems.append(f"n_classes must be >= 1 (got {self.n_classes})")
        if self.n_mod < 1:
            problems.append(f"n_mod must be >= 1 (got {self.n_mod})")
        if not self.entry_channels:
            problems.append("entry_channels must list at least one convolution")
        for i, entry in enumerate(self.entry_channels):
            if len(entry) != 3:
                problems.append(f"entry_channels[{i}] must be (channels, stride, kernel)")
                continue
            c, s, m = entry
            if c < 1:
                problems.append(f"entry_channels[{i}] channels must be >= 1 (got {c})")
            if s < 1:
                problems.append(f"entry_channels[{i}] stride must be >= 1 (got {s})")
            if m < 1 or m % 2 == 0:
                problems.append(f"entry_channels[{i}] kernel must be odd (got {m})")
        if self.block_channels < 1:
            problems.append(f"block_channels must be >= 1 (got {self.block_channels})")
        if self.block_kernel < 1 or self.block_kernel % 2 == 0:
            problems.append(f"block_kernel must be odd (got {self.block_kernel})")
        if not 0 <= self.dropout_p < 1:
            problems.append(f"dropout_p must be in [0, 1) (got {self.dropout_p})")
        if self.input_length < 1:
            problems.append(f"input_length must be >= 1 (got {self.input_length})")
        return problems

    def validate(self) -> "ModelConfig":
        problems = self.violations()
        if problems:
            raise InvalidConfigError("invalid model config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["entry_channels"] = [list(e) for e in self.entry_channels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def toy(cls, n_classes: int = 2, input_length: int = 16000, **overrides) -> "ModelConfig":
        """Small network that trains in seconds on CPU."""
        base = dict(
            n_classes=n_classes,
            n_mod=1,
            entry_channels=((8, 4, 9), (16, 4, 9), (16, 4, 9)),
            block_channels=16,
            block_kernel=9,
            dropout_p=0.0,
            input_length=input_length,
        )
        base.update(overrides)
        return cls(**base)


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Ordered parameter names and shapes; the order is the serialization order."""
    config.validate()
    shapes: dict[str, tuple] = {}
    c_in = 1
    for i, (c, _, m) in enumerate(config.entry_channels):
        shapes[f"entry.{i}.conv.weight"] = (c, c_in, m)
        shapes[f"entry.{i}.conv.bias"] = (c,)
        shapes[f"entry.{i}.norm.gamma"] = (c,)
        shapes[f"entry.{i}.norm.beta"] = (c,)
        c_in = c
    bc, k = config.block_channels, config.block_kernel
    for j in range(config.n_mod):
        for t, c_from in ((1, c_in), (2, bc)):
            shapes[f"block.{j}.sep{t}.depthwise"] = (c_from, 1, k)
            shapes[f"block.{j}.sep{t}.pointwise"] = (bc, c_from, 1)
            shapes[f"block.{j}.sep{t}.bias"] = (bc,)
            shapes[f"block.{j}.norm{t}.gamma"] = (bc,)
            shapes[f"block.{j}.norm{t}.beta"] = (bc,)
        if config.residual and c_in != bc:
            shapes[f"block.{j}.shortcut.weight"] = (bc, c_in, 1)
            shapes[f"block.{j}.shortcut.bias"] = (bc,)
        c_in = bc
    shapes["head.dense.weight"] = (c_in, config.n_classes)
    shapes["head.dense.bias"] = (config.n_classes,)
    return shapes


def _fan_in(name: str, shape: tuple) -> int:
    if name.endswith("dense.weight"):
        return shape[0]
    return shape[1] * shape[2]


def build(config: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float32) -> ModelParams:
    """Initialize parameters: fan-in uniform weights, zero biases, gamma=1, beta=0."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    params: ModelParams = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("weight", "depthwise", "pointwise"):
            bound = 1.0 / math.sqrt(_fan_in(name, shape))
            data = rng.uniform(-bound, bound, size=shape)
        elif leaf == "gamma":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return params


def param_count_breakdown(config: ModelConfig) -> dict[str, int]:
    """Scalar parameter count per layer, from closed-form arithmetic."""
    config.validate()
    counts: dict[str, int] = {}
    c_in = 1
    for i, (c, _, m) in enumerate(config.entry_channels):
        counts[f"entry.{i}.conv"] = c * c_in * m + c
        counts[f"entry.{i}.norm"] = 2 * c
        c_in = c
    bc, k = config.block_channels, config.block_kernel
    for j in range(config.n_mod):
        counts[f"block.{j}.sep1"] = c_in * k + bc * c_in + bc
        counts[f"block.{j}.norm1"] = 2 * bc
        counts[f"block.{j}.sep2"] = bc * k + bc * bc + bc
        counts[f"block.{j}.norm2"] = 2 * bc
        if config.residual and c_in != bc:
            counts[f"block.{j}.shortcut"] = bc * c_in + bc
        c_in = bc
    counts["head.dense"] = c_in * config.n_classes + config.n_classes
    return counts


def param_count(config: ModelConfig) -> int:
    return sum(param_count_breakdown(config).values())


def count_params(params: ModelParams) -> int:
    return sum(p.size for p in params.values())


def _norm(params: ModelParams, prefix: str) -> L.InstanceNorm1dParams:
    return L.InstanceNorm1dParams(params[prefix + ".gamma"], params[prefix + ".beta"])


def _sep(params: ModelParams, prefix: str) -> L.SeparableConv1dParams:
    return L.SeparableConv1dParams(
        params[prefix + ".depthwise"], params[prefix + ".pointwise"], params[prefix + ".bias"]
    )


def entry_module(params: ModelParams, config: ModelConfig, x: Tensor) -> Tensor:
    h = x
    for i, (_, stride, _) in enumerate(config.entry_channels):
        conv = L.Conv1dParams(params[f"entry.{i}.conv.weight"], params[f"entry.{i}.conv.bias"], stride)
        h = L.conv1d(h, conv)
        h = L.instance_norm1d(h, _norm(params, f"entry.{i}.norm"))
        h = T.relu(h)
    return h


def xception_block(params: ModelParams, config: ModelConfig, j: int, x: Tensor) -> Tensor:
    """[relu -> separable conv -> instance norm] x 2, plus the residual shortcut."""
    y = x
    for t in (1, 2):
        y = T.relu(y)
        y = L.separable_conv1d(y, _sep(params, f"block.{j}.sep{t}"))
        y = L.instance_norm1d(y, _norm(params, f"block.{j}.norm{t}"))
    if not config.residual:
        return y
    key = f"block.{j}.shortcut.weight"
    if key in params:
        shortcut = L.conv1d(x, L.Conv1dParams(params[key], params[f"block.{j}.shortcut.bias"], 1))
    else:
        shortcut = x
    return y + shortcut


def middle_module(params: ModelParams, config: ModelConfig, h: Tensor) -> Tensor:
    for j in range(config.n_mod):
        h = xception_block(params, config, j, h)
    return h


def classification_module(
    params: ModelParams, config: ModelConfig, h: Tensor, train: bool, rng: np.random.Generator | None
) -> Tensor:
    if config.pre_pool_relu:
        h = T.relu(h)
    pooled = L.global_avg_pool1d(h)
    pooled = L.dropout(pooled, config.dropout_p, train, rng)
    return L.dense(pooled, params["head.dense.weight"], params["head.dense.bias"])


def forward(
    params: ModelParams,
    config: ModelConfig,
    x: Tensor | np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits [batch, n_classes] for waveforms ``x`` of shape [batch, 1, input_length]."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=next(iter(params.values())).dtype))
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != config.input_length:
        raise ShapeError("forward", x.shape, (None, 1, config.input_length))
    h = entry_module(params, config, x)
    h = middle_module(params, config, h)
    return classification_module(params, config, h, train, rng)


def loss_fn(params, config, x, labels, train=False, rng=None) -> Tensor:
    return L.softmax_cross_entropy(forward(params, config, x, train, rng), labels)
