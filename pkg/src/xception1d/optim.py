"""Adam with decoupled weight decay, and reduce-on-plateau learning-rate halving."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray] | None,
    state: AdamState,
) -> AdamState:
    """One Adam update applied in place to ``params``.

    ``grads`` defaults to each parameter's ``.grad`` (missing grads count as zero).
    Weight decay is decoupled: ``p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        step = (m / corr1) / (np.sqrt(v / corr2) + state.eps) + state.weight_decay * p.data
        p.data = (p.data - state.lr * step).astype(p.dtype, copy=False)
    return state


@dataclass
class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    lr: float = 1e-4
    factor: float = 0.5
    patience: int = 4
    best: float = -math.inf
    wait: int = 0
    history: list = field(default_factory=list)

    def step(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr *= self.factor
                self.wait = 0
        self.history.append(self.lr)
        return self.lr


def plateau_update(sched: PlateauSchedule, dev_metric: float) -> float:
    return sched.step(dev_metric)
