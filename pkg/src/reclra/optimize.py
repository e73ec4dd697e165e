"""Applying update sets: norm-ball re-projection followed by SGD or Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkGraph
from .tensor import frobenius_norm


def reproject(delta, c: float) -> np.ndarray:
    """Rescale ``delta`` onto the ball of radius ``c`` when its norm reaches ``c``."""
    if not c > 0:
        raise ValueError(f"projection radius must be positive, got {c}")
    delta = np.asarray(delta, dtype=np.float64)
    norm = frobenius_norm(delta)
    if norm >= c:
        return delta / (norm / c)
    return delta.copy()


@dataclass
class Optimizer:
    """Optimizer state plus the step rule.

    ``kind`` is ``"adam"`` or ``"sgd"``. Every delta is re-projected with
    radius ``radius`` before it touches the moments or the parameters; pass
    ``math.inf`` to disable projection.
    """

    kind: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    radius: float = 1.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.radius > 0:
            raise ValueError("projection radius must be positive")

    def step(self, net: NetworkGraph, updates: dict) -> None:
        unknown = [k for k in updates if k not in net.params]
        if unknown:
            raise KeyError(f"updates for unknown parameters: {unknown}")
        self.step_count += 1
        t = self.step_count
        for name in net.params:
            if name not in updates:
                continue
            param = net.params[name]
            delta = np.asarray(updates[name], dtype=np.float64)
            if delta.shape != param.shape:
                raise ValueError(f"{name}: delta {delta.shape} vs parameter {param.shape}")
            if math.isfinite(self.radius):
                delta = reproject(delta, self.radius)
            if self.kind == "sgd":
                param -= self.lr * delta
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * delta
            v *= self.beta2
            v += (1.0 - self.beta2) * (delta * delta)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
