"""Activation functions, their derivatives, and the categorical NLL loss.

Derivatives exist only for the backprop baseline. The local rule never asks
for them, so the signum activation (which has none) is fully usable there.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UnsupportedDerivativeError

KINDS = ("identity", "sigmoid", "tanh", "relu", "lrelu", "elu", "sign", "softmax")

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Activation:
    """Tagged activation kind; ``param`` is the lrelu slope or elu alpha."""

    name: str
    param: float = 0.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown activation {self.name!r}; expected one of {KINDS}")
        if self.name == "lrelu" and not 0.0 < self.param < 1.0:
            raise ValueError(f"lrelu slope must lie in (0, 1), got {self.param}")
        if self.name == "elu" and not self.param > 0.0:
            raise ValueError(f"elu alpha must be positive, got {self.param}")

    @classmethod
    def parse(cls, text: str, lrelu_slope: float = 0.01, elu_alpha: float = 1.0) -> "Activation":
        """Parse ``"tanh"``, ``"lrelu"``, ``"lrelu(0.2)"`` or ``"elu(0.5)"``."""
        m = re.fullmatch(r"\s*([a-z]+)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*", text)
        if not m:
            raise ValueError(f"cannot parse activation {text!r}")
        name, arg = m.group(1), m.group(2)
        if name == "lrelu":
            return cls(name, float(arg) if arg else lrelu_slope)
        if name == "elu":
            return cls(name, float(arg) if arg else elu_alpha)
        if arg:
            raise ValueError(f"activation {name!r} takes no parameter")
        return cls(name)

    def __str__(self) -> str:
        if self.name in ("lrelu", "elu"):
            return f"{self.name}({self.param!r})"
        return self.name

    @property
    def differentiable(self) -> bool:
        return self.name != "sign"


def _sigmoid(h):
    return 0.5 * (1.0 + np.tanh(0.5 * h))


def softmax(h: np.ndarray) -> np.ndarray:
    shifted = h - np.max(h, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def apply(kind: Activation, h: np.ndarray) -> np.ndarray:
    """Elementwise (row-wise for softmax) activation of ``h``."""
    name = kind.name
    if name == "identity":
        return np.array(h, dtype=np.float64, copy=True)
    if name == "sigmoid":
        return _sigmoid(h)
    if name == "tanh":
        return np.tanh(h)
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "lrelu":
        return np.where(h > 0.0, h, kind.param * h)
    if name == "elu":
        return np.where(h > 0.0, h, kind.param * np.expm1(np.minimum(h, 0.0)))
    if name == "sign":
        return np.sign(h)
    return softmax(h)


def derivative(kind: Activation, h: np.ndarray) -> np.ndarray:
    """Elementwise derivative, for the backprop baseline only.

    Raises UnsupportedDerivativeError for ``sign``. Softmax has no elementwise
    derivative; the backprop engine uses the fused softmax-NLL gradient.
    """
    name = kind.name
    if name == "sign":
        raise UnsupportedDerivativeError("the sign activation has no usable derivative")
    if name == "softmax":
        raise UnsupportedDerivativeError(
            "softmax has no elementwise derivative; use the fused softmax/NLL gradient"
        )
    if name == "identity":
        return np.ones_like(h, dtype=np.float64)
    if name == "sigmoid":
        s = _sigmoid(h)
        return s * (1.0 - s)
    if name == "tanh":
        t = np.tanh(h)
        return 1.0 - t * t
    if name == "relu":
        return (h > 0.0).astype(np.float64)
    if name == "lrelu":
        return np.where(h > 0.0, 1.0, kind.param)
    # elu
    return np.where(h > 0.0, 1.0, kind.param * np.exp(np.minimum(h, 0.0)))


def nll_loss(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Batch mean of ``-sum(y * log p)`` with probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise ShapeError(f"probs {probs.shape} and targets {onehot.shape} differ")
    if probs.ndim == 1:
        probs, onehot = probs[None, :], onehot[None, :]
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    return float(-np.sum(onehot * logp) / probs.shape[0])
