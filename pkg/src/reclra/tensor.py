"""Checked dense float64 arithmetic and portable seeded random streams.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, stored
row-major with the batch as the leading extent. The functions here add the
shape and finiteness checks the rest of the package relies on and never
modify their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError

DTYPE = np.float64


def as_tensor(data, *, copy: bool = False) -> np.ndarray:
    arr = np.array(data, dtype=DTYPE, copy=copy) if copy else np.asarray(data, dtype=DTYPE)
    if arr.ndim == 0:
        raise ShapeError("tensors need at least one extent")
    if any(n <= 0 for n in arr.shape):
        raise ShapeError(f"extents must be positive, got {arr.shape}")
    return arr


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains NaN or infinity")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product of an ``m x k`` and a ``k x n`` tensor."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    return check_finite(out, "matmul result")


def hadamard(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * b
    return check_finite(out, "hadamard result")


def scale(a, c: float) -> np.ndarray:
    return check_finite(as_tensor(a) * float(c), "scaled tensor")


def frobenius_norm(a) -> float:
    """Square root of the sum of squared entries.

    Entries are scaled by the largest magnitude first, so neither tiny nor
    huge values underflow or overflow when squared.
    """
    a = np.abs(np.asarray(a, dtype=DTYPE))
    if a.size == 0:
        return 0.0
    top = float(np.max(a))
    if top == 0.0 or not np.isfinite(top):
        return top
    s = a / top
    return top * float(np.sqrt(np.sum(s * s)))


class RngStream:
    """Seeded random stream backed by the counter-based Philox generator.

    Philox is a documented fixed algorithm, so a given seed yields the same
    draws on every platform. Streams are not thread-safe; hand each worker
    its own stream via :meth:`spawn`.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    def spawn(self, key: int) -> "RngStream":
        """Independent child stream determined only by ``(seed, key)``."""
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([self.seed, int(key)]))
        )
        return child

    def normal(self, shape, mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, sigma, size=shape).astype(DTYPE, copy=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)


def gaussian_fill(shape, mean: float, sigma: float, rng: RngStream) -> np.ndarray:
    """I.i.d. normal samples of the given shape; deterministic per seed."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    if any(n <= 0 for n in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    return mean + sigma * rng.normal(shape)
