"""Dense numeric primitives and the seeded random stream used across the package."""

from __future__ import annotations

import zlib

import numpy as np
from scipy.special import expit


def _check_finite(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: input contains non-finite entries")
    return v


def relu(v) -> np.ndarray:
    v = _check_finite(v, "relu")
    return np.maximum(v, 0.0)


def sigmoid(v) -> np.ndarray:
    """Logistic function, stable for large ``|v|``."""
    v = _check_finite(v, "sigmoid")
    return expit(v)


def affine(W, b, x) -> np.ndarray:
    """Return ``W @ x + b``; ``x`` may carry leading batch axes."""
    W = _check_finite(W, "affine")
    b = _check_finite(b, "affine")
    x = _check_finite(x, "affine")
    if W.ndim != 2 or b.ndim != 1:
        raise ValueError("affine: W must be 2-D and b 1-D")
    if W.shape[1] != x.shape[-1] or W.shape[0] != b.shape[0]:
        raise ValueError(
            f"affine: dimension mismatch W{W.shape}, b{b.shape}, x{x.shape}"
        )
    return x @ W.T + b


class Rng:
    """Seeded, counter-based (Philox) random stream.

    Named children are derived from ``(seed, crc32(name))`` so each component
    (splits, masks, init, dropout) can be reproduced on its own.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._key = tuple(_key)
        self.reset()

    def reset(self) -> None:
        ss = np.random.SeedSequence([self.seed, *self._key])
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, name: str) -> "Rng":
        return Rng(self.seed, self._key + (zlib.crc32(name.encode("utf-8")),))

    # thin pass-throughs used by the rest of the package
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def exponential(self, scale, size=None):
        return self.generator.exponential(scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, n, size, replace=False):
        return self.generator.choice(n, size=size, replace=replace)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def as_rng(rng: Rng | int | None, name: str | None = None) -> Rng:
    if rng is None:
        rng = Rng(0)
    elif not isinstance(rng, Rng):
        rng = Rng(int(rng))
    return rng.child(name) if name else rng


def dropout_mask(rng: Rng, n, keep_p: float) -> np.ndarray:
    """Bernoulli keep mask (1.0 = keep) of shape ``n``."""
    if not 0.0 < keep_p <= 1.0:
        raise ValueError(f"keep_p must lie in (0, 1], got {keep_p}")
    if keep_p == 1.0:
        return np.ones(n)
    return (rng.random(n) < keep_p).astype(np.float64)
