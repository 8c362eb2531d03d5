"""Probability primitives and a platform-stable random number generator.

Everything here works in float64 on the last axis, so a single logit vector
of shape ``(C,)`` and a batch of shape ``(B, C)`` go through the same code.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Rng",
    "check_finite",
    "log_softmax",
    "pairwise_diff",
    "safe_log",
    "softmax",
]

LOG_FLOOR = 1e-300

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def check_finite(x, name="logits"):
    """Raise ``ValueError`` naming the first non-finite entry of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        index = tuple(int(i) for i in bad) if x.ndim > 1 else int(bad[0])
        raise ValueError(f"non-finite value {x[tuple(bad)]!r} in {name} at index {index}")
    return x


def softmax(logits):
    """Row-wise softmax with max-subtraction.

    Examples
    --------
    >>> softmax([0.0, 0.0])
    array([0.5, 0.5])
    """
    x = check_finite(logits)
    if x.shape[-1] < 1:
        raise ValueError("softmax needs at least one class")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    """Row-wise ``log(softmax(logits))`` via log-sum-exp.

    Never returns ``-inf`` for finite input: the largest entry maps to
    ``-log(sum(exp(z)))`` with ``z <= 0`` and every other entry is a finite
    difference from it.
    """
    x = check_finite(logits)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def pairwise_diff(logits):
    """``out[..., j, k] = logits[..., j] - logits[..., k]``."""
    x = np.asarray(logits, dtype=np.float64)
    return x[..., :, None] - x[..., None, :]


def safe_log(p):
    """Natural log with inputs clamped at 1e-300 so probabilities never give -inf."""
    return np.log(np.maximum(p, LOG_FLOOR))


def _mix(z):
    # splitmix64 finalizer; uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based splitmix64 generator keyed by ``(seed, stream)``.

    Draw ``i`` is ``mix(key + (i + 1) * golden)``, so the output depends only
    on the key and the counter and is identical on every platform that has
    64-bit unsigned wraparound (i.e. all of them). Distinct stream ids give
    independent sequences for the same seed.
    """

    def __init__(self, seed=0, stream=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        with np.errstate(over="ignore"):
            s = _mix(np.array([self.stream], dtype=np.uint64) + _GOLDEN)
            self._key = _mix(np.array([self.seed], dtype=np.uint64) ^ s)[0]
        self.counter = 0

    def spawn(self, stream):
        """A fresh generator with the same seed and another stream id."""
        return Rng(self.seed, stream)

    def bits(self, n):
        """``n`` raw 64-bit outputs."""
        n = int(n)
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(self._key + idx * _GOLDEN)

    def random(self, size=None):
        """Uniform doubles on [0, 1) with 53 bits of resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, loc=0.0, scale=1.0, size=None):
        """Gaussian draws by Box-Muller (two uniforms per output)."""
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n).reshape(2, n)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u in (0, 1]
        z = r * np.cos(2.0 * np.pi * u[1])
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, n, size=None):
        """Integers in ``[0, n)``."""
        u = np.asarray(self.random(size))
        out = np.minimum(np.floor(u * n).astype(np.int64), n - 1)
        return int(out) if size is None else out

    def permutation(self, n):
        return np.argsort(self.random(int(n)), kind="stable")
