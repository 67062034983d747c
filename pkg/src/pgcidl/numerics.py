"""Probability primitives, the RMSprop update and a portable seeded PRNG.

Everything here works on float64 numpy arrays. The random stream is a
counter-based SplitMix64 generator so that a given seed yields the same draws
regardless of numpy version or platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .exceptions import DimensionError, InvalidInputError

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def softmax(logits):
    """Max-shifted softmax of a 1-D logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise InvalidInputError("softmax expects a non-empty 1-D vector")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("softmax received non-finite logits")
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def kl_divergence(p, q, eps=1e-8):
    """KL(p || q) in nats with ``q`` floored at ``eps``.

    Terms with ``p == 0`` contribute nothing. Flooring (rather than mixing
    with the uniform distribution) keeps ``kl_divergence(p, p) == 0`` exactly
    whenever every entry of ``p`` is at least ``eps``.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence: shapes {p.shape} and {q.shape} differ")
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    support = p > 0
    ps = p[support]
    qs = np.maximum(q[support], eps)
    return float(np.sum(ps * np.log(ps / qs)))


@dataclass
class RmspropState:
    """Per-parameter running average of squared gradients."""

    decay: float = 0.9
    epsilon: float = 1e-8
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise InvalidInputError("RMSprop decay must lie in (0, 1)")
        if self.epsilon <= 0:
            raise InvalidInputError("RMSprop epsilon must be positive")

    def copy(self):
        return RmspropState(self.decay, self.epsilon,
                            {k: v.copy() for k, v in self.accumulators.items()})


def rmsprop_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                 state: RmspropState, lr: float):
    """Apply one RMSprop update.

    Returns ``(new_params, new_state)``; the inputs are not modified.
    """
    if lr <= 0:
        raise InvalidInputError("learning rate must be positive")
    if set(params) != set(grads):
        raise DimensionError("params and grads name different tensors")
    new_params = {}
    new_acc = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        grad = np.asarray(grads[name], dtype=np.float64)
        if value.shape != grad.shape:
            raise DimensionError(f"{name}: parameter shape {value.shape} != gradient shape {grad.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(value)
        elif acc.shape != value.shape:
            raise DimensionError(f"{name}: accumulator shape {acc.shape} != {value.shape}")
        acc = state.decay * acc + (1.0 - state.decay) * grad * grad
        new_acc[name] = acc
        new_params[name] = value - lr * grad / (np.sqrt(acc) + state.epsilon)
    return new_params, RmspropState(state.decay, state.epsilon, new_acc)


def _splitmix(x):
    # x: uint64 array; arithmetic wraps modulo 2**64
    z = x.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def mix_seed(*keys: int) -> int:
    """Hash a tuple of integers into a 64-bit seed."""
    h = np.array([0x243F6A8885A308D3], dtype=np.uint64)
    for key in keys:
        h = _splitmix(h ^ np.array([int(key) & _MASK64], dtype=np.uint64)) + _GOLDEN
    return int(_splitmix(h)[0])


class SeededStream:
    """Counter-based SplitMix64 stream.

    Draw ``i`` is a pure function of ``(seed, i)``, so sequences are identical
    across processes and platforms.

    Examples
    --------
    >>> s = SeededStream(0)
    >>> u = s.draw_uniform(3)
    >>> bool(np.all((u >= 0) & (u < 1)))
    True
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._base = np.uint64(mix_seed(self.seed))

    def _raw(self, n: int):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _splitmix(self._base + idx * _GOLDEN)

    def draw_uniform(self, size=None):
        """Uniform draws on [0, 1) with 53 bits of resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(u[0]) if size is None else u.reshape(size)

    def draw_gaussian(self, size=None, mean=0.0, std=1.0):
        """Standard normal draws via the Box-Muller transform."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = self.draw_uniform(2 * m).reshape(m, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty(2 * m)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = mean + std * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int):
        """A uniformly random permutation of ``range(n)``."""
        return np.argsort(self.draw_uniform(n), kind="stable")

    def draw_choice(self, n: int, size=None, replace=True):
        """Indices drawn from ``range(n)``."""
        k = 1 if size is None else int(size)
        if replace:
            out = np.minimum((self.draw_uniform(k) * n).astype(np.int64), n - 1)
        else:
            if k > n:
                raise InvalidInputError("cannot draw more items than available without replacement")
            out = self.permutation(n)[:k]
        return int(out[0]) if size is None else out

    def spawn(self, *keys: int) -> "SeededStream":
        """An independent stream keyed by ``(seed, *keys)``."""
        return SeededStream(mix_seed(self.seed, *keys))
