"""Randomized power-of-two discretization and the deterministic randomness contract.

``f_r(w)`` rounds ``w > 0`` down to the nearest point of the shifted grid
``{2^(r+k) : k integer}``. Discretized values are stored by their integer
exponent ``k``; two values discretized under the same offset ``r`` compare
exactly like their exponents. Zero maps to a ``-inf`` exponent, which loses
every strict comparison and ties only with itself.

The exponent is computed from the binary mantissa instead of ``log2`` so that
halving a value shifts its exponent by exactly one and the interval
``2^(r+k) <= w < 2^(r+k+1)`` is respected at its left end point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)
ZERO_EXPONENT = -math.inf


def rounding_exponents(w, r):
    """Vectorized exponents ``k`` with ``2^(r+k) <= w < 2^(r+k+1)``.

    ``w`` and ``r`` broadcast against each other. Entries with ``w == 0``
    get ``-inf``. Returns a float array (exponents are exact integers).
    """
    w = np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(w < 0):
        raise ValueError("cannot discretize a negative value")
    mant, e = np.frexp(w)
    # w = (2*mant) * 2^(e-1) with 2*mant in [1, 2)
    k = (e - 1).astype(float) - (2.0 * mant < np.exp2(r))
    return np.where(w > 0, k, ZERO_EXPONENT)


@dataclass(frozen=True)
class DiscretizedValue:
    exponent: float  # integer, or -inf for a zero value
    r: float

    @property
    def value(self) -> float:
        if self.exponent == ZERO_EXPONENT:
            return 0.0
        return 2.0 ** (self.r + self.exponent)

    def __lt__(self, other: "DiscretizedValue") -> bool:
        self._check(other)
        return self.exponent < other.exponent

    def __gt__(self, other: "DiscretizedValue") -> bool:
        self._check(other)
        return self.exponent > other.exponent

    def __le__(self, other: "DiscretizedValue") -> bool:
        self._check(other)
        return self.exponent <= other.exponent

    def __ge__(self, other: "DiscretizedValue") -> bool:
        self._check(other)
        return self.exponent >= other.exponent

    def _check(self, other: "DiscretizedValue") -> None:
        if self.r != other.r:
            raise ValueError("discretized values under different offsets are not comparable")


def round_down(r: float, w: float) -> DiscretizedValue:
    if not 0.0 <= r < 1.0:
        raise ValueError(f"offset r must lie in [0, 1), got {r}")
    if w < 0:
        raise ValueError("cannot discretize a negative value")
    k = float(rounding_exponents(w, r))
    if k != ZERO_EXPONENT:
        k = float(int(k))
    return DiscretizedValue(k, float(r))


def log_dagger(alpha):
    """log2 clamped to [0, 1]; 0 on [0, 1] and 1 from 2 on (including +inf)."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise ValueError("log_dagger is defined for non-negative arguments")
    with np.errstate(divide="ignore"):
        out = np.clip(np.log2(np.where(a > 0, a, 1.0)), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def log_dagger_ratio(a, b):
    """log_dagger(a / b) with a > 0, b = 0 giving 1 and a = 0 giving 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("log_dagger_ratio needs non-negative arguments")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log2(np.where(a > 0, a, 1.0)) - np.log2(np.where(b > 0, b, 1.0))
    out = np.clip(ratio, 0.0, 1.0)
    out = np.where(b == 0, 1.0, out)
    out = np.where(a == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def cross_probability(a, b):
    """Exact probability over uniform r in [0, 1) that f_r(a) > f_r(b)."""
    return log_dagger_ratio(a, b)


def expected_rounded_value(v: float) -> float:
    """E_r[f_r(v)] = v / (2 ln 2)."""
    if not v > 0:
        raise ValueError("expected rounded value needs v > 0")
    return v / (2.0 * LN2)


def log_dagger_subadditive(alpha: float, beta: float, tol: float = 1e-12) -> bool:
    """Check log_dagger(alpha * beta) <= log_dagger(alpha) + log_dagger(beta)."""
    if alpha < 0 or beta < 0:
        raise ValueError("arguments must be non-negative")
    lhs = log_dagger(alpha * beta)
    return lhs <= log_dagger(alpha) + log_dagger(beta) + tol


# -- randomness ------------------------------------------------------------

_SEED_DOMAIN = 0
_CHUNK_DOMAIN = 1


@dataclass(frozen=True)
class RoundingSeed:
    """One draw of the mechanism's randomness: offset r and tie-breaking order.

    ``priority[i]`` is the rank of bidder i; higher ranks win ties.
    """

    r: float
    priority: tuple[int, ...]
    origin: int

    def __post_init__(self):
        if not 0.0 <= self.r < 1.0:
            raise ValueError("r must lie in [0, 1)")
        if sorted(self.priority) != list(range(len(self.priority))):
            raise ValueError("priority must be a permutation of 0..n-1")


def generator(base_seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox stream addressed by ``(base_seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(base_seed) & (2**64 - 1), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


def draw_seed(base_seed: int, stream_index: int, n: int) -> RoundingSeed:
    rng = generator(base_seed, _SEED_DOMAIN, stream_index)
    r = float(rng.random())
    priority = rng.permutation(n)
    return RoundingSeed(r, tuple(int(p) for p in priority), int(base_seed))


def chunk_draws(base_seed: int, chunk_index: int, size: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``size`` draws of (r, priority) for Monte Carlo chunk ``chunk_index``.

    Returns ``r`` of shape (size,) and ``priority`` of shape (size, n).
    """
    rng = generator(base_seed, _CHUNK_DOMAIN, chunk_index)
    r = rng.random(size)
    priority = rng.permuted(np.broadcast_to(np.arange(n), (size, n)), axis=1)
    return r, priority
