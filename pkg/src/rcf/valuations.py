"""Concrete valuation families and brute-force checks of valuation properties.

Every family is a :class:`~rcf.core.ValuationOracle`. Families whose low
estimates have a cheap closed form override ``_low``/``_lows``; the others
fall back to enumerating the bidder's grid.

The property checks (monotonicity, submodularity over signals, the
self-bounding and critical parameters) evaluate the oracle on the whole grid
product, so they are meant for desk-scale grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import SignalSpace, ValuationOracle

TOL = 1e-9

FAMILIES = (
    "additive",
    "max",
    "weighted-sum-concave",
    "example31",
    "example32",
    "bounded-dependency",
    "coverage",
    "cut",
    "custom-table",
)


@dataclass
class FamilyDescriptor:
    family: str
    params: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, **self.params}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FamilyDescriptor":
        data = dict(data)
        try:
            family = data.pop("family")
        except KeyError:
            raise ValueError("valuation descriptor has no 'family' field") from None
        return cls(family, data)


def _vector(params, key, n, default=None, nonneg=True) -> np.ndarray:
    raw = params.get(key, default)
    if raw is None:
        raise ValueError(f"missing parameter {key!r}")
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"parameter {key!r} must have length {n}")
    if nonneg and np.any(arr < 0):
        raise ValueError(f"parameter {key!r} must be non-negative")
    return arr


class AdditiveValuation(ValuationOracle):
    """offset + sum_j w_j s_j with non-negative weights."""

    family = "additive"

    def __init__(self, space: SignalSpace, weights, offset: float = 0.0, d: int | None = 1):
        super().__init__(space, d)
        self.weights = _vector({"w": weights}, "w", space.n)
        if offset < 0:
            raise ValueError("offset must be non-negative")
        self.offset = float(offset)

    def _evaluate(self, s):
        return self.offset + float(self.weights @ s)

    def _lows(self, s):
        return self._evaluate(s) - self.weights * (s - self.space.minima())

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "weights": self.weights.tolist(), "offset": self.offset}


class MaxValuation(ValuationOracle):
    """offset + max_j w_j s_j, a 1-critical valuation."""

    family = "max"

    def __init__(self, space: SignalSpace, weights, offset: float = 0.0, d: int | None = 1):
        super().__init__(space, d)
        self.weights = _vector({"w": weights}, "w", space.n)
        if offset < 0:
            raise ValueError("offset must be non-negative")
        self.offset = float(offset)

    def _evaluate(self, s):
        return self.offset + float(np.max(self.weights * s))

    def _lows(self, s):
        terms = self.weights * s
        n = terms.size
        if n == 1:
            return np.array([self.offset + self.weights[0] * self.space.minimum(0)])
        order = np.argsort(terms)[::-1]
        best, second = terms[order[0]], terms[order[1]]
        others = np.full(n, best)
        others[order[0]] = second
        return self.offset + np.maximum(others, self.weights * self.space.minima())

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "weights": self.weights.tolist(), "offset": self.offset}


_CONCAVE = {
    "sqrt": np.sqrt,
    "log1p": np.log1p,
}


class ConcaveSumValuation(ValuationOracle):
    """offset + scale * g(sum_j w_j s_j) for a concave non-decreasing g.

    ``shape`` is ``sqrt``, ``log1p`` or ``cap`` (``min(t, cap)``). With
    non-negative weights this is monotone and submodular over signals.
    """

    family = "weighted-sum-concave"

    def __init__(self, space, weights, shape="sqrt", scale=1.0, cap=1.0, offset=0.0, d=1):
        super().__init__(space, d)
        self.weights = _vector({"w": weights}, "w", space.n)
        if shape not in (*_CONCAVE, "cap"):
            raise ValueError(f"unknown concave shape {shape!r}")
        if scale < 0 or offset < 0 or cap <= 0:
            raise ValueError("scale and offset must be non-negative, cap positive")
        self.shape, self.scale, self.cap, self.offset = shape, float(scale), float(cap), float(offset)

    def _g(self, t):
        if self.shape == "cap":
            return np.minimum(t, self.cap)
        return _CONCAVE[self.shape](t)

    def _evaluate(self, s):
        return self.offset + self.scale * float(self._g(self.weights @ s))

    def _lows(self, s):
        total = float(self.weights @ s)
        reduced = total - self.weights * (s - self.space.minima())
        return self.offset + self.scale * self._g(np.maximum(reduced, 0.0))

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "weights": self.weights.tolist(), "shape": self.shape,
                "scale": self.scale, "cap": self.cap, "offset": self.offset}


class Example31Valuation(ValuationOracle):
    """2(1+eps)/n * sum_i s_i: every bidder can lower the naive power-of-two rounding."""

    family = "example31"

    def __init__(self, space: SignalSpace, eps: float = 0.1, d: int | None = 1):
        super().__init__(space, d)
        if eps < 0:
            raise ValueError("eps must be non-negative")
        self.eps = float(eps)
        self.coef = 2.0 * (1.0 + self.eps) / space.n

    def _evaluate(self, s):
        return self.coef * float(s.sum())

    def _lows(self, s):
        return self.coef * (s.sum() - (s - self.space.minima()))

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "eps": self.eps}


class Example32Valuation(ValuationOracle):
    """Sliding-window valuation where fixed tie-breaking yields ~sqrt(n) candidates.

    For 1-based bidder index ``b >= sqrt(n)``:
    ``v_b(s) = 2^((n-b)/n) * sum_{j=b-sqrt(n)+1}^{b} s_j / sqrt(n)``; bidders
    below ``sqrt(n)`` have the constant-zero valuation.
    """

    family = "example32"

    def __init__(self, space: SignalSpace, bidder: int, d: int | None = 1):
        super().__init__(space, d)
        n = space.n
        q = math.isqrt(n)
        if q * q != n:
            raise ValueError("example32 needs n to be a perfect square")
        if not 1 <= bidder <= n:
            raise ValueError("bidder index is 1-based and must lie in [1, n]")
        self.bidder = bidder
        self.mask = np.zeros(n)
        if bidder >= q:
            self.mask[bidder - q: bidder] = 1.0
        self.coef = 2.0 ** ((n - bidder) / n) / q

    def _evaluate(self, s):
        return self.coef * float(self.mask @ s)

    def _lows(self, s):
        return self._evaluate(s) - self.coef * self.mask * (s - self.space.minima())

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "bidder": self.bidder}


class BoundedDependencyValuation(ValuationOracle):
    """offset + prod_{j in D}(1 + w_j s_j) - 1: depends on the signals in D only.

    Supermodular in general, hence not SOS, but |D|-critical.
    """

    family = "bounded-dependency"

    def __init__(self, space: SignalSpace, dependency, weights=None, offset=0.0, d=None):
        dep = sorted({int(j) for j in dependency})
        if any(not 0 <= j < space.n for j in dep):
            raise ValueError("dependency set refers to unknown bidders")
        super().__init__(space, len(dep) if d is None else d)
        self.dependency = dep
        w = np.ones(len(dep)) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (len(dep),) or np.any(w < 0):
            raise ValueError("weights must be non-negative, one per dependency")
        self.weights = w
        self.offset = float(offset)

    def _evaluate(self, s):
        return self.offset + float(np.prod(1.0 + self.weights * s[self.dependency])) - 1.0

    def _lows(self, s):
        out = np.full(self.space.n, self._evaluate(s))
        for j in self.dependency:
            t = s.copy()
            t[j] = self.space.minimum(j)
            out[j] = self._evaluate(t)
        return out

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "dependency": self.dependency,
                "weights": self.weights.tolist(), "offset": self.offset}


class CoverageValuation(ValuationOracle):
    """offset + sum_u w_u max_j C[j, u] s_j (weighted coverage; monotone SOS).

    On binary grids this is the classic weighted coverage set function.
    """

    family = "coverage"

    def __init__(self, space, cover, weights, offset=0.0, d=1):
        super().__init__(space, d)
        C = np.asarray(cover, dtype=float)
        w = np.asarray(weights, dtype=float)
        if C.ndim != 2 or C.shape[0] != space.n or w.shape != (C.shape[1],):
            raise ValueError("cover must be n x U and weights of length U")
        if np.any(C < 0) or np.any(w < 0) or offset < 0:
            raise ValueError("coverage parameters must be non-negative")
        self.cover, self.weights, self.offset = C, w, float(offset)

    def _evaluate(self, s):
        if self.cover.shape[1] == 0:
            return self.offset
        return self.offset + float(self.weights @ (self.cover * s[:, None]).max(axis=0))

    def _lows(self, s):
        n, U = self.cover.shape
        if U == 0:
            return np.full(n, self.offset)
        T = self.cover * s[:, None]
        if n == 1:
            best_without = np.zeros((1, U))
        else:
            order = np.argsort(T, axis=0)
            top = np.take_along_axis(T, order[-1:], axis=0)[0]
            second = np.take_along_axis(T, order[-2:-1], axis=0)[0]
            best_without = np.where(np.arange(n)[:, None] == order[-1][None, :], second, top)
        floor_terms = self.cover * self.space.minima()[:, None]
        return self.offset + np.maximum(best_without, floor_terms) @ self.weights

    def _low(self, i, s):
        return float(self._lows(s)[i])

    def descriptor(self):
        return {"family": self.family, "cover": self.cover.tolist(),
                "weights": self.weights.tolist(), "offset": self.offset}


class CutValuation(ValuationOracle):
    """offset + sum_{a<b} W[a,b] |s_a - s_b| + sum_j u_j s_j (non-monotone SOS).

    A convex function of a difference is submodular, and modular terms keep
    submodularity; ``offset`` must keep the value non-negative on the grid.
    """

    family = "cut"

    def __init__(self, space, edges, linear=None, offset=0.0, d=2):
        super().__init__(space, d)
        W = np.asarray(edges, dtype=float)
        n = space.n
        if W.shape != (n, n) or np.any(W < 0):
            raise ValueError("edges must be a non-negative n x n matrix")
        # pair weights are read from the strict upper triangle
        self.edges = np.triu(W, 1)
        self.linear = np.zeros(n) if linear is None else _vector({"u": linear}, "u", n, nonneg=False)
        self.offset = float(offset)
        lowest = self.offset + float(np.minimum(self.linear * space.minima(),
                                                self.linear * np.array([g[-1] for g in space.grids])).sum())
        if lowest < -1e-12:
            raise ValueError("offset too small: the valuation can become negative")

    def _evaluate(self, s):
        diff = np.abs(s[:, None] - s[None, :])
        return self.offset + float((self.edges * diff).sum()) + float(self.linear @ s)

    def descriptor(self):
        return {"family": self.family, "edges": self.edges.tolist(),
                "linear": self.linear.tolist(), "offset": self.offset}


class TableValuation(ValuationOracle):
    """Arbitrary valuation given by its full table over the grid product."""

    family = "custom-table"

    def __init__(self, space: SignalSpace, values, d: int | None = None):
        super().__init__(space, d)
        T = np.asarray(values, dtype=float)
        if T.shape != space.shape:
            raise ValueError(f"table shape {T.shape} does not match grids {space.shape}")
        if np.any(T < 0) or not np.all(np.isfinite(T)):
            raise ValueError("table values must be finite and non-negative")
        self.values = T

    def _evaluate(self, s):
        return float(self.values[self.space.index_of(s)])

    def _low(self, i, s):
        idx = list(self.space.index_of(s))
        idx[i] = slice(None)
        return float(self.values[tuple(idx)].min())

    def table(self, cap: int = 200_000) -> np.ndarray:
        return self.values.copy()

    def descriptor(self):
        return {"family": self.family, "values": self.values.tolist(), "d": self._d}


class FunctionValuation(ValuationOracle):
    """Wraps a plain Python callable; handy for tests, not serializable."""

    family = "function"

    def __init__(self, space: SignalSpace, fn: Callable[[np.ndarray], float], d: int | None = None):
        super().__init__(space, d)
        self.fn = fn

    def _evaluate(self, s):
        return float(self.fn(s))


def build_valuation(descriptor: FamilyDescriptor | dict, space: SignalSpace) -> ValuationOracle:
    if isinstance(descriptor, dict):
        descriptor = FamilyDescriptor.from_dict(descriptor)
    p = dict(descriptor.params)
    fam = descriptor.family
    try:
        if fam == "additive":
            return AdditiveValuation(space, p.pop("weights", 1.0), **p)
        if fam == "max":
            return MaxValuation(space, p.pop("weights", 1.0), **p)
        if fam == "weighted-sum-concave":
            return ConcaveSumValuation(space, p.pop("weights", 1.0), **p)
        if fam == "example31":
            return Example31Valuation(space, **p)
        if fam == "example32":
            return Example32Valuation(space, **p)
        if fam == "bounded-dependency":
            return BoundedDependencyValuation(space, **p)
        if fam == "coverage":
            return CoverageValuation(space, **p)
        if fam == "cut":
            return CutValuation(space, **p)
        if fam == "custom-table":
            return TableValuation(space, **p)
    except TypeError as exc:
        raise ValueError(f"malformed {fam} descriptor: {exc}") from None
    raise ValueError(f"unknown valuation family {fam!r}")


# -- brute-force property checks --------------------------------------------

def _table(oracle: ValuationOracle, cap: int) -> np.ndarray:
    return oracle.table(cap=cap)


def _profile_at(space: SignalSpace, index) -> list[float]:
    return [float(g[k]) for g, k in zip(space.grids, index)]


def check_monotone(oracle: ValuationOracle, cap: int = 200_000) -> bool:
    T = _table(oracle, cap)
    return all(np.all(np.diff(T, axis=i) >= -TOL) for i in range(T.ndim) if T.shape[i] > 1)


def check_sos(oracle: ValuationOracle, cap: int = 200_000) -> bool:
    """Increments along each coordinate must be non-increasing in every other one.

    Checking adjacent grid steps suffices: increments between distant signals
    are sums of adjacent ones, and comparable profiles are joined by chains of
    single-coordinate steps.
    """
    T = _table(oracle, cap)
    for i in range(T.ndim):
        if T.shape[i] < 2:
            continue
        inc = np.diff(T, axis=i)
        for k in range(T.ndim):
            if k != i and T.shape[k] > 1 and np.any(np.diff(inc, axis=k) > TOL):
                return False
    return True


def _lows_table(T: np.ndarray) -> list[np.ndarray]:
    return [T.min(axis=i, keepdims=True) for i in range(T.ndim)]


@dataclass
class SelfBoundingResult:
    parameter: float
    witness: list[float] | None

    @property
    def d(self) -> int:
        """Smallest integer d for which the valuation is d-self-bounding."""
        return int(math.ceil(self.parameter - TOL))


def self_bounding_parameter(oracle: ValuationOracle, cap: int = 200_000) -> SelfBoundingResult:
    """max over profiles of sum_i (v(s) - low_i(s)) / v(s)."""
    T = _table(oracle, cap)
    drops = sum(T - low for low in _lows_table(T))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(T > 0, drops / np.where(T > 0, T, 1.0),
                         np.where(drops > TOL, np.inf, 0.0))
    idx = np.unravel_index(int(np.argmax(ratio)), T.shape)
    return SelfBoundingResult(float(ratio[idx]), _profile_at(oracle.space, idx))


def critical_parameter(oracle: ValuationOracle, cap: int = 200_000) -> int:
    """max over profiles of the number of bidders that can strictly lower the value."""
    T = _table(oracle, cap)
    counts = sum((T > low + 1e-12).astype(int) for low in _lows_table(T))
    return int(np.max(counts))


@dataclass
class SOSAudit:
    monotone: bool
    sos: bool
    parameter: float
    bound: float
    witness: list[float] | None

    @property
    def passed(self) -> bool:
        return (not self.sos) or self.parameter <= self.bound + TOL


def sos_self_bounding_audit(oracle: ValuationOracle, cap: int = 200_000) -> SOSAudit:
    """Monotone SOS valuations are self-bounding, general SOS ones 2-self-bounding."""
    mono = check_monotone(oracle, cap)
    sos = check_sos(oracle, cap)
    res = self_bounding_parameter(oracle, cap)
    return SOSAudit(mono, sos, res.parameter, 1.0 if mono else 2.0, res.witness)
