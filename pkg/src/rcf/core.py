"""Domain types shared by every mechanism: signal grids, valuation oracles,
auction instances and mechanism outcomes.

Valuation oracles count every query they answer so that mechanisms can be
audited for their query complexity.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

INSTANCE_FORMAT = "rcf-instance/1"


class GridTooLargeError(ValueError):
    """Raised when a brute-force check would enumerate too many profiles."""


class SignalSpace:
    """Per-bidder finite, strictly increasing signal grids.

    The smallest element of each grid plays the role of the "zero" signal;
    it does not have to be the literal value 0.
    """

    def __init__(self, grids: Sequence[Sequence[float]]):
        if len(grids) == 0:
            raise ValueError("need at least one bidder")
        parsed = []
        for i, g in enumerate(grids):
            arr = np.asarray(g, dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"grid {i} must be a non-empty 1-d sequence")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"grid {i} must contain finite non-negative reals")
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"grid {i} must be strictly increasing")
            arr.flags.writeable = False
            parsed.append(arr)
        self.grids: tuple[np.ndarray, ...] = tuple(parsed)

    @classmethod
    def binary(cls, n: int) -> "SignalSpace":
        return cls([[0.0, 1.0]] * n)

    @property
    def n(self) -> int:
        return len(self.grids)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(g.size for g in self.grids)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def minimum(self, i: int) -> float:
        return float(self.grids[i][0])

    def minima(self) -> np.ndarray:
        return np.array([g[0] for g in self.grids])

    def validate(self, profile: Sequence[float]) -> np.ndarray:
        s = np.asarray(profile, dtype=float)
        if s.shape != (self.n,):
            raise ValueError(f"profile must have length {self.n}, got {s.shape}")
        for i, (x, g) in enumerate(zip(s, self.grids)):
            if not np.any(g == x):
                raise ValueError(f"signal {x} of bidder {i} is not on its grid")
        return s

    def index_of(self, profile: Sequence[float]) -> tuple[int, ...]:
        return tuple(int(np.searchsorted(g, x)) for g, x in zip(self.grids, profile))

    def profiles(self) -> Iterator[tuple[float, ...]]:
        return itertools.product(*(g.tolist() for g in self.grids))

    def to_list(self) -> list[list[float]]:
        return [g.tolist() for g in self.grids]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignalSpace):
            return NotImplemented
        return self.n == other.n and all(
            np.array_equal(a, b) for a, b in zip(self.grids, other.grids))

    def __repr__(self) -> str:
        return f"SignalSpace(shape={self.shape})"


class ValuationOracle:
    """Value-query access to one bidder's private valuation function.

    Subclasses implement ``_evaluate``; they may override ``_low`` and
    ``_lows`` with closed forms. The public ``value``, ``low`` and
    ``low_estimates`` methods are the counted query interface used by the
    mechanisms. ``d`` is the bidder's reported self-bounding parameter.
    """

    family = "abstract"

    def __init__(self, space: SignalSpace, d: int | None = None):
        self.space = space
        self._d = d
        self._lock = threading.Lock()
        self._value_queries = 0
        self._low_queries = 0

    # -- to be provided by subclasses -----------------------------------
    def _evaluate(self, s: np.ndarray) -> float:
        raise NotImplementedError

    def _low(self, i: int, s: np.ndarray) -> float:
        t = s.copy()
        best = np.inf
        for o in self.space.grids[i]:
            t[i] = o
            best = min(best, self._evaluate(t))
        return float(best)

    def _lows(self, s: np.ndarray) -> np.ndarray:
        return np.array([self._low(i, s) for i in range(self.space.n)])

    def descriptor(self) -> dict[str, Any]:
        raise TypeError(f"{type(self).__name__} is not serializable")

    # -- counted query interface ----------------------------------------
    def _count(self, values: int = 0, lows: int = 0) -> None:
        with self._lock:
            self._value_queries += values
            self._low_queries += lows

    def value(self, profile: Sequence[float]) -> float:
        s = np.asarray(profile, dtype=float)
        self._count(values=1)
        return float(self._evaluate(s))

    def low(self, i: int, profile: Sequence[float]) -> float:
        """Infimum of the value over bidder ``i``'s grid, others fixed."""
        if not 0 <= i < self.space.n:
            raise IndexError(f"bidder index {i} out of range")
        s = np.asarray(profile, dtype=float)
        self._count(lows=1)
        return float(self._low(i, s))

    def low_estimates(self, profile: Sequence[float], exclude: int | None = None) -> np.ndarray:
        """All n low estimates at ``profile``; entry ``exclude`` is NaN and not counted."""
        s = np.asarray(profile, dtype=float)
        out = np.asarray(self._lows(s), dtype=float).copy()
        if exclude is not None:
            out[exclude] = np.nan
        self._count(lows=self.space.n - (exclude is not None))
        return out

    @property
    def d(self) -> int:
        if self._d is None:
            from .valuations import self_bounding_parameter
            param = self_bounding_parameter(self).parameter
            self._d = int(np.ceil(param - 1e-9))
        return self._d

    @property
    def value_queries(self) -> int:
        return self._value_queries

    @property
    def low_queries(self) -> int:
        return self._low_queries

    @property
    def queries(self) -> int:
        return self._value_queries + self._low_queries

    def reset_counters(self) -> None:
        with self._lock:
            self._value_queries = 0
            self._low_queries = 0

    def table(self, cap: int = 200_000) -> np.ndarray:
        """Uncounted evaluation on the whole grid product (brute-force checks)."""
        if self.space.size > cap:
            raise GridTooLargeError(
                f"grid product has {self.space.size} profiles (cap {cap})")
        vals = np.fromiter((self._evaluate(np.asarray(p)) for p in self.space.profiles()),
                           dtype=float, count=self.space.size)
        return vals.reshape(self.space.shape)


def low_estimate_by_enumeration(oracle: ValuationOracle, i: int, profile: Sequence[float]) -> float:
    """min over bidder i's grid of oracle.value, one counted query per grid point."""
    n = oracle.space.n
    if not 0 <= i < n:
        raise IndexError(f"bidder index {i} out of range for n={n}")
    s = oracle.space.validate(profile).copy()
    grid = oracle.space.grids[i]
    if grid.size == 0:
        raise ValueError("empty grid")
    best = np.inf
    for o in grid:
        s[i] = o
        best = min(best, oracle.value(s))
    return float(best)


def lex_greater(a: float, i: int, b: float, j: int, priority: Sequence[int]) -> bool:
    """``a`` (owned by bidder i) beats ``b`` (owned by j) under tie-breaking order.

    ``priority[k]`` is the rank of bidder k; the larger rank wins ties.
    """
    if i == j:
        raise ValueError("lexicographic comparison needs two distinct bidders")
    if a != b:
        return a > b
    return priority[i] > priority[j]


@dataclass
class AuctionInstance:
    oracles: list[ValuationOracle]
    profile: np.ndarray
    m: int = 1
    d: int | None = None

    def __post_init__(self):
        if len(self.oracles) < 1:
            raise ValueError("need at least one bidder")
        space = self.oracles[0].space
        if space.n != len(self.oracles):
            raise ValueError("signal space dimension must equal the number of bidders")
        self.profile = space.validate(self.profile)
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.m > 1 and self.m >= self.n:
            raise ValueError("multi-unit mode requires 1 <= m < n")

    @property
    def n(self) -> int:
        return len(self.oracles)

    @property
    def space(self) -> SignalSpace:
        return self.oracles[0].space

    def reports(self) -> tuple[np.ndarray, np.ndarray]:
        """Query every bidder once for its value and its n-1 low estimates.

        Returns ``(values, lows)`` with ``lows[j, i]`` the low estimate of
        bidder j's value over bidder i's signal; the diagonal is NaN.
        """
        values = np.array([o.value(self.profile) for o in self.oracles])
        lows = np.vstack([o.low_estimates(self.profile, exclude=j)
                          for j, o in enumerate(self.oracles)])
        return values, lows

    def true_values(self) -> np.ndarray:
        return np.array([o._evaluate(self.profile) for o in self.oracles])

    def d_reports(self) -> np.ndarray:
        return np.array([o.d for o in self.oracles], dtype=int)

    def known_d(self) -> int:
        return int(self.d) if self.d is not None else int(self.d_reports().max())

    def reset_counters(self) -> None:
        for o in self.oracles:
            o.reset_counters()

    def query_counts(self) -> dict[str, int]:
        return {
            "value": sum(o.value_queries for o in self.oracles),
            "low": sum(o.low_queries for o in self.oracles),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": INSTANCE_FORMAT,
            "n": self.n,
            "m": self.m,
            "d": self.d,
            "grids": self.space.to_list(),
            "valuations": [o.descriptor() for o in self.oracles],
            "profile": self.profile.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AuctionInstance":
        from .valuations import FamilyDescriptor, build_valuation

        fmt = data.get("format")
        if fmt != INSTANCE_FORMAT:
            raise ValueError(f"unsupported instance format {fmt!r}")
        space = SignalSpace(data["grids"])
        if "n" in data and data["n"] != space.n:
            raise ValueError("field n disagrees with the number of grids")
        oracles = [build_valuation(FamilyDescriptor.from_dict(v), space)
                   for v in data["valuations"]]
        return cls(oracles, np.asarray(data["profile"], dtype=float),
                   m=int(data.get("m", 1)), d=data.get("d"))


@dataclass
class MechanismOutcome:
    """Allocation probabilities, payments and diagnostics of one run."""

    x: np.ndarray
    p: np.ndarray
    eta: np.ndarray
    values: np.ndarray
    tau: list[list[float]] = field(default_factory=list)
    expected_candidates: float = float("nan")
    query_counts: dict[str, int] = field(default_factory=dict)
    seed: int | None = None
    winners: list[int] | None = None
    m: int = 1

    def __post_init__(self):
        if np.any(self.x < -1e-15) or np.any(self.x > 1 + 1e-12):
            raise ValueError("allocation probabilities must lie in [0, 1]")
        if self.x.sum() > self.m + 1e-9:
            raise ValueError(f"allocation is infeasible: sum x = {self.x.sum()} > {self.m}")
        if np.any(self.p < -1e-15):
            raise ValueError("payments must be non-negative")

    @property
    def welfare(self) -> float:
        return float(np.dot(self.x, self.values))

    def welfare_ratio(self) -> float:
        """Optimal welfare (sum of the top-m values) over expected welfare."""
        opt = float(np.sort(self.values)[::-1][: self.m].sum())
        w = self.welfare
        if opt == 0:
            return 1.0
        return opt / w if w > 0 else float("inf")

    def to_dict(self) -> dict[str, Any]:
        eta = self.eta.tolist() if np.ndim(self.eta) else float(self.eta)
        return {
            "x": self.x.tolist(),
            "p": self.p.tolist(),
            "eta": eta,
            "values": self.values.tolist(),
            "m": self.m,
            "tau": self.tau,
            "expectedCandidates": self.expected_candidates,
            "welfareRatio": self.welfare_ratio(),
            "queryCounts": self.query_counts,
            "seed": self.seed,
            "winners": self.winners,
        }
