"""Random instance generators for experiments and verification suites.

Generator specs have the form ``family:key=value,key=value``, e.g.
``coverage:n=6,m=2`` or ``example32:n=16``.
"""
from __future__ import annotations

import math
from typing import Any

import numpy as np

from .core import AuctionInstance, SignalSpace, ValuationOracle
from .valuations import (
    AdditiveValuation,
    BoundedDependencyValuation,
    ConcaveSumValuation,
    CoverageValuation,
    CutValuation,
    Example31Valuation,
    Example32Valuation,
    MaxValuation,
)

MONOTONE_SOS = ("coverage", "weighted-sum-concave", "additive", "max")
GENERATOR_FAMILIES = (*MONOTONE_SOS, "monotone-sos", "cut", "bounded-dependency",
                      "example31", "example32", "mixed")


def make_space(n: int, levels: int = 2) -> SignalSpace:
    if levels < 1:
        raise ValueError("need at least one signal level")
    return SignalSpace([np.linspace(0.0, 1.0, levels) if levels > 1 else [0.0]] * n)


def _offset(rng: np.random.Generator) -> float:
    # strictly positive values keep every bidder's rounding well defined
    return float(rng.uniform(0.02, 0.5))


def random_coverage(space: SignalSpace, rng: np.random.Generator, universe: int | None = None,
                    density: float = 0.4) -> CoverageValuation:
    U = universe or int(rng.integers(2, 2 * space.n + 2))
    cover = (rng.random((space.n, U)) < density).astype(float)
    cover *= rng.uniform(0.5, 1.0, size=cover.shape)
    weights = rng.uniform(0.2, 2.0, size=U)
    return CoverageValuation(space, cover, weights, offset=_offset(rng))


def random_concave(space: SignalSpace, rng: np.random.Generator) -> ConcaveSumValuation:
    w = rng.exponential(1.0, size=space.n) * (rng.random(space.n) < 0.7)
    shape = str(rng.choice(["sqrt", "log1p", "cap"]))
    return ConcaveSumValuation(space, w, shape=shape, scale=float(rng.uniform(0.5, 3.0)),
                               cap=float(rng.uniform(0.5, 2.0)), offset=_offset(rng))


def random_additive(space: SignalSpace, rng: np.random.Generator) -> AdditiveValuation:
    w = rng.exponential(1.0, size=space.n) * (rng.random(space.n) < 0.7)
    return AdditiveValuation(space, w, offset=_offset(rng))


def random_max(space: SignalSpace, rng: np.random.Generator) -> MaxValuation:
    return MaxValuation(space, rng.exponential(1.0, size=space.n), offset=_offset(rng))


def random_cut(space: SignalSpace, rng: np.random.Generator, density: float = 0.5) -> CutValuation:
    n = space.n
    W = np.triu(rng.exponential(1.0, size=(n, n)) * (rng.random((n, n)) < density), 1)
    u = rng.uniform(-1.0, 1.0, size=n) * (rng.random(n) < 0.5)
    top = np.array([g[-1] for g in space.grids])
    floor = float(np.minimum(u * space.minima(), u * top).sum())
    return CutValuation(space, W, linear=u, offset=max(0.0, -floor) + _offset(rng))


def random_bounded_dependency(space: SignalSpace, rng: np.random.Generator,
                              max_d: int = 3) -> BoundedDependencyValuation:
    size = int(rng.integers(1, min(max_d, space.n) + 1))
    dep = rng.choice(space.n, size=size, replace=False)
    return BoundedDependencyValuation(space, dep.tolist(), rng.uniform(0.2, 2.0, size=size),
                                      offset=_offset(rng))


_MAKERS = {
    "coverage": random_coverage,
    "weighted-sum-concave": random_concave,
    "additive": random_additive,
    "max": random_max,
    "cut": random_cut,
    "bounded-dependency": random_bounded_dependency,
}


def random_oracle(family: str, space: SignalSpace, rng: np.random.Generator) -> ValuationOracle:
    if family == "monotone-sos":
        family = str(rng.choice(MONOTONE_SOS))
    elif family == "mixed":
        family = str(rng.choice(list(_MAKERS)))
    return _MAKERS[family](space, rng)


def example31_instance(n: int, eps: float = 0.1, m: int = 1) -> AuctionInstance:
    space = SignalSpace.binary(n)
    return AuctionInstance([Example31Valuation(space, eps) for _ in range(n)], np.ones(n), m=m)


def example32_instance(n: int, m: int = 1) -> AuctionInstance:
    q = math.isqrt(n)
    if q * q != n:
        raise ValueError("example32 needs n to be a perfect square")
    space = SignalSpace.binary(n)
    return AuctionInstance([Example32Valuation(space, b) for b in range(1, n + 1)], np.ones(n), m=m)


def generate_instance(family: str, n: int, rng: np.random.Generator, m: int = 1,
                      levels: int = 2, **params: Any) -> AuctionInstance:
    """Random instance of ``family`` with n bidders (examples are deterministic)."""
    if family == "example31":
        return example31_instance(n, float(params.get("eps", 0.1)), m)
    if family == "example32":
        return example32_instance(n, m)
    if family not in (*_MAKERS, "monotone-sos", "mixed"):
        raise ValueError(f"unknown generator family {family!r}")
    space = make_space(n, levels)
    oracles = [random_oracle(family, space, rng) for _ in range(n)]
    profile = np.array([rng.choice(g) for g in space.grids])
    return AuctionInstance(oracles, profile, m=m)


def parse_generator_spec(spec: str) -> tuple[str, dict[str, Any]]:
    family, _, rest = spec.partition(":")
    if family not in GENERATOR_FAMILIES:
        raise ValueError(f"unknown generator family {family!r}")
    params: dict[str, Any] = {}
    for item in filter(None, rest.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"malformed generator parameter {item!r}")
        try:
            params[key.strip()] = int(val)
        except ValueError:
            try:
                params[key.strip()] = float(val)
            except ValueError:
                params[key.strip()] = val.strip()
    return family, params


def instance_from_spec(spec: str, seed: int | None = None, m: int | None = None) -> AuctionInstance:
    family, params = parse_generator_spec(spec)
    n = int(params.pop("n", 4))
    mm = int(params.pop("m", 1) if m is None else m)
    levels = int(params.pop("levels", 2))
    rng = np.random.default_rng(params.pop("seed", seed if seed is not None else 0))
    return generate_instance(family, n, rng, m=mm, levels=levels, **params)
