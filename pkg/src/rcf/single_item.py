"""Single-item randomized candidate filtering.

Bidder i is a *candidate* for a draw ``(r, priority)`` when its discretized
value beats, under the tie-breaking order, the discretized low estimate of
every other bidder over i's signal. The allocation is the candidate
probability divided by a normalization factor eta.

Two routes compute that probability: :func:`rcf_monte_carlo` samples the
randomness, and :func:`prcf_allocation` evaluates the exact closed form over
each bidder's threshold ladder. Payments follow from the Myerson integral in
closed form (:func:`prcf_payment`) and numerically
(:func:`myerson_payment_numeric`) for cross-checking.

Arrays follow one convention throughout: ``values[i]`` is bidder i's value
at the reported profile and ``lows[j, i]`` is bidder j's low estimate over
bidder i's signal (the diagonal is ignored).
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .core import AuctionInstance, MechanismOutcome
from .numeric import (
    LN2,
    RoundingSeed,
    chunk_draws,
    generator,
    log_dagger_ratio,
    rounding_exponents,
)


class FeasibilityError(AssertionError):
    """The allocation probabilities sum to more than the supply."""


class FeasibilityWarning(UserWarning):
    pass


_WINNER_DOMAIN = 2


# -- thresholds and the closed form -------------------------------------------

@dataclass
class ThresholdLadder:
    """Thresholds tau_1 >= ... >= tau_n for one bidder.

    ``order`` lists the other bidders by decreasing low estimate (ties by
    index); ``tau[l-1]`` is tau_l and ``tau[n-1]`` is half the largest low
    estimate.
    """

    bidder: int
    order: np.ndarray
    lows: np.ndarray
    tau: np.ndarray

    @property
    def tau_n(self) -> float:
        return float(self.tau[-1])


def _others(lows: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
    n = lows.shape[0]
    idx = np.array([j for j in range(n) if j != i], dtype=int)
    return idx, np.asarray(lows[idx, i], dtype=float)


def thresholds(lows: np.ndarray, i: int) -> ThresholdLadder:
    lows = np.asarray(lows, dtype=float)
    n = lows.shape[0]
    if n < 2:
        raise ValueError("threshold ladders need at least two bidders")
    idx, col = _others(lows, i)
    perm = np.lexsort((idx, -col))  # decreasing low estimate, ties by index
    sorted_lows = col[perm]
    tau_n = sorted_lows[0] / 2.0
    tau = np.append(np.maximum(sorted_lows, tau_n), tau_n)
    return ThresholdLadder(i, idx[perm], sorted_lows, tau)


def threshold_matrix(lows: np.ndarray) -> np.ndarray:
    """All ladders at once: column i holds tau_{i,1..n}; shape (n, n)."""
    lows = np.array(lows, dtype=float)
    n = lows.shape[0]
    if n < 2:
        raise ValueError("threshold ladders need at least two bidders")
    np.fill_diagonal(lows, -np.inf)
    srt = -np.sort(-lows, axis=0)[: n - 1]  # diagonal sinks to the bottom row
    tau_n = srt[0] / 2.0
    return np.vstack([np.maximum(srt, tau_n[None, :]), tau_n[None, :]])


def ladder_weights(n: int) -> np.ndarray:
    """Pr[t(pi) = l] = 1/(l(l+1)) for l < n and 1/n for l = n."""
    ell = np.arange(1, n, dtype=float)
    return np.append(1.0 / (ell * (ell + 1.0)), 1.0 / n)


def candidate_probability_from_ladder(v, tau: np.ndarray) -> np.ndarray:
    """E[c_i] as a function of the scalar value v (vectorized over v)."""
    v = np.asarray(v, dtype=float)
    w = ladder_weights(tau.size)
    return log_dagger_ratio(v[..., None], tau) @ w


def payment_from_ladder(v, tau: np.ndarray) -> np.ndarray:
    """Myerson payment (times eta) for candidate probability over a ladder."""
    v = np.asarray(v, dtype=float)
    w = ladder_weights(tau.size)
    terms = np.maximum(0.0, np.minimum(tau, v[..., None] - tau)) / LN2
    return terms @ w


def expected_candidates(values: np.ndarray, lows: np.ndarray) -> np.ndarray:
    """Exact E_{r,pi}[c_i] for every bidder via the threshold ladders."""
    values = np.asarray(values, dtype=float)
    tau = threshold_matrix(lows)
    w = ladder_weights(values.size)
    return w @ log_dagger_ratio(values[None, :], tau)


def _eta_vector(eta, n: int) -> np.ndarray:
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
    if np.any(eta < 1):
        raise ValueError("normalization factor eta must be at least 1")
    return eta


def prcf_allocation(values: np.ndarray, lows: np.ndarray, eta) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return expected_candidates(values, lows) / _eta_vector(eta, values.size)


def prcf_payment(values: np.ndarray, lows: np.ndarray, eta) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.size
    eta = _eta_vector(eta, n)
    tau = threshold_matrix(lows)
    terms = np.maximum(0.0, np.minimum(tau, values[None, :] - tau)) / LN2
    return (ladder_weights(n) @ terms) / eta


# -- Myerson payments by integration ------------------------------------------

def myerson_payment_numeric(curve: Callable[[float], float], v: float,
                            breakpoints: Sequence[float] = ()) -> float:
    """x(v) v - int_0^v x(t) dt, integrating piecewise between breakpoints.

    ``curve`` must be smooth between consecutive breakpoints; each piece is
    integrated with adaptive Gauss-Kronrod quadrature.
    """
    if v <= 0:
        return 0.0
    cuts = sorted({0.0, float(v), *(float(b) for b in breakpoints if 0.0 < b < v)})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        val, err = integrate.quad(curve, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise ArithmeticError(f"integration did not converge on [{a}, {b}]")
        total += val
    return float(curve(v)) * v - total


def ladder_myerson_payment(v: float, tau: np.ndarray, eta: float = 1.0) -> float:
    """Numeric Myerson payment of bidder with ladder ``tau`` at value ``v``."""
    tau = np.asarray(tau, dtype=float)
    breaks = np.concatenate([tau, 2.0 * tau])

    def curve(t):
        return float(candidate_probability_from_ladder(t, tau)) / eta

    return myerson_payment_numeric(curve, v, breaks)


# -- candidates and Monte Carlo -------------------------------------------------

@dataclass
class CandidateDraw:
    seed: RoundingSeed
    c: np.ndarray


def beat_counts(kv: np.ndarray, kl: np.ndarray, priority: np.ndarray) -> np.ndarray:
    """Number of other bidders whose discretized low estimate each bidder beats.

    ``kv``: (S, n) value exponents, ``kl``: (S, n, n) low exponents indexed
    ``[s, j, i]``, ``priority``: (S, n). Returns an (S, n) integer array.
    """
    n = kv.shape[-1]
    vi = kv[:, None, :]
    beats = (vi > kl) | ((vi == kl) & (priority[:, None, :] > priority[:, :, None]))
    beats[:, np.arange(n), np.arange(n)] = False
    return beats.sum(axis=1)


def _low_matrix(lows: np.ndarray) -> np.ndarray:
    L = np.array(lows, dtype=float)
    np.fill_diagonal(L, 0.0)
    return L


def candidates(values: np.ndarray, lows: np.ndarray, seed: RoundingSeed, m: int = 1) -> CandidateDraw:
    """Candidate indicators for one draw; a bidder must beat at least n-m others."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if not 1 <= m <= max(1, n - 1):
        raise ValueError("m must satisfy 1 <= m < n")
    kv = rounding_exponents(values, seed.r)[None, :]
    kl = rounding_exponents(_low_matrix(lows), seed.r)[None, :, :]
    prio = np.asarray(seed.priority)[None, :]
    c = (beat_counts(kv, kl, prio)[0] >= n - m).astype(int)
    return CandidateDraw(seed, c)


@dataclass
class CandidateCounts:
    counts: np.ndarray  # per bidder, number of draws in which it was a candidate
    total: int  # sum over draws of the number of candidates
    total_sq: int  # sum over draws of the squared number of candidates
    samples: int

    @property
    def mean(self) -> np.ndarray:
        return self.counts / self.samples

    @property
    def stderr(self) -> np.ndarray:
        p = self.mean
        return np.sqrt(p * (1 - p) / self.samples)

    @property
    def mean_total(self) -> float:
        return self.total / self.samples

    @property
    def stderr_total(self) -> float:
        mean = self.mean_total
        var = max(self.total_sq / self.samples - mean * mean, 0.0)
        return float(np.sqrt(var / self.samples))


def chunk_size_for(n: int) -> int:
    """Draws per Monte Carlo chunk; depends on n only so results never depend on workers."""
    return int(max(256, min(1 << 16, (1 << 22) // max(1, n * n))))


def candidate_counts(values: np.ndarray, lows: np.ndarray, samples: int, base_seed: int,
                     m: int = 1, identity_order: bool = False, workers: int = 1) -> CandidateCounts:
    """Monte Carlo tally of candidates over ``samples`` draws of (r, priority).

    Draws are split into fixed-size chunks, each with its own counter-based
    stream; counts are integers reduced in chunk order, so the result is
    bit-identical for any number of workers.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    values = np.asarray(values, dtype=float)
    n = values.size
    L = _low_matrix(lows)
    size = chunk_size_for(n)
    n_chunks = -(-samples // size)

    def run(chunk: int):
        s = min(size, samples - chunk * size)
        r, prio = chunk_draws(base_seed, chunk, s, n)
        if identity_order:
            prio = np.broadcast_to(np.arange(n), (s, n))
        kv = rounding_exponents(values[None, :], r[:, None])
        kl = rounding_exponents(L[None, :, :], r[:, None, None])
        c = beat_counts(kv, kl, prio) >= n - m
        per_draw = c.sum(axis=1).astype(np.int64)
        return c.sum(axis=0).astype(np.int64), int(per_draw.sum()), int((per_draw ** 2).sum())

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(c) for c in range(n_chunks)]
    counts = np.zeros(n, dtype=np.int64)
    total = total_sq = 0
    for cnt, t, t2 in parts:
        counts += cnt
        total += t
        total_sq += t2
    return CandidateCounts(counts, total, total_sq, samples)


@dataclass
class MonteCarloEstimate:
    x: np.ndarray
    stderr: np.ndarray
    eta: np.ndarray
    counts: CandidateCounts


def rcf_monte_carlo(instance: AuctionInstance, eta, samples: int, base_seed: int,
                    identity_order: bool = False, workers: int = 1,
                    reports: tuple[np.ndarray, np.ndarray] | None = None) -> MonteCarloEstimate:
    values, lows = reports if reports is not None else instance.reports()
    eta = _eta_vector(eta, values.size)
    cc = candidate_counts(values, lows, samples, base_seed, m=instance.m,
                          identity_order=identity_order, workers=workers)
    return MonteCarloEstimate(cc.mean / eta, cc.stderr / eta, eta, cc)


# -- normalization and the end-to-end run ---------------------------------------

def personalized_etas(d_reports: Sequence[int], base: float = 4.0) -> np.ndarray:
    """eta_i = base * (max_{j != i} d_j + 1); independent of bidder i's own report."""
    d = np.asarray(d_reports, dtype=int)
    if d.size < 2:
        raise ValueError("personalized normalization needs at least two bidders")
    if np.any(d < 0):
        raise ValueError("self-bounding reports must be non-negative")
    order = np.argsort(-d, kind="stable")
    top, second = d[order[0]], d[order[1]]
    others_max = np.full(d.size, top)
    others_max[order[0]] = second
    return base * (others_max + 1.0)


def default_eta(instance: AuctionInstance, policy: str = "known") -> np.ndarray:
    n = instance.n
    if policy == "known":
        return np.full(n, 2.0 * (instance.known_d() + 1))
    if policy == "unknown":
        return personalized_etas(instance.d_reports(), base=4.0)
    raise ValueError(f"unknown eta policy {policy!r}")


def sample_winner(x: np.ndarray, seed: int) -> int | None:
    """One uniform draw partitioned by cumulative x in bidder order; None is no sale."""
    u = generator(seed, _WINNER_DOMAIN, 0).random()
    hit = np.searchsorted(np.cumsum(x), u, side="right")
    return int(hit) if hit < len(x) else None


def run_single_item(instance: AuctionInstance, policy: str = "known", eta=None,
                    seed: int | None = None) -> MechanismOutcome:
    """Closed-form randomized candidate filtering with n + n(n-1) queries."""
    if instance.m != 1:
        raise ValueError("run_single_item handles one item; use multi_unit for m > 1")
    n = instance.n
    default = default_eta(instance, policy)
    if eta is None:
        eta_vec = default
    else:
        eta_vec = _eta_vector(eta, n)
        if np.any(eta_vec < default):
            warnings.warn("eta below the default normalization: feasibility is not guaranteed",
                          FeasibilityWarning, stacklevel=2)
    before = instance.query_counts()
    values, lows = instance.reports()
    after = instance.query_counts()
    counts = {k: after[k] - before[k] for k in after}

    tau = threshold_matrix(lows)
    ec = ladder_weights(n) @ log_dagger_ratio(values[None, :], tau)
    x = ec / eta_vec
    terms = np.maximum(0.0, np.minimum(tau, values[None, :] - tau)) / LN2
    p = (ladder_weights(n) @ terms) / eta_vec
    if x.sum() > 1 + 1e-12:
        raise FeasibilityError(f"allocation sums to {x.sum():.12g} > 1")
    winners = None
    if seed is not None:
        w = sample_winner(x, seed)
        winners = [] if w is None else [w]
    return MechanismOutcome(
        x=x, p=p, eta=eta_vec, values=values, tau=tau.T.tolist(),
        expected_candidates=float(ec.sum()), query_counts=counts, seed=seed,
        winners=winners, m=1)
