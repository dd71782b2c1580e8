"""Multi-unit candidate filtering for m identical items and unit-demand bidders.

A bidder is a candidate when its discretized value beats the discretized low
estimates of at least n - m other bidders. Candidate probabilities are
computed exactly by integrating over the rounding offset r: between
consecutive breakpoints (fractional parts of log2 of the relevant values)
every comparison is fixed, and a uniformly random tie-breaking order makes
bidder i beat enough tied rivals with probability clamp((m - a)/(t + 1), 0, 1),
where a rivals are strictly above and t tie.

Fractional allocations are turned into ex-post feasible assignments by
decomposing an allocation matrix into a convex combination of matchings.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import AuctionInstance, MechanismOutcome
from .numeric import RoundingSeed, generator, rounding_exponents
from .single_item import (
    CandidateDraw,
    FeasibilityError,
    FeasibilityWarning,
    candidates,
    myerson_payment_numeric,
    personalized_etas,
)

_EX_POST_DOMAIN = 3
ZERO_TOL = 1e-12


def _check_m(m: int, n: int) -> None:
    if not 1 <= m < n:
        raise ValueError(f"multi-unit mode needs 1 <= m < n, got m={m}, n={n}")


def multi_candidates(values, lows, m: int, seed: RoundingSeed) -> CandidateDraw:
    values = np.asarray(values, dtype=float)
    _check_m(m, values.size)
    return candidates(values, lows, seed, m=m)


def _fractional_log2(w: np.ndarray) -> np.ndarray:
    mant, _ = np.frexp(w)
    return np.log2(2.0 * mant)


def candidate_probability(v: float, rival_lows: np.ndarray, m: int) -> float:
    """Exact Pr_{r,pi}[bidder with value v beats >= n-m of the rival low estimates]."""
    rival_lows = np.asarray(rival_lows, dtype=float)
    pts = np.append(rival_lows, v)
    pos = pts[pts > 0]
    cuts = np.unique(np.concatenate([[0.0, 1.0], _fractional_log2(pos)]))
    cuts = cuts[(cuts >= 0.0) & (cuts <= 1.0)]
    lengths = np.diff(cuts)
    keep = lengths > 0
    mids = (cuts[:-1] + cuts[1:])[keep] / 2.0
    lengths = lengths[keep]
    kv = rounding_exponents(v, mids)
    kl = rounding_exponents(rival_lows[None, :], mids[:, None])
    above = (kl > kv[:, None]).sum(axis=1)
    ties = (kl == kv[:, None]).sum(axis=1)
    prob = np.clip((m - above) / (ties + 1.0), 0.0, 1.0)
    return float(prob @ lengths)


def multi_expected_candidates(values, lows, m: int) -> np.ndarray:
    """Exact E[c_i] for every bidder under the at-least-(n-m) rule."""
    values = np.asarray(values, dtype=float)
    lows = np.asarray(lows, dtype=float)
    n = values.size
    _check_m(m, n)
    out = np.empty(n)
    for i in range(n):
        rivals = np.delete(lows[:, i], i)
        out[i] = candidate_probability(values[i], rivals, m)
    return out


def fixed_order_expected_candidates(values, lows, priority, m: int = 1) -> np.ndarray:
    """Exact E_r[c_i] when the tie-breaking order is held fixed (only r is random).

    ``priority[i]`` is bidder i's rank; higher ranks win ties.
    """
    values = np.asarray(values, dtype=float)
    lows = np.asarray(lows, dtype=float)
    prio = np.asarray(priority)
    n = values.size
    if not 1 <= m <= max(1, n - 1):
        raise ValueError("m must satisfy 1 <= m < n")
    out = np.empty(n)
    for i in range(n):
        rivals = np.delete(lows[:, i], i)
        wins_tie = np.delete(prio, i) < prio[i]
        pts = np.append(rivals, values[i])
        cuts = np.unique(np.concatenate([[0.0, 1.0], _fractional_log2(pts[pts > 0])]))
        lengths = np.diff(cuts)
        keep = lengths > 0
        mids = (cuts[:-1] + cuts[1:])[keep] / 2.0
        kv = rounding_exponents(values[i], mids)[:, None]
        kl = rounding_exponents(rivals[None, :], mids[:, None])
        beaten = ((kv > kl) | ((kv == kl) & wins_tie[None, :])).sum(axis=1)
        out[i] = float((beaten >= n - m) @ lengths[keep])
    return out


def default_multi_eta(instance: AuctionInstance, policy: str = "known",
                      unknown_base: float = 8.0) -> np.ndarray:
    """4(d+1) for known d; ``unknown_base * (max_{j != i} d_j + 1)`` otherwise."""
    if policy == "known":
        return np.full(instance.n, 4.0 * (instance.known_d() + 1))
    if policy == "unknown":
        return personalized_etas(instance.d_reports(), base=unknown_base)
    raise ValueError(f"unknown eta policy {policy!r}")


def multi_allocation(values, lows, m: int, eta) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), values.shape)
    if np.any(eta < 1):
        raise ValueError("normalization factor eta must be at least 1")
    x = multi_expected_candidates(values, lows, m) / eta
    if x.sum() > m + 1e-12:
        raise FeasibilityError(f"allocation sums to {x.sum():.12g} > m = {m}")
    return x


def multi_payment(v: float, rival_lows: np.ndarray, m: int, eta: float) -> float:
    """Myerson payment of the exact multi-unit candidate curve, by quadrature."""
    pos = rival_lows[rival_lows > 0]
    breaks = np.concatenate([pos / 2.0, pos, 2.0 * pos])
    return myerson_payment_numeric(lambda t: candidate_probability(t, rival_lows, m) / eta,
                                   v, breaks)


# -- allocation matrices and their decomposition --------------------------------

def marginals_to_matrix(x: Sequence[float], m: int) -> np.ndarray:
    """Lay the masses x_i end to end on a tape of length m; column l takes [l, l+1).

    Row sums equal x_i and column sums are at most 1; each row touches at
    most two adjacent columns.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < -ZERO_TOL) or np.any(x > 1 + ZERO_TOL):
        raise ValueError("marginals must lie in [0, 1]")
    if x.sum() > m + 1e-9:
        raise ValueError(f"marginals sum to {x.sum()} > m = {m}")
    x = np.clip(x, 0.0, 1.0)
    M = np.zeros((x.size, m))
    start = 0.0
    for i, xi in enumerate(x):
        end = start + xi
        first = min(int(np.floor(start)), m - 1)
        for col in range(first, min(first + 2, m)):
            lo, hi = max(start, col), min(end, col + 1) if col < m - 1 else end
            if hi > lo:
                M[i, col] += hi - lo
        start = end
    return M


def in_matching_class(M: np.ndarray, tol: float = 1e-9) -> bool:
    M = np.asarray(M, dtype=float)
    return (M.ndim == 2 and bool(np.all(M >= -tol))
            and bool(np.all(M.sum(axis=1) <= 1 + tol))
            and bool(np.all(M.sum(axis=0) <= 1 + tol)))


def covering_matching(W: np.ndarray, tol: float = 1e-10) -> list[tuple[int, int]]:
    """A matching covering every vertex of maximum weighted degree.

    Rows and columns of ``W`` are the two sides of a bipartite graph and
    positive entries are edges. The number of covered maximum-degree
    vertices is the weight of a matching where each edge scores its number
    of maximum-degree endpoints, so a maximum-weight assignment covers all of
    them whenever such a matching exists.
    """
    W = np.asarray(W, dtype=float)
    edges = W > ZERO_TOL
    if not edges.any():
        raise ValueError("graph has no edges")
    for level in (tol, 0.0):
        rdeg, cdeg = W.sum(axis=1), W.sum(axis=0)
        delta = max(rdeg.max(), cdeg.max())
        rs, cs = rdeg >= delta - level, cdeg >= delta - level
        score = edges * (rs[:, None].astype(float) + cs[None, :].astype(float))
        rows, cols = linear_sum_assignment(score, maximize=True)
        match = [(int(r), int(c)) for r, c in zip(rows, cols) if score[r, c] > 0]
        covered_r = {r for r, _ in match}
        covered_c = {c for _, c in match}
        if all(r in covered_r for r in np.flatnonzero(rs)) and \
                all(c in covered_c for c in np.flatnonzero(cs)):
            return match
    raise ArithmeticError("no matching covers all maximum-degree vertices")


@dataclass
class MatchingDecomposition:
    shape: tuple[int, int]
    coefficients: list[float] = field(default_factory=list)
    matchings: list[list[tuple[int, int]]] = field(default_factory=list)

    def matrix(self, k: int) -> np.ndarray:
        M = np.zeros(self.shape)
        for r, c in self.matchings[k]:
            M[r, c] = 1.0
        return M

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for lam, match in zip(self.coefficients, self.matchings):
            for r, c in match:
                out[r, c] += lam
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "shape": list(self.shape),
            "terms": [{"coefficient": float(lam), "matching": [list(e) for e in match]}
                      for lam, match in zip(self.coefficients, self.matchings)],
        }


def birkhoff_decompose(M: np.ndarray, tol: float = 1e-10) -> MatchingDecomposition:
    """Write M (entries >= 0, row and column sums <= 1) as a convex combination of matchings.

    Each step peels ``z * matching`` where the matching covers all vertices
    of maximum degree and ``z`` is the smaller of the lightest matched entry
    and the gap down to the largest unmatched degree. The coefficients sum to
    the initial maximum degree; the empty matching takes the remaining mass.
    """
    M = np.array(M, dtype=float)
    if M.ndim != 2 or not in_matching_class(M):
        raise ValueError("matrix must be non-negative with row and column sums at most 1")
    M[M < ZERO_TOL] = 0.0
    dec = MatchingDecomposition(M.shape)
    total = 0.0
    max_steps = 4 * (M.size + sum(M.shape)) + 10
    for _ in range(max_steps):
        degrees = np.concatenate([M.sum(axis=1), M.sum(axis=0)])
        delta = degrees.max()
        if delta <= ZERO_TOL:
            break
        match = covering_matching(M, tol)
        # vertices left out of the matching keep their degree and must not overtake delta - z
        covered = np.zeros(degrees.size, dtype=bool)
        for r, c in match:
            covered[r] = covered[M.shape[0] + c] = True
        rest = degrees[~covered]
        gap = delta - (rest.max() if rest.size else 0.0)
        lightest = min(M[r, c] for r, c in match)
        z = min(gap, lightest)
        for r, c in match:
            M[r, c] -= z
        M[M < ZERO_TOL] = 0.0
        match = sorted(match)
        if dec.matchings and dec.matchings[-1] == match:
            dec.coefficients[-1] += float(z)
        else:
            dec.coefficients.append(float(z))
            dec.matchings.append(match)
        total += z
    else:
        raise ArithmeticError("decomposition did not terminate")
    if total > 1 + 1e-9:
        raise ArithmeticError(f"coefficients sum to {total} > 1")
    rest = 1.0 - total
    if rest > ZERO_TOL or not dec.coefficients:
        dec.coefficients.append(rest)
        dec.matchings.append([])
    return dec


@dataclass
class ExPostAssignment:
    index: int
    pairs: list[tuple[int, int]]  # (bidder, item)

    @property
    def winners(self) -> list[int]:
        return sorted(r for r, _ in self.pairs)


def sample_ex_post(dec: MatchingDecomposition, seed: int, stream: int = 0) -> ExPostAssignment:
    rng = generator(seed, _EX_POST_DOMAIN, stream)
    p = np.asarray(dec.coefficients, dtype=float)
    k = int(rng.choice(p.size, p=p / p.sum()))
    return ExPostAssignment(k, list(dec.matchings[k]))


def sample_ex_post_counts(dec: MatchingDecomposition, draws: int, seed: int) -> tuple[np.ndarray, int]:
    """Win counts per bidder over ``draws`` samples and the largest winner set seen."""
    rng = generator(seed, _EX_POST_DOMAIN, 1)
    p = np.asarray(dec.coefficients, dtype=float)
    picks = np.bincount(rng.choice(p.size, size=draws, p=p / p.sum()), minlength=p.size)
    wins = np.zeros(dec.shape[0], dtype=np.int64)
    largest = 0
    for k, cnt in enumerate(picks):
        if cnt:
            for r, _ in dec.matchings[k]:
                wins[r] += cnt
            largest = max(largest, len(dec.matchings[k]))
    return wins, largest


# -- end-to-end ------------------------------------------------------------------

def run_multi_unit(instance: AuctionInstance, policy: str = "known", eta=None,
                   seed: int | None = None, payments: bool = True):
    """Adjusted candidate filtering for m items: allocation, payments and rounding.

    Returns ``(outcome, decomposition)``.
    """
    n, m = instance.n, instance.m
    _check_m(m, n)
    default = default_multi_eta(instance, policy)
    if eta is None:
        eta_vec = default
    else:
        eta_vec = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
        if np.any(eta_vec < default):
            warnings.warn("eta below the default normalization: feasibility is not guaranteed",
                          FeasibilityWarning, stacklevel=2)
    before = instance.query_counts()
    values, lows = instance.reports()
    after = instance.query_counts()
    ec = multi_expected_candidates(values, lows, m)
    x = ec / eta_vec
    if x.sum() > m + 1e-12:
        raise FeasibilityError(f"allocation sums to {x.sum():.12g} > m = {m}")
    p = np.zeros(n)
    if payments:
        for i in range(n):
            p[i] = multi_payment(values[i], np.delete(lows[:, i], i), m, eta_vec[i])
    dec = birkhoff_decompose(marginals_to_matrix(x, m))
    winners = sample_ex_post(dec, seed).winners if seed is not None else None
    outcome = MechanismOutcome(
        x=x, p=np.maximum(p, 0.0), eta=eta_vec, values=values,
        expected_candidates=float(ec.sum()),
        query_counts={k: after[k] - before[k] for k in after},
        seed=seed, winners=winners, m=m)
    return outcome, dec
