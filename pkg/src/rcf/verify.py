"""Executable checks of the mechanism's guarantees.

Every check returns a :class:`VerificationReport`; failing reports carry a
witness (instance plus seed, and the offending point) from which the failure
can be reproduced.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .core import AuctionInstance
from .corpus import generate_instance
from .multi_unit import (
    birkhoff_decompose,
    candidate_probability,
    default_multi_eta,
    marginals_to_matrix,
    multi_expected_candidates,
    multi_payment,
    sample_ex_post_counts,
)
from .numeric import LN2, log_dagger_ratio
from .single_item import (
    candidate_counts,
    candidate_probability_from_ladder,
    default_eta,
    expected_candidates,
    payment_from_ladder,
    personalized_etas,
    prcf_allocation,
    run_single_item,
    thresholds,
)
from .valuations import sos_self_bounding_audit

SIGMAS = 4.0


@dataclass
class VerificationReport:
    name: str
    instance: dict[str, Any] | None
    passed: bool
    statistic: float
    bound: float
    tolerance: float
    seed: int | None = None
    runtime: float = 0.0
    witness: dict[str, Any] | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)

    def summary_row(self) -> dict[str, Any]:
        return {"name": self.name, "passed": int(self.passed), "statistic": self.statistic,
                "bound": self.bound, "tolerance": self.tolerance, "seed": self.seed,
                "runtime": round(self.runtime, 6)}


SUMMARY_COLUMNS = ("name", "passed", "statistic", "bound", "tolerance", "seed", "runtime")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_reports(reports: Iterable[VerificationReport], jsonl_path=None, csv_path=None) -> None:
    reports = list(reports)
    if jsonl_path is not None:
        with open(jsonl_path, "w") as fh:
            for rep in reports:
                fh.write(rep.to_json() + "\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            w.writeheader()
            for rep in reports:
                w.writerow(rep.summary_row())


def describe(instance: AuctionInstance) -> dict[str, Any]:
    try:
        return instance.to_dict()
    except (TypeError, NotImplementedError):
        return {"n": instance.n, "m": instance.m, "serializable": False}


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# -- truthfulness -----------------------------------------------------------------

ScalarRule = Callable[[np.ndarray], np.ndarray]


def allocation_rules(instance: AuctionInstance, i: int, eta: float,
                     reports=None) -> tuple[ScalarRule, ScalarRule, np.ndarray]:
    """x_i and p_i as functions of bidder i's reported scalar value.

    Everything else (the other bidders' values and all low estimates) stays
    fixed. Returns ``(allocation, payment, breakpoints)``.
    """
    values, lows = reports if reports is not None else instance.reports()
    if instance.m == 1:
        tau = thresholds(lows, i).tau

        def alloc(v):
            return candidate_probability_from_ladder(v, tau) / eta

        def pay(v):
            return payment_from_ladder(v, tau) / eta

        return alloc, pay, tau
    rivals = np.delete(lows[:, i], i)
    m = instance.m

    def alloc_m(v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return np.array([candidate_probability(t, rivals, m) for t in v]) / eta

    def pay_m(v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return np.array([multi_payment(t, rivals, m, eta) for t in v])

    return alloc_m, pay_m, rivals


def check_truthful_rules(alloc: ScalarRule, pay: ScalarRule, grid: np.ndarray,
                         tol: float = 1e-9) -> tuple[bool, float, dict[str, Any] | None]:
    """Monotonicity, truthful dominance and ex-post IR of a scalar rule over ``grid``.

    Returns ``(passed, worst gain from misreporting, witness)``.
    """
    x = np.asarray(alloc(grid), dtype=float)
    p = np.asarray(pay(grid), dtype=float)
    drops = np.diff(x)
    if np.any(drops < -tol):
        k = int(np.argmin(drops))
        return False, float(-drops[k]), {"kind": "monotonicity", "v": float(grid[k]),
                                         "v_next": float(grid[k + 1]),
                                         "x": float(x[k]), "x_next": float(x[k + 1])}
    ir = (p < -tol) | (p > x * grid + tol)
    if np.any(ir):
        k = int(np.argmax(ir))
        return False, float("inf"), {"kind": "individual-rationality", "v": float(grid[k]),
                                     "x": float(x[k]), "p": float(p[k])}
    # utility[t, w]: true value grid[t], report grid[w]
    utility = np.outer(grid, x) - p[None, :]
    gain = utility - np.diag(utility)[:, None]
    t, w = np.unravel_index(int(np.argmax(gain)), gain.shape)
    worst = float(gain[t, w])
    if worst > tol:
        return False, worst, {"kind": "misreport", "v_true": float(grid[t]),
                              "v_report": float(grid[w]), "gain": worst}
    return True, worst, None


def verify_truthfulness(instance: AuctionInstance, i: int, sweep_points: int = 1000,
                        policy: str = "known", eta=None, allocation: ScalarRule | None = None,
                        payment: ScalarRule | None = None, seed: int | None = None) -> VerificationReport:
    """Sweep bidder i's scalar report over [0, 4 * max threshold].

    ``allocation``/``payment`` replace the mechanism's rules (used to check
    that the harness catches broken rules).
    """
    with _Timer() as timer:
        if eta is None:
            etas = default_eta(instance, policy) if instance.m == 1 else default_multi_eta(instance, policy)
            eta_i = float(etas[i])
        else:
            eta_i = float(np.broadcast_to(np.asarray(eta, dtype=float), (instance.n,))[i])
        alloc, pay, breaks = allocation_rules(instance, i, eta_i)
        alloc = allocation or alloc
        pay = payment or pay
        top = float(np.max(breaks)) if np.size(breaks) else 0.0
        grid = np.linspace(0.0, 4.0 * top if top > 0 else 1.0, sweep_points)
        passed, worst, witness = check_truthful_rules(alloc, pay, grid)
        details: dict[str, Any] = {"bidder": i, "eta": eta_i, "points": sweep_points}
        if policy == "unknown":
            d = instance.d_reports().copy()
            seen = set()
            for alt in range(0, int(d.max()) + 4):
                d[i] = alt
                seen.add(float(personalized_etas(d)[i]))
            details["eta_independent_of_own_report"] = len(seen) == 1
            if len(seen) != 1:
                passed = False
                witness = {"kind": "eta-depends-on-own-report", "etas": sorted(seen)}
    if witness is not None:
        witness["instance"] = describe(instance)
        witness["seed"] = seed
    return VerificationReport("truthfulness", describe(instance), passed, worst, 0.0, 1e-9,
                              seed, timer.elapsed, witness, details)


# -- feasibility ------------------------------------------------------------------

def verify_feasibility_suite(family: str, trials: int, seed: int, m: int = 1,
                             n_range: tuple[int, int] = (2, 8), eta=None,
                             levels: int = 2) -> VerificationReport:
    """Sum of allocations within the supply on ``trials`` generated instances.

    With ``eta`` left at the default (2(d+1) for one item, 4(d+1) for m
    items) every instance must pass; an explicit small ``eta`` acts as a
    negative control.
    """
    rng = np.random.default_rng(seed)
    worst_sum = 0.0
    worst_ratio = 0.0  # sum E[c] / its bound
    witness = None
    with _Timer() as timer:
        for t in range(trials):
            n = int(rng.integers(max(n_range[0], m + 1), n_range[1] + 1))
            inst = generate_instance(family, n, rng, m=m, levels=levels)
            values, lows = inst.reports()
            d = inst.known_d()
            if m == 1:
                ec = expected_candidates(values, lows)
                eta_vec = np.full(n, 2.0 * (d + 1)) if eta is None else np.broadcast_to(eta, (n,))
                ec_bound = 2.0 * (d + 1)
            else:
                ec = multi_expected_candidates(values, lows, m)
                eta_vec = np.full(n, 4.0 * (d + 1)) if eta is None else np.broadcast_to(eta, (n,))
                ec_bound = 4.0 * (d + 1) * m
            total = float((ec / eta_vec).sum())
            worst_ratio = max(worst_ratio, float(ec.sum()) / ec_bound)
            if total > worst_sum:
                worst_sum = total
            if total > m + 1e-12 and witness is None:
                witness = {"trial": t, "instance": describe(inst), "sum_x": total,
                           "sum_candidates": float(ec.sum()), "seed": seed}
    passed = witness is None and worst_ratio <= 1 + 1e-12
    return VerificationReport(f"feasibility[{family},m={m}]", {"family": family, "trials": trials},
                              passed, worst_sum, float(m), 1e-12, seed, timer.elapsed, witness,
                              {"max_candidates_over_bound": worst_ratio})


# -- welfare -------------------------------------------------------------------------

def verify_welfare(instance: AuctionInstance, policy: str = "known", eta=None) -> VerificationReport:
    """OPT / expected welfare against eta * 2 ln 2 (top-m sum as OPT for m items)."""
    with _Timer() as timer:
        values, lows = instance.reports()
        n, m = instance.n, instance.m
        if eta is None:
            eta_vec = default_eta(instance, policy) if m == 1 else default_multi_eta(instance, policy)
        else:
            eta_vec = np.broadcast_to(np.asarray(eta, dtype=float), (n,))
        if m == 1:
            x = prcf_allocation(values, lows, eta_vec)
        else:
            x = multi_expected_candidates(values, lows, m) / eta_vec
        opt = float(np.sort(values)[::-1][:m].sum())
        achieved = float(x @ values)
        ratio = opt / achieved if achieved > 0 else (1.0 if opt == 0 else float("inf"))
        bound = float(np.max(eta_vec)) * 2.0 * LN2
    passed = ratio <= bound + 1e-9
    witness = None if passed else {"instance": describe(instance), "x": x.tolist()}
    return VerificationReport("welfare", describe(instance), passed, ratio, bound, 1e-9,
                              None, timer.elapsed, witness)


# -- Monte Carlo against the closed form -------------------------------------------------

def verify_oracle_equivalence(instance: AuctionInstance, samples: int, seed: int,
                              workers: int = 1, identity_order: bool = False) -> VerificationReport:
    """Sampled candidate frequencies against the exact expectations.

    The standard error of each bidder uses the exact probability, so a
    bidder whose exact probability is 0 or 1 must match exactly. At m = 1
    the breakpoint integration must also agree with the threshold ladder.
    """
    with _Timer() as timer:
        values, lows = instance.reports()
        m = instance.m
        exact = expected_candidates(values, lows) if m == 1 else multi_expected_candidates(values, lows, m)
        details: dict[str, Any] = {}
        if m == 1 and instance.n >= 2:
            alt = multi_expected_candidates(values, lows, 1)
            details["m1_identity_gap"] = float(np.max(np.abs(alt - exact)))
        cc = candidate_counts(values, lows, samples, seed, m=m, workers=workers,
                              identity_order=identity_order)
        est = cc.mean
        sd = np.sqrt(exact * (1 - exact) / samples)
        diff = np.abs(est - exact)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sd > 0, diff / sd, np.where(diff > 0, np.inf, 0.0))
        stat = float(z.max())
    passed = stat <= SIGMAS and details.get("m1_identity_gap", 0.0) <= 1e-9
    details.update(estimate=est.tolist(), exact=exact.tolist())
    witness = None if passed else {"instance": describe(instance), "seed": seed,
                                   "bidder": int(np.argmax(z))}
    return VerificationReport("oracle-equivalence", describe(instance), passed, stat, SIGMAS, 0.0,
                              seed, timer.elapsed, witness, details)


# -- candidate-bound diagnostics ---------------------------------------------------------

@dataclass
class CandidateBound:
    order: np.ndarray  # bidders by decreasing value (ties by index)
    k: int
    expected: np.ndarray  # E[c_i], indexed by original bidder
    bound: np.ndarray
    A: np.ndarray
    B: np.ndarray


def candidate_bound(values: np.ndarray, lows: np.ndarray) -> CandidateBound:
    """Per-bidder upper bound on E[c_i] and its split into A and B terms.

    Bidders are renamed 1..n by decreasing value; k counts those above half
    the top value. Bidder i's own low estimate is taken to be v_i, which
    makes the terms with j = i vanish.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    order = np.lexsort((np.arange(n), -values))
    v = values[order]
    L = np.array(lows, dtype=float)[np.ix_(order, order)]  # L[j, i]: renamed
    np.fill_diagonal(L, v)
    k = int(np.sum(v > v[0] / 2.0))
    ks = np.arange(1, k + 1, dtype=float)
    wk = 1.0 / (ks * (ks + 1.0))
    bound = np.empty(n)
    A = np.empty(n)
    B = np.empty(n)
    for i in range(n):
        own = 1.0 / ((i + 1) * (i + 2))
        lead = log_dagger_ratio(2.0 * v[i], L[0, i]) / (k + 1)
        # the j = i term is log_dagger(1) = 0 under the own-estimate convention
        rest = float(log_dagger_ratio(v[i], L[:k, i]) @ wk)
        bound[i] = own + lead + rest
        A[i] = log_dagger_ratio(v[0], L[0, i]) / (k + 1) + float(log_dagger_ratio(v[:k], L[:k, i]) @ wk)
        B[i] = log_dagger_ratio(2.0 * v[i], v[0]) / (k + 1) + float(log_dagger_ratio(v[i], v[:k]) @ wk)
    exact = expected_candidates(values, lows)
    inv = np.empty(n, dtype=int)
    inv[order] = np.arange(n)
    return CandidateBound(order, k, exact, bound[inv], A[inv], B[inv])


def verify_candidate_bound_diagnostics(instance: AuctionInstance) -> VerificationReport:
    with _Timer() as timer:
        values, lows = instance.reports()
        d = instance.known_d()
        cb = candidate_bound(values, lows)
        slack = cb.bound - cb.expected
        per_bidder = bool(np.all(slack >= -1e-9))
        sum_a, sum_b = float(cb.A.sum()), float(cb.B.sum())
        total = float(cb.expected.sum())
        ok = per_bidder and sum_a <= 2 * d + 1e-9 and sum_b <= 1 + 1e-9 and total <= 2 * (d + 1) + 1e-9
    details = {"k": cb.k, "sum_A": sum_a, "sum_B": sum_b, "min_slack": float(slack.min()),
               "expected": cb.expected.tolist(), "bound": cb.bound.tolist()}
    witness = None if ok else {"instance": describe(instance), "bidder": int(np.argmin(slack))}
    return VerificationReport("candidate-bound", describe(instance), ok, total, 2.0 * (d + 1), 1e-9,
                              None, timer.elapsed, witness, details)


# -- query complexity -------------------------------------------------------------------

def verify_query_complexity(instance: AuctionInstance) -> VerificationReport:
    """The closed-form mechanism asks n value queries and n(n-1) low-estimate queries."""
    n = instance.n
    with _Timer() as timer:
        instance.reset_counters()
        first = run_single_item(instance).query_counts
        second = run_single_item(instance).query_counts
        total = instance.query_counts()
    expected = {"value": n, "low": n * (n - 1)}
    passed = first == expected and second == first and total == {k: 2 * v for k, v in expected.items()}
    witness = None if passed else {"observed": first, "repeat": second, "expected": expected}
    return VerificationReport("query-complexity", describe(instance), passed,
                              float(first["value"] + first["low"]), float(n * n), 0.0,
                              None, timer.elapsed, witness, {"counts": first})


# -- rounding ---------------------------------------------------------------------------

def verify_rounding(x: np.ndarray, m: int, draws: int, seed: int,
                    matrix: np.ndarray | None = None) -> VerificationReport:
    """Decomposition exactness, matching validity and sampled marginals."""
    with _Timer() as timer:
        M = marginals_to_matrix(x, m) if matrix is None else np.asarray(matrix, dtype=float)
        dec = birkhoff_decompose(M)
        err = float(np.max(np.abs(dec.reconstruct() - M))) if M.size else 0.0
        coef_ok = abs(sum(dec.coefficients) - 1.0) <= 1e-9 and min(dec.coefficients) > 0
        valid = all(len({r for r, _ in mt}) == len(mt) == len({c for _, c in mt}) for mt in dec.matchings)
        wins, largest = sample_ex_post_counts(dec, draws, seed)
        rows = M.sum(axis=1)
        sd = np.sqrt(np.clip(rows * (1 - rows), 0.0, None) / draws)
        diff = np.abs(wins / draws - rows)
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), np.where(diff > 1e-12, np.inf, 0.0))
        z_max = float(z.max()) if z.size else 0.0
    passed = err <= 1e-9 and coef_ok and valid and largest <= M.shape[1] and z_max <= SIGMAS
    witness = None if passed else {"matrix": M.tolist(), "seed": seed}
    return VerificationReport("rounding", {"shape": list(M.shape)}, passed, err, 1e-9, 1e-9, seed,
                              timer.elapsed, witness,
                              {"terms": len(dec.coefficients), "largest_winner_set": largest,
                               "marginal_z": z_max})


# -- valuation classes -------------------------------------------------------------------

def verify_sos_hierarchy(family: str, trials: int, seed: int, n_range=(2, 5),
                         levels: int = 3) -> VerificationReport:
    """Self-bounding parameter at most 1 (monotone SOS) or 2 (general SOS)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    bound = 0.0
    witness = None
    with _Timer() as timer:
        for t in range(trials):
            n = int(rng.integers(n_range[0], n_range[1] + 1))
            inst = generate_instance(family, n, rng, levels=levels)
            audit = sos_self_bounding_audit(inst.oracles[0])
            if not audit.sos:
                witness = witness or {"trial": t, "reason": "generated valuation is not SOS",
                                      "valuation": inst.oracles[0].descriptor()}
                continue
            bound = max(bound, audit.bound)
            worst = max(worst, audit.parameter)
            if not audit.passed and witness is None:
                witness = {"trial": t, "valuation": inst.oracles[0].descriptor(),
                           "profile": audit.witness, "parameter": audit.parameter}
    return VerificationReport(f"sos-hierarchy[{family}]", {"family": family, "trials": trials},
                              witness is None, worst, bound, 1e-9, seed, timer.elapsed, witness)
