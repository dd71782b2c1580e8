import csv
import json

import numpy as np
import pytest

import rcf.verify as vf
from rcf.corpus import example32_instance, generate_instance
from rcf.multi_unit import MatchingDecomposition
from rcf.numeric import LN2, log_dagger
from conftest import table_instance


def test_truthfulness_worked_instance(worked_instance):
    rep = vf.verify_truthfulness(worked_instance, 0, sweep_points=1000)
    assert rep.passed and rep.witness is None
    assert rep.statistic <= 1e-9


def test_truthfulness_catches_non_monotone_allocation(worked_instance):
    def bumpy(v):
        v = np.asarray(v, dtype=float)
        return np.where((v > 1.0) & (v < 2.0), 0.2, 0.1)

    rep = vf.verify_truthfulness(worked_instance, 0, allocation=bumpy, payment=lambda v: 0 * v, seed=3)
    assert not rep.passed
    assert rep.witness["kind"] == "monotonicity"
    assert rep.witness["seed"] == 3 and "instance" in rep.witness


def test_truthfulness_catches_wrong_payment(worked_instance):
    # charging the full value leaves no incentive to bid truthfully at high values
    alloc, _, _ = vf.allocation_rules(worked_instance, 0, 4.0)
    rep = vf.verify_truthfulness(worked_instance, 0, allocation=alloc,
                                 payment=lambda v: alloc(v) * np.asarray(v) * 0.5)
    assert not rep.passed and rep.witness["kind"] == "misreport"


def test_truthfulness_unknown_d():
    rng = np.random.default_rng(0)
    inst = generate_instance("mixed", 5, rng)
    rep = vf.verify_truthfulness(inst, 2, sweep_points=300, policy="unknown")
    assert rep.passed and rep.details["eta_independent_of_own_report"]


def test_truthfulness_multi_unit():
    rng = np.random.default_rng(1)
    inst = generate_instance("coverage", 5, rng, m=2)
    assert vf.verify_truthfulness(inst, 1, sweep_points=60).passed


def test_feasibility_suites():
    rep = vf.verify_feasibility_suite("coverage", 200, seed=1)
    assert rep.passed and rep.statistic <= 1
    assert rep.details["max_candidates_over_bound"] <= 1  # sum E[c] <= 4 with d = 1
    rep = vf.verify_feasibility_suite("example31", 3, seed=1, n_range=(8, 8))
    assert rep.passed
    rep = vf.verify_feasibility_suite("monotone-sos", 40, seed=2, m=2, n_range=(3, 7))
    assert rep.passed


def test_feasibility_negative_control():
    rep = vf.verify_feasibility_suite("example31", 1, seed=0, n_range=(8, 8), eta=1.0)
    assert not rep.passed
    assert rep.witness["sum_x"] > 1 and rep.witness["instance"]["n"] == 8


def test_welfare_reports():
    rng = np.random.default_rng(4)
    for _ in range(10):
        rep = vf.verify_welfare(generate_instance("monotone-sos", 5, rng))
        assert rep.passed and rep.bound == pytest.approx(8 * LN2)
    for _ in range(10):
        rep = vf.verify_welfare(generate_instance("cut", 5, rng))
        assert rep.passed and rep.bound == pytest.approx(12 * LN2)


def test_welfare_dominant_bidder():
    # bidder 1 is worth 10, everyone else at most 1 with lows below that
    tables = [np.full((2, 2, 2), 10.0), np.full((2, 2, 2), 1.0), np.full((2, 2, 2), 0.5)]
    inst = table_instance(tables, [1, 1, 1], d=1)
    rep = vf.verify_welfare(inst)
    assert rep.passed
    assert rep.statistic <= 4.0


def test_oracle_equivalence(worked_instance):
    rep = vf.verify_oracle_equivalence(worked_instance, 20_000, seed=5)
    assert rep.passed and rep.details["estimate"][0] == 1.0
    rng = np.random.default_rng(5)
    inst = generate_instance("mixed", 6, rng)
    rep = vf.verify_oracle_equivalence(inst, 100_000, seed=6)
    assert rep.passed and rep.details["m1_identity_gap"] <= 1e-9


def test_candidate_bound_example32():
    rep = vf.verify_candidate_bound_diagnostics(example32_instance(16))
    assert rep.passed and rep.statistic <= 4


def test_candidate_bound_uniform_values():
    n = 4
    values = np.full(n, 3.0)
    lows = np.full((n, n), 3.0)
    cb = vf.candidate_bound(values, lows)
    np.testing.assert_allclose(cb.expected, 1 / n)
    assert np.all(cb.bound - cb.expected > 0)


def test_candidate_bound_two_bidders():
    values = np.array([4.0, 3.0])
    lows = np.array([[np.nan, 2.5], [1.5, np.nan]])
    cb = vf.candidate_bound(values, lows)
    assert cb.k == 2
    # renamed order is the original one; bidder 1 (own low taken as v_1)
    b1 = 1 / 2 + log_dagger(2 * 4 / 4) / 3 + log_dagger(4 / 1.5) / 6
    b2 = 1 / 6 + log_dagger(2 * 3 / 2.5) / 3 + log_dagger(3 / 2.5) / 2
    np.testing.assert_allclose(cb.bound, [b1, b2])
    assert np.all(cb.expected <= cb.bound + 1e-12)


def test_query_complexity():
    rng = np.random.default_rng(2)
    for n, total in ((5, 25), (2, 4)):
        rep = vf.verify_query_complexity(generate_instance("additive", n, rng))
        assert rep.passed and rep.statistic == total


def test_rounding_check_and_mutation(monkeypatch):
    rep = vf.verify_rounding(np.array([0.8, 0.8, 0.4]), 2, 20_000, seed=1)
    assert rep.passed and rep.details["largest_winner_set"] <= 2

    real = vf.birkhoff_decompose

    def lossy(M):
        dec = real(M)
        return MatchingDecomposition(dec.shape, dec.coefficients[1:], dec.matchings[1:])

    monkeypatch.setattr(vf, "birkhoff_decompose", lossy)
    rep = vf.verify_rounding(np.array([0.8, 0.8, 0.4]), 2, 20_000, seed=1)
    assert not rep.passed and rep.witness is not None


def test_sos_hierarchy_report():
    assert vf.verify_sos_hierarchy("coverage", 10, seed=0).passed
    rep = vf.verify_sos_hierarchy("cut", 10, seed=0)
    assert rep.passed and rep.bound == 2


def test_report_files(tmp_path, worked_instance):
    reps = [vf.verify_welfare(worked_instance), vf.verify_query_complexity(worked_instance)]
    vf.write_reports(reps, tmp_path / "r.jsonl", tmp_path / "s.csv")
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["name"] == "welfare"
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert [r["name"] for r in rows] == ["welfare", "query-complexity"]
