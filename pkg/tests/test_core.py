import json

import numpy as np
import pytest

from rcf.core import (
    AuctionInstance,
    GridTooLargeError,
    MechanismOutcome,
    SignalSpace,
    lex_greater,
    low_estimate_by_enumeration,
)
from rcf.corpus import generate_instance, make_space
from rcf.valuations import AdditiveValuation, CoverageValuation, FunctionValuation


def test_signal_space_validation():
    with pytest.raises(ValueError):
        SignalSpace([])
    with pytest.raises(ValueError):
        SignalSpace([[]])
    with pytest.raises(ValueError):
        SignalSpace([[0.0, 0.0]])
    with pytest.raises(ValueError):
        SignalSpace([[1.0, 0.5]])
    with pytest.raises(ValueError):
        SignalSpace([[-1.0, 0.5]])
    sp = SignalSpace([[0.2, 0.7], [0.0, 0.5, 1.0]])
    assert sp.shape == (2, 3) and sp.size == 6
    assert sp.minimum(0) == 0.2
    assert len(list(sp.profiles())) == 6
    with pytest.raises(ValueError):
        sp.validate([0.3, 0.0])
    with pytest.raises(ValueError):
        sp.validate([0.2])


def test_low_estimate_three_ways():
    space = SignalSpace([[0.0, 1.0, 2.0]] * 3)
    f = FunctionValuation(space, lambda s: 1 + s[0] * s[1] + (s[2] - 1) ** 2)
    prof = [2.0, 1.0, 2.0]
    # by hand: minimizing over bidder 2's signal puts s_2 = 1
    assert f.low(2, prof) == pytest.approx(1 + 2.0)
    assert low_estimate_by_enumeration(f, 2, prof) == pytest.approx(3.0)
    assert f.low(0, prof) == pytest.approx(1 + 0 + 1)


def test_query_counters():
    space = SignalSpace.binary(3)
    add = AdditiveValuation(space, [1.0, 2.0, 3.0])
    add.value([1, 1, 1])
    add.low(0, [1, 1, 1])
    assert (add.value_queries, add.low_queries) == (1, 1)
    add.low_estimates([1, 1, 1], exclude=1)
    assert add.low_queries == 3
    low_estimate_by_enumeration(add, 2, [1, 0, 1])
    assert add.value_queries == 3  # one per grid point
    add.reset_counters()
    assert add.queries == 0


def test_enumeration_index_errors():
    add = AdditiveValuation(SignalSpace.binary(2), [1.0, 1.0])
    with pytest.raises(IndexError):
        low_estimate_by_enumeration(add, 5, [0, 0])
    with pytest.raises(IndexError):
        add.low(-1, [0, 0])


def test_lex_greater():
    prio = [0, 2, 1]  # bidder 1 has the highest rank
    assert lex_greater(3.0, 0, 2.0, 1, prio)
    assert not lex_greater(2.0, 0, 2.0, 1, prio)
    assert lex_greater(2.0, 1, 2.0, 0, prio)
    with pytest.raises(ValueError):
        lex_greater(1.0, 0, 1.0, 0, prio)


def test_lex_greater_is_a_strict_total_order():
    rng = np.random.default_rng(0)
    prio = rng.permutation(4)
    items = [(float(rng.integers(3)), i) for i in range(4)]
    for a in items:
        for b in items:
            if a[1] != b[1]:
                assert lex_greater(a[0], a[1], b[0], b[1], prio) != lex_greater(b[0], b[1], a[0], a[1], prio)


def test_instance_validation():
    space = SignalSpace.binary(2)
    o = [AdditiveValuation(space, [1, 1]) for _ in range(2)]
    with pytest.raises(ValueError):
        AuctionInstance(o, [1, 1], m=0)
    with pytest.raises(ValueError):
        AuctionInstance(o, [1, 1], m=2)
    with pytest.raises(ValueError):
        AuctionInstance(o[:1], [1, 1])
    with pytest.raises(ValueError):
        AuctionInstance(o, [0.5, 1])


def test_reports_layout():
    space = SignalSpace.binary(3)
    oracles = [AdditiveValuation(space, w) for w in ([1, 2, 3], [4, 5, 6], [7, 8, 9])]
    inst = AuctionInstance(oracles, [1, 1, 1])
    values, lows = inst.reports()
    np.testing.assert_allclose(values, [6, 15, 24])
    assert np.isnan(lows[0, 0]) and np.isnan(lows[2, 2])
    # lows[j, i]: bidder j's value with bidder i's signal at its minimum
    assert lows[1, 0] == 15 - 4
    assert lows[0, 2] == 6 - 3
    assert inst.query_counts() == {"value": 3, "low": 6}


def test_instance_json_round_trip():
    rng = np.random.default_rng(3)
    for fam in ("coverage", "cut", "bounded-dependency", "weighted-sum-concave", "max", "example32"):
        n = 4
        inst = generate_instance(fam, n, rng, levels=3) if fam != "example32" else generate_instance(fam, 4, rng)
        text = json.dumps(inst.to_dict())
        back = AuctionInstance.from_dict(json.loads(text))
        v1, l1 = inst.reports()
        v2, l2 = back.reports()
        np.testing.assert_array_equal(v1, v2)
        np.testing.assert_array_equal(l1, l2)


def test_instance_from_dict_errors():
    with pytest.raises(ValueError):
        AuctionInstance.from_dict({"format": "nope"})
    good = generate_instance("additive", 2, np.random.default_rng(0)).to_dict()
    good["n"] = 3
    with pytest.raises(ValueError):
        AuctionInstance.from_dict(good)


def test_function_valuation_not_serializable():
    space = SignalSpace.binary(2)
    inst = AuctionInstance([FunctionValuation(space, lambda s: 1.0, d=0)] * 2, [0, 0])
    with pytest.raises(TypeError):
        inst.to_dict()


def test_table_cap():
    space = make_space(3, levels=3)
    cov = CoverageValuation(space, np.ones((3, 2)), [1.0, 1.0])
    with pytest.raises(GridTooLargeError):
        cov.table(cap=10)


def test_outcome_checks():
    kw = dict(eta=np.ones(2), values=np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        MechanismOutcome(x=np.array([0.7, 0.7]), p=np.zeros(2), **kw)
    with pytest.raises(ValueError):
        MechanismOutcome(x=np.array([0.2, 0.2]), p=np.array([-1.0, 0.0]), **kw)
    out = MechanismOutcome(x=np.array([0.25, 0.5]), p=np.zeros(2), **kw)
    assert out.welfare == pytest.approx(1.25)
    assert out.welfare_ratio() == pytest.approx(2 / 1.25)
    d = out.to_dict()
    assert set(d) >= {"x", "p", "eta", "tau", "queryCounts", "seed"}
    json.dumps(d)
