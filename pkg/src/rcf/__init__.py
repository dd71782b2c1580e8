"""Randomized candidate filtering auctions for interdependent values."""

__version__ = "0.1.0"

from .core import (
    AuctionInstance,
    GridTooLargeError,
    MechanismOutcome,
    SignalSpace,
    ValuationOracle,
    lex_greater,
    low_estimate_by_enumeration,
)
from .numeric import (
    DiscretizedValue,
    RoundingSeed,
    draw_seed,
    expected_rounded_value,
    log_dagger,
    log_dagger_ratio,
    round_down,
)
from .single_item import (
    FeasibilityError,
    FeasibilityWarning,
    candidates,
    expected_candidates,
    myerson_payment_numeric,
    personalized_etas,
    prcf_allocation,
    prcf_payment,
    rcf_monte_carlo,
    run_single_item,
    thresholds,
)
from .multi_unit import (
    MatchingDecomposition,
    birkhoff_decompose,
    covering_matching,
    marginals_to_matrix,
    multi_allocation,
    multi_candidates,
    multi_expected_candidates,
    run_multi_unit,
    sample_ex_post,
)
