"""Command-line front end: ``rcf run | verify | bench | reproduce``.

Exit codes: 0 ok, 1 usage error, 2 failed check or infeasible allocation,
3 input/output error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
import warnings
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .core import AuctionInstance
from .corpus import example31_instance, example32_instance, generate_instance, instance_from_spec
from .multi_unit import fixed_order_expected_candidates, run_multi_unit
from .numeric import LN2, log_dagger_ratio, rounding_exponents
from .single_item import (
    FeasibilityError,
    FeasibilityWarning,
    expected_candidates,
    rcf_monte_carlo,
    run_single_item,
)
from . import verify as vf

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3
CSV_COLUMNS = ("run_id", "n", "m", "d", "eta_policy", "i", "x_i", "p_i", "v_i", "welfare_ratio", "seed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rcf", description="Randomized candidate filtering auctions.")
    p.add_argument("--version", action="version", version=f"rcf {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the mechanism on one instance")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--instance", help="instance JSON file")
    src.add_argument("--generate", metavar="FAMILY:PARAMS", help="generator spec, e.g. coverage:n=6")
    run.add_argument("--m", type=int, default=None, help="number of identical items")
    run.add_argument("--eta", default="known", help="known | unknown | a number")
    run.add_argument("--samples", type=int, default=0, help="Monte Carlo cross-check draws")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--format", default="json,csv")

    ver = sub.add_parser("verify", help="run verification suites")
    ver.add_argument("--suite", default="all",
                     help="all or comma list of: " + ",".join(SUITES))
    ver.add_argument("--trials", type=int, default=100)
    ver.add_argument("--samples", type=int, default=100_000)
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("--workers", type=int, default=1)
    ver.add_argument("--out", default=None)
    ver.add_argument("--timing", action="store_true", help="keep runtimes in the report files")

    bench = sub.add_parser("bench", help="time the closed-form mechanism over n")
    bench.add_argument("--generate", default="additive", metavar="FAMILY")
    bench.add_argument("--sizes", type=_int_list, default=[10, 100, 1000])
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None)

    rep = sub.add_parser("reproduce", help="emit data for the worked examples")
    rep.add_argument("which", choices=("example31", "example32", "constants"))
    rep.add_argument("--n", type=int, default=8)
    rep.add_argument("--eps", type=float, default=0.1)
    rep.add_argument("--r", type=float, default=0.0, help="offset for the deterministic rounding")
    rep.add_argument("--sizes", type=_int_list, default=[16, 64, 256])
    rep.add_argument("--trials", type=int, default=200)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", default=None)
    return p


# -- helpers ---------------------------------------------------------------------

def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=vf._jsonable) + "\n"


def _run_id(config: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def _write(out: str | None, name: str, text: str) -> None:
    if out is None:
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)


def _csv_text(rows: list[dict[str, Any]], columns, config: dict[str, Any]) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _formats(text: str) -> set[str]:
    fmts = {f.strip() for f in text.split(",") if f.strip()}
    bad = fmts - {"json", "csv"}
    if bad or not fmts:
        raise UsageError(f"unknown output format(s): {', '.join(sorted(bad)) or '(none)'}")
    return fmts


def _load_instance(args) -> AuctionInstance:
    if args.instance:
        try:
            data = json.loads(Path(args.instance).read_text())
        except OSError as exc:
            raise OSError(f"cannot read instance file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise OSError(f"malformed instance file: {exc}") from exc
        try:
            inst = AuctionInstance.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise OSError(f"malformed instance file: {exc}") from exc
        if args.m is not None:
            inst = AuctionInstance(inst.oracles, inst.profile, m=args.m, d=inst.d)
        return inst
    family_has_seed = "seed=" in args.generate
    if args.seed is None and not family_has_seed and not args.generate.startswith(("example31", "example32")):
        raise UsageError("--generate draws a random instance and needs --seed")
    return instance_from_spec(args.generate, seed=args.seed, m=args.m)


def _eta_arg(text: str):
    if text in ("known", "unknown"):
        return text, None
    try:
        value = float(text)
    except ValueError:
        raise UsageError(f"--eta must be known, unknown or a number, got {text!r}")
    if not value >= 1:
        raise UsageError("--eta must be at least 1")
    return "override", value


# -- subcommands -------------------------------------------------------------------

def cmd_run(args) -> int:
    fmts = _formats(args.format)
    if args.samples < 0:
        raise UsageError("--samples must be non-negative")
    if args.samples and args.seed is None:
        raise UsageError("Monte Carlo cross-check (--samples) needs --seed")
    policy, eta_value = _eta_arg(args.eta)
    try:
        inst = _load_instance(args)
    except ValueError as exc:
        raise UsageError(str(exc))
    config = {"command": "run", "instance": args.instance, "generate": args.generate, "m": inst.m,
              "eta": args.eta, "samples": args.samples, "seed": args.seed, "version": __version__}
    run_id = _run_id(config)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FeasibilityWarning)
        decomposition = None
        try:
            if inst.m == 1:
                outcome = run_single_item(inst, policy if policy != "override" else "known",
                                          eta=eta_value, seed=args.seed)
            else:
                outcome, decomposition = run_multi_unit(inst, policy if policy != "override" else "known",
                                                        eta=eta_value, seed=args.seed)
        finally:
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
    result: dict[str, Any] = {"config": config, "runId": run_id, "instance": vf.describe(inst),
                              "outcome": outcome.to_dict()}
    if decomposition is not None:
        result["decomposition"] = decomposition.to_dict()
    if args.samples:
        mc = rcf_monte_carlo(inst, outcome.eta, args.samples, args.seed, workers=args.workers)
        result["monteCarlo"] = {"x": mc.x.tolist(), "stderr": mc.stderr.tolist()}
    ratio = outcome.welfare_ratio()
    d = inst.known_d()
    rows = [{"run_id": run_id, "n": inst.n, "m": inst.m, "d": d, "eta_policy": policy, "i": i,
             "x_i": repr(float(outcome.x[i])), "p_i": repr(float(outcome.p[i])),
             "v_i": repr(float(outcome.values[i])), "welfare_ratio": repr(ratio), "seed": args.seed}
            for i in range(inst.n)]
    if "json" in fmts:
        _write(args.out, "outcome.json", _dump(result))
    if "csv" in fmts:
        _write(args.out, "outcome.csv", _csv_text(rows, CSV_COLUMNS, config))
    np.set_printoptions(precision=6, suppress=True)
    print(f"run {run_id}: n={inst.n} m={inst.m} d={d} eta policy={policy}")
    print(f"x   = {np.array2string(outcome.x)}")
    print(f"p   = {np.array2string(outcome.p)}")
    print(f"eta = {np.array2string(np.asarray(outcome.eta))}")
    print(f"welfare ratio = {ratio:.6f} (bound {float(np.max(outcome.eta)) * 2 * LN2:.6f})")
    if outcome.winners is not None:
        print(f"winners = {outcome.winners}")
    return EXIT_OK


SUITES = ("truthfulness", "feasibility", "welfare", "equivalence", "candidate-bound",
          "queries", "rounding", "sos")


def run_suites(names: list[str], trials: int, samples: int, seed: int,
               workers: int = 1) -> list[vf.VerificationReport]:
    rng = np.random.default_rng(seed)
    reports: list[vf.VerificationReport] = []

    def instances(family: str, count: int, n_hi: int = 8, m: int = 1):
        for _ in range(count):
            n = int(rng.integers(max(2, m + 1), n_hi + 1))
            yield generate_instance(family, n, rng, m=m)

    for name in names:
        if name == "truthfulness":
            for inst in instances("mixed", trials):
                reports.append(vf.verify_truthfulness(inst, int(rng.integers(inst.n)), seed=seed))
        elif name == "feasibility":
            reports.append(vf.verify_feasibility_suite("coverage", trials, seed))
            reports.append(vf.verify_feasibility_suite("cut", trials, seed + 1))
            reports.append(vf.verify_feasibility_suite("bounded-dependency", trials, seed + 2))
            reports.append(vf.verify_feasibility_suite("monotone-sos", max(1, trials // 2), seed + 3, m=2,
                                                       n_range=(3, 8)))
        elif name == "welfare":
            for inst in instances("monotone-sos", trials):
                reports.append(vf.verify_welfare(inst))
            for inst in instances("cut", trials):
                reports.append(vf.verify_welfare(inst))
        elif name == "equivalence":
            for inst in instances("mixed", max(1, trials // 10)):
                reports.append(vf.verify_oracle_equivalence(inst, samples, seed, workers=workers))
        elif name == "candidate-bound":
            for inst in instances("mixed", trials):
                reports.append(vf.verify_candidate_bound_diagnostics(inst))
            reports.append(vf.verify_candidate_bound_diagnostics(example32_instance(16)))
        elif name == "queries":
            for inst in instances("additive", max(1, trials // 10), n_hi=20):
                reports.append(vf.verify_query_complexity(inst))
        elif name == "rounding":
            for k in range(trials):
                n = int(rng.integers(2, 9))
                m = int(rng.integers(1, n))
                x = rng.random(n)
                x *= min(1.0, m / x.sum()) * rng.uniform(0.5, 1.0)
                reports.append(vf.verify_rounding(x, m, samples, seed + k))
        elif name == "sos":
            reports.append(vf.verify_sos_hierarchy("coverage", trials, seed))
            reports.append(vf.verify_sos_hierarchy("cut", trials, seed + 1))
        else:
            raise UsageError(f"unknown suite {name!r}")
    return reports


def cmd_verify(args) -> int:
    if args.seed is None:
        raise UsageError("verification suites are randomized and need --seed")
    names = list(SUITES) if args.suite == "all" else [s.strip() for s in args.suite.split(",")]
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}")
    reports = run_suites(names, args.trials, args.samples, args.seed, args.workers)
    config = {"command": "verify", "suite": names, "trials": args.trials, "samples": args.samples,
              "seed": args.seed, "version": __version__}
    if not args.timing:
        for rep in reports:
            rep.runtime = 0.0
    if args.out is not None:
        lines = [json.dumps({"config": config}, sort_keys=True)] + [r.to_json() for r in reports]
        _write(args.out, "reports.jsonl", "\n".join(lines) + "\n")
        _write(args.out, "summary.csv",
               _csv_text([r.summary_row() for r in reports], vf.SUMMARY_COLUMNS, config))
    failed = [r for r in reports if not r.passed]
    by_name: dict[str, list[bool]] = {}
    for r in reports:
        by_name.setdefault(r.name, []).append(r.passed)
    for name, flags in by_name.items():
        print(f"{'PASS' if all(flags) else 'FAIL'} {name}: {sum(flags)}/{len(flags)}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_bench(args) -> int:
    family = args.generate.partition(":")[0]
    rows = []
    for n in args.sizes:
        if n < 2:
            raise UsageError("bench sizes must be at least 2")
        inst = generate_instance(family, n, np.random.default_rng(args.seed))
        inst.reset_counters()
        start = time.perf_counter()
        out = run_single_item(inst)
        elapsed = time.perf_counter() - start
        q = out.query_counts
        rows.append({"n": n, "value_queries": q["value"], "low_queries": q["low"],
                     "total_queries": q["value"] + q["low"], "expected_queries": n * (n - 1) + n,
                     "seconds": f"{elapsed:.6f}"})
        print(f"n={n:>6}  queries={q['value'] + q['low']:>10}  seconds={elapsed:.4f}")
    ok = all(r["total_queries"] == r["expected_queries"] for r in rows)
    if len(rows) >= 2:
        ns = np.log([r["n"] for r in rows])
        qs = np.log([r["total_queries"] for r in rows])
        slope = float(np.polyfit(ns, qs, 1)[0])
        print(f"query-count exponent {slope:.3f} (quadratic law: 2)")
    config = {"command": "bench", "family": family, "sizes": args.sizes, "seed": args.seed,
              "version": __version__}
    _write(args.out, "bench.csv", _csv_text(rows, rows[0].keys() if rows else [], config))
    return EXIT_OK if ok else EXIT_CHECK


def reproduce_example31(n: int, eps: float, r: float) -> list[dict[str, Any]]:
    """Bidders able to lower the rounded value: fixed rounding vs random rounding."""
    inst = example31_instance(n, eps)
    values, lows = inst.reports()
    v = values[0]
    # every bidder (bidder 0 included) can lower bidder 0's value by the same amount
    own = inst.oracles[0].low_estimates(inst.profile)
    drops_fixed = int(np.sum(rounding_exponents(own, r) < rounding_exponents(v, r)))
    drops_random = float(np.sum(log_dagger_ratio(v, own)))
    d = inst.known_d()
    return [
        {"quantity": "deterministic_droppers", "value": drops_fixed, "bound": n},
        {"quantity": "randomized_expected_droppers", "value": drops_random, "bound": 2 * d},
        {"quantity": "expected_candidates", "value": float(expected_candidates(values, lows).sum()),
         "bound": 2 * (d + 1)},
    ]


def reproduce_example32(sizes: list[int]) -> list[dict[str, Any]]:
    rows = []
    for n in sizes:
        inst = example32_instance(n)
        values, lows = inst.reports()
        fixed = fixed_order_expected_candidates(values, lows, np.arange(n)).sum()
        rand = expected_candidates(values, lows).sum()
        rows.append({"n": n, "sqrt_n": math.isqrt(n), "identity_order": float(fixed),
                     "random_order": float(rand)})
    return rows


def reproduce_constants(trials: int, seed: int) -> list[dict[str, Any]]:
    rng = np.random.default_rng(seed)
    rows = []
    for family, eta in (("monotone-sos", 4.0), ("cut", 6.0)):
        worst = 0.0
        for _ in range(trials):
            inst = generate_instance(family, int(rng.integers(2, 9)), rng)
            worst = max(worst, vf.verify_welfare(inst, eta=eta).statistic)
        rows.append({"family": family, "eta": eta, "worst_ratio": worst, "bound": eta * 2 * LN2})
    return rows


def cmd_reproduce(args) -> int:
    if args.which == "example31":
        if args.n < 2 or args.eps < 0 or not 0 <= args.r < 1:
            raise UsageError("example31 needs n >= 2, eps >= 0 and r in [0, 1)")
        rows = reproduce_example31(args.n, args.eps, args.r)
        params = {"n": args.n, "eps": args.eps, "r": args.r}
    elif args.which == "example32":
        bad = [n for n in args.sizes if n < 4 or math.isqrt(n) ** 2 != n]
        if bad:
            raise UsageError(f"example32 sizes must be perfect squares >= 4, got {bad}")
        rows = reproduce_example32(args.sizes)
        params = {"sizes": args.sizes}
    else:
        rows = reproduce_constants(args.trials, args.seed)
        params = {"trials": args.trials, "seed": args.seed}
    config = {"command": "reproduce", "which": args.which, **params, "version": __version__}
    _write(args.out, f"{args.which}.csv", _csv_text(rows, rows[0].keys(), config))
    _write(args.out, f"{args.which}.json", _dump({"config": config, "rows": rows}))
    for row in rows:
        print("  ".join(f"{k}={v}" for k, v in row.items()))
    ok = all(row.get("worst_ratio", 0.0) <= row.get("bound", math.inf) + 1e-9 for row in rows)
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "bench": cmd_bench, "reproduce": cmd_reproduce}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FeasibilityError, ArithmeticError) as exc:
        print(f"rcf: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except OSError as exc:
        print(f"rcf: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
