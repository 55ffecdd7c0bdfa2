"""Command-line front end.

Subcommands: compute, simulate, compare, asymptotics, sweep.  Output is CSV
(12 significant digits) or JSON (raw doubles) on stdout.

Exit codes: 0 ok, 2 validation error, 3 numerical non-convergence,
4 comparison regression (some |z| above the threshold).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

from . import ancestry, models
from .ancestry import CoalescenceQuery, QueryError, ZeroDenominatorError, InconsistencyError, validate
from .mechanism import (
    DomainError,
    Geometric,
    Mechanism,
    MechanismError,
    Sibuya,
    TruncationError,
    parse_mechanism,
)
from .oracle import DEFAULT_CAP, DegenerateConditioningError, Mode, estimate
from .quadrature import QuadratureError, QuadratureSpec
from .tables import DistributionTable

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_REGRESSION = 0, 2, 3, 4
Z_THRESHOLD = 5.0

COMPUTE_COLUMNS = ("query", "t", "n0", "i", "j", "k", "analytic", "closed_form")
SIMULATE_COLUMNS = ("query", "t", "n0", "i", "j", "k", "empirical", "std_err", "replicates",
                    "conditioning", "capped_fraction", "flag")
COMPARE_COLUMNS = ("query", "t", "n0", "i", "j", "k", "analytic", "closed_form", "empirical",
                   "std_err", "z", "flag")
ASYMPTOTIC_COLUMNS = ("quantity", "t", "arg", "exact", "limit", "gap")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class QuerySpec:
    analytic: Callable
    mode: Mode | None = None
    uses_k: bool = True
    uses_j: bool = False
    complement: bool = False  # oracle estimates 1 - value


def _size_arg(cfg):
    if cfg.size is None:
        raise UsageError("joint-popsize needs --size")
    return cfg.size


QUERIES: dict[str, QuerySpec] = {
    "tau-tail": QuerySpec(lambda m, c, t, k: ancestry.tau_tail(m, t, c.n0, c.i, c.j, k),
                          Mode.TAU_TAIL, uses_j=True),
    "ancestor-count": QuerySpec(lambda m, c, t, k: ancestry.tau_tail(m, t, c.n0, c.i, c.j, k),
                                Mode.ANCESTOR_COUNT, uses_j=True),
    "transition": QuerySpec(lambda m, c, t, k: ancestry.transition_prob(m, t, c.n0, c.i, c.j),
                            Mode.TRANSITION_PROB, uses_k=False, uses_j=True),
    "tmrca-tail": QuerySpec(lambda m, c, t, k: ancestry.tmrca_tail(m, t, c.n0, c.i, k), Mode.TMRCA_TAIL),
    "prob-finite": QuerySpec(lambda m, c, t, k: ancestry.prob_finite(m, t, c.n0, c.i),
                             Mode.PROB_FINITE, uses_k=False),
    "prob-infinite": QuerySpec(lambda m, c, t, k: ancestry.prob_infinite(m, t, c.n0, c.i),
                               Mode.PROB_FINITE, uses_k=False, complement=True),
    "conditional-tail": QuerySpec(
        lambda m, c, t, k: ancestry.conditional_tail_given_finite(m, t, c.n0, c.i, k), Mode.CONDITIONAL_TAIL),
    "joint-popsize": QuerySpec(
        lambda m, c, t, k: ancestry.joint_tmrca_popsize(m, t, c.n0, c.i, k, _size_arg(c)), Mode.JOINT_POPSIZE),
    "full-sample": QuerySpec(lambda m, c, t, k: ancestry.tmrca_full_sample_given_size(m, t, c.i, k),
                             Mode.FULL_SAMPLE_GIVEN_SIZE),
    "whole-pop-tail": QuerySpec(lambda m, c, t, k: ancestry.whole_population_tail(m, t, k),
                                Mode.WHOLE_POPULATION_TAIL),
    "merger-ratio": QuerySpec(lambda m, c, t, k: ancestry.merger_ratio(m, t, c.n0), uses_k=False),
    "row-sum": QuerySpec(lambda m, c, t, k: ancestry.row_sum_check(m, t, c.n0, c.i)[0], uses_k=False),
    "coffin": QuerySpec(lambda m, c, t, k: ancestry.coffin_mass(m, t, c.n0, c.i), uses_k=False),
}

ASYMPTOTIC_QUERIES = ("e1", "e3", "e4", "whole-pop", "sibuya-gap", "merger")


# --------------------------------------------------------------------------
# argument helpers


def parse_range(text: str) -> list[int]:
    """``a..b`` (inclusive), ``a,b,c`` or a single integer."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise UsageError(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad integer range {text!r}") from exc


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgw-genealogy",
        description="Coalescence times and ancestral counts of Galton-Watson genealogies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, query_choices: Sequence[str]):
        p.add_argument("--mech", required=True, help='mechanism spec, e.g. "kind=geometric p=0.5"')
        p.add_argument("--query", required=True, choices=list(query_choices))
        p.add_argument("--t", required=True, help="generation, or range a..b")
        p.add_argument("--n0", type=int, default=1)
        p.add_argument("--i", type=int, default=2)
        p.add_argument("--j", type=int, default=1)
        p.add_argument("--k", default=None, help="k, range a..b, or list; default 0..t-1 where used")
        p.add_argument("--size", type=int, default=None, help="population size for joint-popsize")
        p.add_argument("--out", choices=("csv", "json"), default="csv")
        p.add_argument("--tol", type=float, default=None, help="relative quadrature tolerance")

    def oracle_flags(p: argparse.ArgumentParser):
        p.add_argument("--replicates", type=int, default=200_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--cap", type=int, default=DEFAULT_CAP)
        p.add_argument("--workers", type=int, default=1)

    names = sorted(QUERIES)
    p = sub.add_parser("compute", help="analytic values with closed forms where available")
    common(p, names)
    p = sub.add_parser("sweep", help="compute over a grid of t and k")
    common(p, names)
    sim_names = sorted(n for n, q in QUERIES.items() if q.mode is not None)
    p = sub.add_parser("simulate", help="Monte-Carlo estimates")
    common(p, sim_names)
    oracle_flags(p)
    p = sub.add_parser("compare", help="analytic against Monte-Carlo with z-scores")
    common(p, sim_names)
    oracle_flags(p)
    p.add_argument("--z-max", type=float, default=Z_THRESHOLD)
    p = sub.add_parser("asymptotics", help="exact finite-t values beside their limits")
    common(p, ASYMPTOTIC_QUERIES)
    p.add_argument("--x", default="0.25,0.5,0.75", help="scaled times for e4 and critical whole-pop")
    return parser


# --------------------------------------------------------------------------
# grids


def _grid(cfg, spec: QuerySpec | None, full_k: bool):
    ts = parse_range(cfg.t)
    for t in ts:
        if spec is not None and not spec.uses_k:
            ks = [None]
        elif cfg.k is None:
            ks = list(range(t)) if full_k else [0]
        else:
            ks = parse_range(cfg.k)
        for k in ks:
            validate(t, cfg.n0, cfg.i, cfg.j, 0 if k is None else k)
            yield t, k


def _closed(mech: Mechanism, name: str, cfg, t: int, k):
    try:
        return models.closed_form_value(mech, name, t, cfg.n0, cfg.i, cfg.j, 0 if k is None else k)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None


def _row_head(name: str, cfg, t: int, k, spec: QuerySpec):
    return (name, t, cfg.n0, cfg.i, cfg.j if spec.uses_j else None, k)


def _analytic(spec: QuerySpec, mech, cfg, t, k) -> float:
    v = spec.analytic(mech, cfg, t, k)
    return float(v.raw if hasattr(v, "raw") else v)


def cmd_compute(cfg, full_k: bool = False) -> DistributionTable:
    mech = parse_mechanism(cfg.mech)
    spec = QUERIES[cfg.query]
    table = DistributionTable(COMPUTE_COLUMNS)
    for t, k in _grid(cfg, spec, full_k):
        table.add(*_row_head(cfg.query, cfg, t, k, spec), _analytic(spec, mech, cfg, t, k),
                  _closed(mech, cfg.query, cfg, t, k))
    return table


def _query_for(cfg, t: int, k) -> CoalescenceQuery:
    return CoalescenceQuery(t, cfg.n0, cfg.i, cfg.j, t - 1 if k is None else k)


def _simulate_one(mech, spec: QuerySpec, cfg, t, k):
    q = _query_for(cfg, t, k)
    est = estimate(mech, q, spec.mode, cfg.replicates, cap=cfg.cap, seed=cfg.seed,
                   size=cfg.size, workers=cfg.workers)
    value = 1.0 - est.value if spec.complement else est.value
    flag = "capped>1%" if est.unreliable else ""
    return value, est, flag


def cmd_simulate(cfg) -> DistributionTable:
    mech = parse_mechanism(cfg.mech)
    spec = QUERIES[cfg.query]
    if cfg.query == "joint-popsize":
        _size_arg(cfg)
    table = DistributionTable(SIMULATE_COLUMNS)
    for t, k in _grid(cfg, spec, False):
        head = _row_head(cfg.query, cfg, t, k, spec)
        try:
            value, est, flag = _simulate_one(mech, spec, cfg, t, k)
        except DegenerateConditioningError as exc:
            table.add(*head, None, None, cfg.replicates, exc.occurrences, None, "degenerate-conditioning")
            continue
        table.add(*head, value, est.std_err, est.replicates, est.conditioning, est.capped_fraction, flag)
    return table


def cmd_compare(cfg) -> tuple[DistributionTable, bool]:
    mech = parse_mechanism(cfg.mech)
    spec = QUERIES[cfg.query]
    if cfg.query == "joint-popsize":
        _size_arg(cfg)
    table = DistributionTable(COMPARE_COLUMNS)
    regression = False
    for t, k in _grid(cfg, spec, False):
        head = _row_head(cfg.query, cfg, t, k, spec)
        analytic = _analytic(spec, mech, cfg, t, k)
        closed = _closed(mech, cfg.query, cfg, t, k)
        try:
            value, est, flag = _simulate_one(mech, spec, cfg, t, k)
        except DegenerateConditioningError:
            table.add(*head, analytic, closed, None, None, None, "degenerate-conditioning")
            continue
        if est.std_err > 0:
            z = (value - analytic) / est.std_err
        else:
            z = 0.0 if abs(value - analytic) < 1e-12 else math.inf
        if abs(z) > cfg.z_max:
            regression = True
            flag = (flag + ";" if flag else "") + "regression"
        table.add(*head, analytic, closed, value, est.std_err, z, flag)
    return table, regression


# --------------------------------------------------------------------------
# asymptotics


def _geometric(mech) -> Geometric:
    if not isinstance(mech, Geometric):
        raise UsageError("this asymptotic query needs kind=geometric")
    return mech


def _mu(mech: Geometric) -> float:
    return mech.p / (1.0 - mech.p)


def cmd_asymptotics(cfg) -> DistributionTable:
    mech = parse_mechanism(cfg.mech)
    table = DistributionTable(ASYMPTOTIC_COLUMNS)
    ts = parse_range(cfg.t)
    for t in ts:
        validate(t, cfg.n0, 1)
    q = cfg.query

    if q == "e1":
        g = _geometric(mech)
        mu = _mu(g)
        if mu >= 1:
            raise UsageError("e1 is the subcritical limit (p < 1/2)")
        ls = parse_range(cfg.k) if cfg.k else [1]
        for t in ts:
            for l in ls:
                if not 1 <= l <= t:
                    raise QueryError("l must lie in 1..t")
                # P(t - tau <= l | tau < inf) = P(tau >= t - l | tau < inf)
                exact = models.closfm_pair_tail(g.p, t, t - l) / models.closfm_pair_tail(g.p, t, 0)
                lim = models.e1_limit(mu, l)
                table.add("e1", t, l, exact, lim, abs(exact - lim))
    elif q == "e3":
        g = _geometric(mech)
        mu = _mu(g)
        if mu <= 1:
            raise UsageError("e3 is the supercritical limit (p > 1/2)")
        ks = parse_range(cfg.k) if cfg.k else [1]
        for t in ts:
            for k in ks:
                validate(t, 1, 2, 1, k)
                exact = ancestry.conditional_tail_given_finite(g, t, 1, 2, k).raw
                lim = models.e3_limit(mu, k)
                table.add("e3", t, k, exact, lim, abs(exact - lim))
    elif q == "e4":
        g = _geometric(mech)
        if g.p != 0.5:
            raise UsageError("e4 is the critical limit (p = 1/2)")
        for t in ts:
            for x in parse_floats(cfg.x):
                k = math.floor(t * x)
                validate(t, 1, 2, 1, k)
                exact = models.closfm_pair_tail(0.5, t, k) / models.closfm_pair_tail(0.5, t, 0)
                lim = models.e4_limit(x)
                table.add("e4", t, x, exact, lim, abs(exact - lim))
    elif q == "whole-pop":
        g = _geometric(mech)
        mu = _mu(g)
        if g.p == 0.5:
            for t in ts:
                for x in parse_floats(cfg.x):
                    k = math.floor(t * x)
                    validate(t, 1, 1, 1, k)
                    exact = ancestry.whole_population_tail(g, t, k).raw
                    lim = models.whole_population_limit(1.0, x)
                    table.add("whole-pop", t, x, exact, lim, abs(exact - lim))
        elif mu > 1:
            ks = parse_range(cfg.k) if cfg.k else [1]
            for t in ts:
                for k in ks:
                    validate(t, 1, 1, 1, k)
                    exact = ancestry.whole_population_tail(g, t, k).raw
                    lim = mu ** (-k)
                    table.add("whole-pop", t, k, exact, lim, abs(exact - lim))
        else:
            ss = parse_range(cfg.k) if cfg.k else [2]
            for t in ts:
                for s in ss:
                    if not 1 <= s <= t:
                        raise QueryError("s must lie in 1..t")
                    tail = ancestry.whole_population_tail
                    exact = tail(g, t, t - s).raw - (tail(g, t, t - s + 1).raw if s > 1 else 0.0)
                    lim = models.whole_population_limit(mu, s)
                    table.add("whole-pop", t, s, exact, lim, abs(exact - lim))
    elif q == "sibuya-gap":
        if not isinstance(mech, Sibuya):
            raise UsageError("sibuya-gap needs kind=sibuya")
        for t in ts:
            validate(t, cfg.n0, 2)
            tails = [ancestry.conditional_tail_given_finite(mech, t, cfg.n0, 2, k).raw for k in range(t)] + [0.0]
            tv = 0.0
            for l in range(1, t + 1):
                k = t - l
                exact = tails[k] - tails[k + 1]
                lim = float(models.geometric_pmf(mech.alpha, l))
                tv += abs(exact - lim)
                table.add("sibuya-gap", t, l, exact, lim, abs(exact - lim))
            tv = 0.5 * (tv + mech.alpha**t)
            table.add("sibuya-gap-tv", t, None, tv, mech.alpha**t, tv)
    elif q == "merger":
        for t in ts:
            validate(t, cfg.n0, 3)
            exact = ancestry.merger_ratio(mech, t, cfg.n0)
            lim = None
            if isinstance(mech, Geometric) and _mu(mech) >= 1 and t > 1:
                lim = models.merger_ratio_envelope(mech.p, t)
            elif isinstance(mech, Sibuya):
                lim = 1.0 - mech.alpha / 2.0
            table.add("merger", t, None, exact, lim, None if lim is None else abs(exact - lim))
    return table


# --------------------------------------------------------------------------
# entry point


def _set_tolerance(tol: float | None) -> None:
    if tol is None:
        return
    if not 0 < tol < 1:
        raise UsageError("--tol must lie in (0, 1)")
    q = ancestry.QUAD
    ancestry.QUAD = QuadratureSpec(nodes=q.nodes, abs_tol=q.abs_tol, rel_tol=tol)


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        cfg = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    saved = ancestry.QUAD
    code = EXIT_OK
    try:
        _set_tolerance(cfg.tol)
        if cfg.command == "compute":
            table = cmd_compute(cfg)
        elif cfg.command == "sweep":
            table = cmd_compute(cfg, full_k=True)
        elif cfg.command == "simulate":
            table = cmd_simulate(cfg)
        elif cfg.command == "compare":
            table, regression = cmd_compare(cfg)
            code = EXIT_REGRESSION if regression else EXIT_OK
        else:
            table = cmd_asymptotics(cfg)
    except (UsageError, QueryError, MechanismError, DomainError, ZeroDenominatorError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_VALIDATION
    except (QuadratureError, TruncationError, InconsistencyError) as exc:
        print(f"error: numerical failure: {exc}", file=stderr)
        return EXIT_NONCONVERGENCE
    finally:
        ancestry.QUAD = saved
    stdout.write(table.render(cfg.out))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
