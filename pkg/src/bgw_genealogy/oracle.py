"""Forward simulation of BGW forests and brute-force ancestry estimates.

Replicates are simulated in batches.  A batch keeps one flat array per
generation holding, for every individual, the index of its parent in the
previous generation and the replicate it belongs to.  Children are emitted
grouped by parent, so each replicate occupies a contiguous block of every
generation.  Each batch draws from its own stream derived from
``(seed, batch index)``, which makes estimates independent of how batches
are spread over workers.
"""

from __future__ import annotations

import enum
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ancestry import CoalescenceQuery, QueryError, validate
from .mechanism import (
    BAry,
    Generic,
    Geometric,
    LinearFractional,
    Mechanism,
    MechanismLike,
    Sibuya,
    as_mechanism,
)

DEFAULT_CAP = 10**6
BATCH_SIZE = 2000
MIN_CONDITIONING = 50
CAPPED_WARN_FRACTION = 0.01
INF = -1  # tau encoding for "never"


class OracleError(RuntimeError):
    pass


class DegenerateConditioningError(OracleError):
    def __init__(self, occurrences: int):
        super().__init__(f"conditioning event occurred only {occurrences} times (< {MIN_CONDITIONING})")
        self.occurrences = occurrences


class InsufficientPopulationError(OracleError):
    pass


class Mode(str, enum.Enum):
    TAU_TAIL = "tau_tail"
    ANCESTOR_COUNT = "ancestor_count"
    TMRCA_TAIL = "tmrca_tail"
    PROB_FINITE = "prob_finite"
    CONDITIONAL_TAIL = "conditional_tail"
    JOINT_POPSIZE = "joint_popsize"
    FULL_SAMPLE_GIVEN_SIZE = "full_sample_given_size"
    WHOLE_POPULATION_TAIL = "whole_population_tail"
    TRANSITION_PROB = "transition_prob"


# --------------------------------------------------------------------------
# offspring sampling


def sample_offspring(mech: MechanismLike, rng: np.random.Generator, size: int | None = None,
                     clip: int | None = None):
    """Draw offspring counts.  ``clip`` bounds heavy-tailed draws from above.

    Sibuya draws are geometric with a Beta(alpha, 1 - alpha) success
    probability on {1, 2, ...}, thinned to zero with probability 1 - lambda.
    """
    mech = as_mechanism(mech)
    n = 1 if size is None else int(size)
    if isinstance(mech, BAry):
        out = np.full(n, mech.b, dtype=np.int64)
    elif isinstance(mech, Geometric):
        out = rng.geometric(1.0 - mech.p, n).astype(np.int64) - 1
    elif isinstance(mech, LinearFractional):
        out = rng.geometric(1.0 - mech.p, n).astype(np.int64)
        out[rng.random(n) >= mech.p0] = 0
    elif isinstance(mech, Sibuya):
        x = rng.beta(mech.alpha, 1.0 - mech.alpha, n)
        np.clip(x, 1e-300, 1.0 - 2.0**-53, out=x)
        # inverse cdf of the geometric law on {1, 2, ...}; float avoids int64 overflow
        u = 1.0 - rng.random(n)
        m = 1.0 + np.floor(np.log(u) / np.log1p(-x))
        limit = float(clip) if clip is not None else 2.0**62
        out = np.minimum(m, limit).astype(np.int64)
        if mech.lam < 1.0:
            out[rng.random(n) >= mech.lam] = 0
    elif isinstance(mech, Generic):
        cdf = np.cumsum(mech.coeffs)
        cdf[-1] = 1.0
        out = np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64)
    else:
        raise TypeError(f"no sampler for {type(mech).__name__}")
    if clip is not None:
        np.minimum(out, clip, out=out)
    return int(out[0]) if size is None else out


# --------------------------------------------------------------------------
# forests


@dataclass
class _Batch:
    parents: list[np.ndarray]  # parents[s][x] indexes generation s-1; parents[0] is empty
    reps: list[np.ndarray]  # replicate id of every individual
    sizes: np.ndarray  # (B, t+1)
    capped: np.ndarray  # (B,)

    @property
    def t(self) -> int:
        return len(self.parents) - 1

    def starts(self, s: int) -> np.ndarray:
        counts = self.sizes[:, s]
        return np.concatenate(([0], np.cumsum(counts)[:-1]))


def _simulate_batch(mech: Mechanism, t: int, n0: int, cap: int, rng: np.random.Generator,
                    replicates: int) -> _Batch:
    B = replicates
    rep = np.repeat(np.arange(B), n0)
    parents = [np.empty(0, dtype=np.int64)]
    reps = [rep]
    sizes = np.zeros((B, t + 1), dtype=np.int64)
    sizes[:, 0] = n0
    capped = np.zeros(B, dtype=bool)
    for s in range(1, t + 1):
        m = sample_offspring(mech, rng, rep.size, clip=cap + 1)
        per = np.bincount(rep, weights=m, minlength=B)
        capped |= per > cap
        m[capped[rep]] = 0
        par = np.repeat(np.arange(rep.size), m)
        rep = rep[par]
        parents.append(par)
        reps.append(rep)
        sizes[:, s] = np.where(capped, 0, per.astype(np.int64))
    return _Batch(parents, reps, sizes, capped)


@dataclass
class GenealogyForest:
    """One forest: per-generation parent indices into the previous generation."""

    n0: int
    generations: list[np.ndarray]
    sizes: list[int]
    capped: bool = False

    @property
    def t(self) -> int:
        return len(self.generations) - 1

    def check(self) -> None:
        assert self.sizes[0] == self.n0
        for s in range(1, len(self.generations)):
            g = self.generations[s]
            assert g.size == self.sizes[s]
            assert g.size == 0 or g.max() < self.sizes[s - 1]
            if self.sizes[s - 1] == 0:
                assert self.sizes[s] == 0


def _forest_from_batch(batch: _Batch, r: int) -> GenealogyForest:
    gens = [np.full(int(batch.sizes[r, 0]), -1, dtype=np.int64)]
    sizes = [int(batch.sizes[r, 0])]
    for s in range(1, batch.t + 1):
        lo_prev = int(batch.starts(s - 1)[r])
        lo, n = int(batch.starts(s)[r]), int(batch.sizes[r, s])
        if batch.capped[r]:
            n = 0
        gens.append(batch.parents[s][lo: lo + n] - lo_prev)
        sizes.append(n)
    return GenealogyForest(int(batch.sizes[r, 0]), gens, sizes, bool(batch.capped[r]))


def simulate_forest(mech: MechanismLike, t: int, n0: int, cap: int = DEFAULT_CAP,
                    rng: np.random.Generator | None = None) -> GenealogyForest:
    """Simulate generations 0..t.  A generation above ``cap`` stops the forest."""
    if cap < n0:
        raise ValueError("cap must be at least n0")
    rng = rng if rng is not None else np.random.default_rng()
    return _forest_from_batch(_simulate_batch(as_mechanism(mech), t, n0, cap, rng, 1), 0)


# --------------------------------------------------------------------------
# samples and traces


def fisher_yates_sample(n: int, i: int, rng: np.random.Generator) -> np.ndarray:
    """``i`` distinct indices from range(n) by a partial Fisher-Yates shuffle."""
    if i > n:
        raise InsufficientPopulationError(f"cannot sample {i} from {n}")
    return _fisher_yates(np.array([n]), i, rng)[0]


def _fisher_yates(n: np.ndarray, i: int, rng: np.random.Generator) -> np.ndarray:
    # virtual permutation: only swapped positions are stored
    R = n.size
    keys = np.empty((R, i), dtype=np.int64)
    vals = np.empty((R, i), dtype=np.int64)
    out = np.empty((R, i), dtype=np.int64)
    for m in range(i):
        r = m + np.floor(rng.random(R) * (n - m)).astype(np.int64)
        at_r = r.copy()
        at_m = np.full(R, m, dtype=np.int64)
        for l in range(m):
            at_r = np.where(keys[:, l] == r, vals[:, l], at_r)
            at_m = np.where(keys[:, l] == m, vals[:, l], at_m)
        out[:, m] = at_r
        keys[:, m] = r
        vals[:, m] = at_m
    return out


@dataclass
class AncestryTrace:
    """Ancestor counts of a sample; ``counts[s]`` refers to generation s."""

    sample: np.ndarray
    counts: np.ndarray
    founder_set: frozenset[int] = field(default_factory=frozenset)

    def backward(self) -> list[int]:
        """Counts listed from generation t back to 0."""
        return [int(c) for c in self.counts[::-1]]

    def tau(self, j: int) -> float:
        hits = np.flatnonzero(self.counts[:-1] == j)
        return float(hits[-1]) if hits.size else math.inf


def trace_ancestry(forest: GenealogyForest, sample=None, i: int | None = None,
                   rng: np.random.Generator | None = None) -> AncestryTrace:
    """Trace a sample from generation t back to the founders.

    Either pass ``sample`` (distinct indices at generation t) or ``i`` and a
    generator to draw one without replacement.
    """
    t = forest.t
    if sample is None:
        if i is None:
            raise ValueError("need sample or i")
        rng = rng if rng is not None else np.random.default_rng()
        sample = fisher_yates_sample(forest.sizes[t], i, rng)
    sample = np.asarray(sample, dtype=np.int64)
    if forest.sizes[t] < sample.size:
        raise InsufficientPopulationError(f"generation {t} has {forest.sizes[t]} < {sample.size} individuals")
    if np.unique(sample).size != sample.size or (sample.size and sample.max() >= forest.sizes[t]):
        raise ValueError("sample must hold distinct valid indices")
    counts = np.empty(t + 1, dtype=np.int64)
    cur = np.unique(sample)
    counts[t] = cur.size
    for s in range(t, 0, -1):
        cur = np.unique(forest.generations[s][cur])
        counts[s - 1] = cur.size
    assert np.all(np.diff(counts) >= 0)
    return AncestryTrace(sample, counts, frozenset(int(x) for x in cur))


def _sample_counts(batch: _Batch, rows: np.ndarray, i: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestor counts (len(rows), t+1) of an i-sample in each selected replicate."""
    t = batch.t
    local = _fisher_yates(batch.sizes[rows, t], i, rng)
    ids = local + batch.starts(t)[rows][:, None]
    return _trace_ids(batch, ids)


def _full_sample_counts(batch: _Batch, rows: np.ndarray, i: int) -> np.ndarray:
    t = batch.t
    ids = batch.starts(t)[rows][:, None] + np.arange(i)[None, :]
    return _trace_ids(batch, ids)


def _trace_ids(batch: _Batch, ids: np.ndarray) -> np.ndarray:
    t = batch.t
    R = ids.shape[0]
    counts = np.empty((R, t + 1), dtype=np.int64)
    counts[:, t] = ids.shape[1]
    for s in range(t, 0, -1):
        ids = np.sort(batch.parents[s][ids], axis=1)
        counts[:, s - 1] = 1 + np.count_nonzero(np.diff(ids, axis=1), axis=1)
    assert np.all(np.diff(counts, axis=1) >= 0)
    return counts


def _whole_population_counts(batch: _Batch) -> np.ndarray:
    """Number of ancestors of the whole generation t, per generation."""
    t = batch.t
    B = batch.sizes.shape[0]
    counts = np.zeros((B, t + 1), dtype=np.int64)
    has = np.ones(batch.reps[t].size, dtype=bool)
    counts[:, t] = np.bincount(batch.reps[t], minlength=B)
    for s in range(t, 0, -1):
        prev = np.zeros(batch.reps[s - 1].size, dtype=bool)
        prev[batch.parents[s][has]] = True
        has = prev
        counts[:, s - 1] = np.bincount(batch.reps[s - 1][has], minlength=B)
    return counts


def tau_from_counts(counts: np.ndarray, j: int) -> np.ndarray:
    """Largest s < t with count j, per row; ``INF`` (-1) when there is none."""
    t = counts.shape[1] - 1
    mask = counts[:, :t] == j
    last = t - 1 - np.argmax(mask[:, ::-1], axis=1)
    return np.where(mask.any(axis=1), last, INF)


# --------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class EmpiricalEstimate:
    value: float
    std_err: float
    replicates: int
    seed: int
    hits: int = 0
    conditioning: int = 0
    capped: int = 0

    @property
    def capped_fraction(self) -> float:
        return self.capped / self.replicates if self.replicates else 0.0

    @property
    def unreliable(self) -> bool:
        return self.capped_fraction > CAPPED_WARN_FRACTION

    def z_score(self, analytic: float) -> float:
        if self.std_err == 0.0:
            return 0.0 if abs(analytic - self.value) < 1e-12 else math.copysign(math.inf, self.value - analytic)
        return (self.value - analytic) / self.std_err


def _batch_counts(mech: Mechanism, q: CoalescenceQuery, mode: Mode, size: int | None,
                  cap: int, seed: int, index: int, reps: int) -> tuple[int, int, int]:
    """(hits, conditioning occurrences, capped) for one batch."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    batch = _simulate_batch(mech, q.t, q.n0, cap, rng, reps)
    ok = ~batch.capped
    n_t = batch.sizes[:, q.t]
    capped = int(batch.capped.sum())

    if mode is Mode.WHOLE_POPULATION_TAIL:
        cond = ok & (n_t > 0)
        tau = tau_from_counts(_whole_population_counts(batch), 1)
        hit = cond & (tau >= q.k)
        return int(hit.sum()), int(cond.sum()), capped

    if mode is Mode.FULL_SAMPLE_GIVEN_SIZE:
        cond = ok & (n_t == q.i)
        rows = np.flatnonzero(cond)
        tau = tau_from_counts(_full_sample_counts(batch, rows, q.i), 1) if rows.size else np.empty(0)
        return int(np.count_nonzero(tau >= q.k)), rows.size, capped

    rows = np.flatnonzero(ok & (n_t >= q.i))
    counts = _sample_counts(batch, rows, q.i, rng) if rows.size else np.zeros((0, q.t + 1), np.int64)
    j = q.j if mode in (Mode.TAU_TAIL, Mode.TRANSITION_PROB) else 1
    tau = tau_from_counts(counts, j)
    finite = tau != INF
    if mode is Mode.ANCESTOR_COUNT:
        hit = counts[:, q.k] == q.j
    elif mode is Mode.TAU_TAIL or mode is Mode.TMRCA_TAIL:
        hit = finite & (tau >= q.k)
    elif mode is Mode.TRANSITION_PROB:
        hit = counts[:, q.t - 1] == q.j
    elif mode is Mode.PROB_FINITE:
        hit = finite
    elif mode is Mode.CONDITIONAL_TAIL:
        return int(np.count_nonzero(finite & (tau >= q.k))), int(finite.sum()), capped
    elif mode is Mode.JOINT_POPSIZE:
        hit = finite & (tau >= q.k) & (n_t[rows] == size)
    else:  # pragma: no cover
        raise ValueError(mode)
    return int(np.count_nonzero(hit)), int(ok.sum()), capped


def _run(args):
    return _batch_counts(*args)


def estimate(mech: MechanismLike, query: CoalescenceQuery, mode: Mode | str, replicates: int,
             cap: int = DEFAULT_CAP, seed: int = 0, size: int | None = None,
             workers: int = 1, batch_size: int = BATCH_SIZE) -> EmpiricalEstimate:
    """Monte-Carlo estimate of an ancestry probability.

    ``size`` is the population size for ``joint_popsize``.  Unconditional
    modes average over non-capped replicates; conditional modes are ratio
    estimators and need at least ``MIN_CONDITIONING`` conditioning events.
    """
    mech = as_mechanism(mech)
    mode = Mode(mode)
    q = query
    validate(q.t, q.n0, q.i, q.j, q.k)
    if replicates < 1000:
        raise QueryError("replicates must be at least 1000")
    if mode is Mode.JOINT_POPSIZE and (size is None or size < q.i):
        raise QueryError("joint_popsize needs size >= i")
    if mode is Mode.FULL_SAMPLE_GIVEN_SIZE and q.n0 != 1:
        raise QueryError("full_sample_given_size needs n0 = 1")
    if mode is Mode.TRANSITION_PROB and q.k != q.t - 1:
        q = CoalescenceQuery(q.t, q.n0, q.i, q.j, q.t - 1)
    jobs = []
    done = 0
    for index in itertools.count():
        if done >= replicates:
            break
        n = min(batch_size, replicates - done)
        jobs.append((mech, q, mode, size, cap, seed, index, n))
        done += n
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run, jobs))
    else:
        parts = [_run(j) for j in jobs]
    hits = sum(p[0] for p in parts)
    cond = sum(p[1] for p in parts)
    capped = sum(p[2] for p in parts)
    conditional = mode in (Mode.WHOLE_POPULATION_TAIL, Mode.FULL_SAMPLE_GIVEN_SIZE, Mode.CONDITIONAL_TAIL)
    if conditional and cond < MIN_CONDITIONING:
        raise DegenerateConditioningError(cond)
    if cond == 0:
        raise DegenerateConditioningError(0)
    v = hits / cond
    return EmpiricalEstimate(v, math.sqrt(v * (1.0 - v) / cond), replicates, seed, hits, cond, capped)


def exhaustive_estimate(mech: MechanismLike, query: CoalescenceQuery, mode: Mode | str) -> EmpiricalEstimate:
    """Exact frequency over every i-subset of a deterministic (b-ary) forest."""
    mech = as_mechanism(mech)
    if not isinstance(mech, BAry):
        raise TypeError("exhaustive enumeration needs a deterministic mechanism")
    mode = Mode(mode)
    q = query
    validate(q.t, q.n0, q.i, q.j, q.k)
    forest = simulate_forest(mech, q.t, q.n0, cap=max(DEFAULT_CAP, q.n0), rng=np.random.default_rng(0))
    n = forest.sizes[q.t]
    hits = total = 0
    j = q.j if mode in (Mode.TAU_TAIL, Mode.TRANSITION_PROB) else 1
    for sample in itertools.combinations(range(n), q.i):
        tr = trace_ancestry(forest, sample)
        tau = tr.tau(j)
        total += 1
        if mode is Mode.TRANSITION_PROB:
            hits += tr.counts[q.t - 1] == q.j
        elif mode is Mode.ANCESTOR_COUNT:
            hits += tr.counts[q.k] == q.j
        elif mode is Mode.PROB_FINITE:
            hits += math.isfinite(tau)
        elif mode in (Mode.TAU_TAIL, Mode.TMRCA_TAIL):
            hits += math.isfinite(tau) and tau >= q.k
        else:
            raise QueryError(f"mode {mode.value} is not supported by enumeration")
    return EmpiricalEstimate(hits / total, 0.0, total, 0, int(hits), total, 0)
