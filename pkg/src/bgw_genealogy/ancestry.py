"""Ancestral-count transition probabilities and coalescence-time laws.

All quantities are integrals of the form

    (1 / Gamma(i)) int_0^1 (1-z)^(i-1) F(z) dz

where ``F`` is built from iterates of the offspring pgf and their
derivatives.  Two evaluation backends share the same integrand builders:

* ``_NodeBackend`` evaluates ``F`` on quadrature nodes (every mechanism with
  a smooth pgf on [0, 1]);
* ``_PowerBackend`` represents ``F`` exactly as a finite sum of powers of
  ``s = 1 - z`` (Sibuya).  Each power is integrated with its exponent folded
  into the Jacobi weight, which keeps the rule exact despite the
  ``(1-z)^(alpha_t - 1)`` blow-up at z = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np

from .mechanism import (
    DEFAULT_TRUNC_ORDER,
    IteratedPgf,
    Mechanism,
    MechanismLike,
    Sibuya,
    TruncationError,
    as_mechanism,
    iterate,
    sibuya_params,
)
from .quadrature import QuadratureSpec, integrate

MAX_SAMPLE = 20
RAW_SLACK = 1e-9
ZERO_GUARD = 1e-14

QUAD = QuadratureSpec(nodes=32, abs_tol=1e-200, rel_tol=1e-13)


class QueryError(ValueError):
    """A coalescence query violates its invariants."""


class InconsistencyError(ArithmeticError):
    """An analytic probability fell outside [-1e-9, 1 + 1e-9]."""


class ZeroDenominatorError(ZeroDivisionError):
    pass


class Probability(float):
    """A probability clamped to [0, 1]; ``raw`` keeps the unclamped value."""

    raw: float

    def __new__(cls, raw: float):
        raw = float(raw)
        if not (-RAW_SLACK <= raw <= 1.0 + RAW_SLACK) or math.isnan(raw):
            raise InconsistencyError(f"probability {raw!r} outside [0, 1]")
        obj = super().__new__(cls, min(1.0, max(0.0, raw)))
        obj.raw = raw
        return obj


@dataclass(frozen=True)
class CoalescenceQuery:
    t: int
    n0: int = 1
    i: int = 2
    j: int = 1
    k: int = 0

    def __post_init__(self):
        validate(self.t, self.n0, self.i, self.j, self.k)


def validate(t: int, n0: int = 1, i: int = 1, j: int = 1, k: int = 0) -> None:
    for name, v in (("t", t), ("n0", n0), ("i", i), ("j", j), ("k", k)):
        if int(v) != v:
            raise QueryError(f"{name} must be an integer")
    if t < 1:
        raise QueryError("t must be at least 1")
    if n0 < 1:
        raise QueryError("n0 must be at least 1")
    if i < 1:
        raise QueryError("i must be at least 1")
    if j < 1:
        raise QueryError("j must be at least 1")
    if j > i:
        raise QueryError("j must not exceed i")
    if not 0 <= k <= t - 1:
        raise QueryError("k must lie in 0..t-1")
    if i > MAX_SAMPLE:
        raise QueryError(f"i must not exceed {MAX_SAMPLE}")


# --------------------------------------------------------------------------
# compositions


@dataclass(frozen=True)
class CompositionSum:
    """Compositions of i into j positive parts with multinomial weights."""

    i: int
    j: int
    terms: tuple[tuple[tuple[int, ...], int], ...]

    def __len__(self) -> int:
        return len(self.terms)


def _compositions(i: int, j: int) -> Iterator[tuple[int, ...]]:
    if j == 1:
        yield (i,)
        return
    for first in range(1, i - j + 2):
        for rest in _compositions(i - first, j - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def compositions(i: int, j: int) -> CompositionSum:
    """Lexicographic compositions of ``i`` into ``j`` parts, each >= 1."""
    if i > MAX_SAMPLE:
        raise QueryError(f"composition sums are capped at i = {MAX_SAMPLE}")
    if not 1 <= j <= i:
        raise QueryError("need 1 <= j <= i")
    fi = math.factorial(i)
    terms = []
    for parts in _compositions(i, j):
        w = fi
        for p in parts:
            w //= math.factorial(p)
        terms.append((parts, w))
    return CompositionSum(i, j, tuple(terms))


# --------------------------------------------------------------------------
# exact power sums in s = 1 - z


class PowerSum:
    """Finite sum ``sum_e c_e s^e`` with real exponents."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict[float, float] | None = None):
        self.terms: dict[float, float] = {}
        for e, c in (terms or {}).items():
            if c != 0.0:
                key = round(float(e), 12)
                self.terms[key] = self.terms.get(key, 0.0) + c

    @classmethod
    def const(cls, c: float) -> "PowerSum":
        return cls({0.0: float(c)})

    def __add__(self, other):
        other = other if isinstance(other, PowerSum) else PowerSum.const(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return PowerSum(out)

    __radd__ = __add__

    def __neg__(self):
        return PowerSum({e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, PowerSum) else -float(other))

    def __mul__(self, other):
        if not isinstance(other, PowerSum):
            return PowerSum({e: c * float(other) for e, c in self.terms.items()})
        out: dict[float, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                key = round(e1 + e2, 12)
                out[key] = out.get(key, 0.0) + c1 * c2
        return PowerSum(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0 or int(n) != n:
            raise ValueError("only non-negative integer powers")
        result = PowerSum.const(1.0)
        for _ in range(int(n)):
            result = result * self
        return result

    def __truediv__(self, other):
        if not isinstance(other, PowerSum):
            return self * (1.0 / float(other))
        if len(other.terms) != 1:
            raise ValueError("can only divide by a monomial")
        (e, c), = other.terms.items()
        return PowerSum({e1 - e: c1 / c for e1, c1 in self.terms.items()})

    def __call__(self, z):
        s = 1.0 - np.asarray(z, dtype=float)
        return sum(c * s**e for e, c in self.terms.items())


# --------------------------------------------------------------------------
# evaluation backends


def _series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated product of series stored along axis 0."""
    n = a.shape[0]
    out = np.zeros_like(a)
    for r in range(n):
        out[r] = np.sum(a[: r + 1] * b[r::-1], axis=0)
    return out


def _series_pow(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(a)
    out[0] = 1.0
    for _ in range(n):
        out = _series_mul(out, a)
    return out


class _NodeBackend:
    """Integrand values at nodes, parametrized by s = 1 - z.

    Working in s keeps 1 - z exact near z = 1, where linear-fractional and
    b-ary iterates have boundary layers of width (1 - delta_t) or b^-t.
    """

    def __init__(self, s: np.ndarray):
        self.s = s
        self.z = 1.0 - s
        self._cache: dict = {}

    def taylor(self, ip: IteratedPgf, order: int) -> np.ndarray:
        key = (ip.t, order)
        if key not in self._cache:
            self._cache[key] = ip.taylor(self.z, order, s=self.s)
        return self._cache[key]

    def d(self, ip: IteratedPgf, r: int):
        return self.taylor(ip, r)[r] * math.factorial(r)

    def ratio(self, num, den):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den == 0.0, 0.0, num / np.where(den == 0.0, 1.0, den))

    def outer_power_deriv(self, outer: IteratedPgf, n0: int, j: int, inner: IteratedPgf):
        """[phi_k^n0]^(j) evaluated at phi_{t-k}(z)."""
        w = self.taylor(inner, 0)[0]
        tw = outer.taylor(w, j, s=inner.complement(self.z, self.s))
        return _series_pow(tw, n0)[j] * math.factorial(j)

    @staticmethod
    def integrate(build: Callable, weight_exp: float, ips=()) -> float:
        scale = min([ip.singular_scale for ip in ips] + [1.0])
        depth = int(math.ceil(-math.log2(scale))) + 2 if scale < 0.05 else 0
        spec = QuadratureSpec(
            weight_exponent_left=weight_exp,
            nodes=QUAD.nodes,
            abs_tol=QUAD.abs_tol,
            rel_tol=QUAD.rel_tol,
            breakpoints=tuple(2.0 ** -m for m in range(1, min(depth, 1000) + 1)),
        )
        return integrate(lambda s: build(_NodeBackend(s)), spec)


class _PowerBackend:
    """Exact power sums for the Sibuya family."""

    def __init__(self, mech: Sibuya):
        self.mech = mech

    def _params(self, ip: IteratedPgf) -> tuple[float, float]:
        return sibuya_params(self.mech.alpha, self.mech.lam, ip.t)

    def d(self, ip: IteratedPgf, r: int) -> PowerSum:
        a, lam = self._params(ip)
        if r == 0:
            return PowerSum({0.0: 1.0, a: -lam})
        c = lam * a * math.prod(1.0 - a + m for m in range(r - 1))
        return PowerSum({a - r: c})

    def ratio(self, num: PowerSum, den: PowerSum) -> PowerSum:
        return num / den

    def outer_power_deriv(self, outer: IteratedPgf, n0: int, j: int, inner: IteratedPgf):
        # (1 - lam_k y^a_k)^n0 differentiated j times in w, y = 1 - w
        ak, lk = self._params(outer)
        ai, li = self._params(inner)
        terms: dict[float, float] = {}
        for m in range(n0 + 1):
            e = m * ak
            fall = math.prod(e - r for r in range(j))
            if fall == 0.0:
                continue
            c = math.comb(n0, m) * (-lk) ** m * (-1) ** j * fall * li ** (e - j)
            key = ai * (e - j)
            terms[key] = terms.get(key, 0.0) + c
        return PowerSum(terms)

    def integrate(self, build: Callable, weight_exp: float, ips=()) -> float:
        ps: PowerSum = build(self)
        total = []
        for e, c in ps.terms.items():
            expo = e + weight_exp
            if expo <= -1.0:
                raise ArithmeticError(f"non-integrable power s^{expo}")
            spec = QuadratureSpec(weight_exponent_right=expo, nodes=4, adaptive=False)
            total.append(c * integrate(lambda z: np.ones_like(z), spec))
        return math.fsum(total)


def _backend(mech: Mechanism):
    return _PowerBackend(mech) if isinstance(mech, Sibuya) else None


def _integral(mech: Mechanism, build: Callable, weight_exp: float, ips=()) -> float:
    be = _backend(mech)
    if be is not None:
        return be.integrate(build, weight_exp)
    return _NodeBackend.integrate(build, weight_exp, ips)


@lru_cache(maxsize=4096)
def _iter(mech: Mechanism, t: int, trunc_order: int) -> IteratedPgf:
    return iterate(mech, t, trunc_order)


class _Ctx:
    """Cached iterates for one mechanism."""

    def __init__(self, mech: MechanismLike, trunc_order: int = DEFAULT_TRUNC_ORDER):
        self.mech = as_mechanism(mech)
        self.trunc_order = trunc_order

    def __call__(self, t: int) -> IteratedPgf:
        return _iter(self.mech, t, self.trunc_order)

    def pmf(self, t: int, n0: int, n_max: int) -> np.ndarray:
        return self(t).pmf(n_max, n0)

    def survival(self, t: int, n0: int, i: int) -> float:
        if i <= 0:
            return 1.0
        return 1.0 - math.fsum(self.pmf(t, n0, i - 1))

    def nonextinct(self, t: int, n0: int = 1) -> float:
        q = float(self(t).value(0.0))
        if n0 == 1:
            return float(self(t).complement(0.0))
        return -math.expm1(n0 * math.log(q)) if q > 0 else 1.0


# --------------------------------------------------------------------------
# operations


def tau_tail(mech: MechanismLike, t: int, n0: int, i: int, j: int, k: int,
             trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """Composition-sum integral for the ancestor count at generation k.

    The value is P(N^_k = j): the i-sample has exactly j ancestors in
    generation k.  For j = 1, or k = t - 1, this is the tail
    P(inf > tau_{i,j} >= k) of the last generation with j ancestors.  For
    j >= 2 and k < t - 1 the tail is larger, since the count can pass
    through j after generation k.
    """
    validate(t, n0, i, j, k)
    ctx = _Ctx(mech, trunc_order)
    outer, inner = ctx(k), ctx(t - k)
    comp = compositions(i, j)

    def build(B):
        head = B.outer_power_deriv(outer, n0, j, inner)
        acc = None
        for parts, w in comp.terms:
            term = w
            for p in parts:
                term = B.d(inner, p) * term
            acc = term if acc is None else acc + term
        return head * acc

    raw = _integral(ctx.mech, build, i - 1, (outer, inner)) / (math.factorial(j) * math.gamma(i))
    return Probability(raw)


def transition_prob(mech: MechanismLike, t: int, n0: int, i: int, j: int,
                    trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """One backward step of the ancestral count: P(N^_{t-1} = j | N^_t = i)."""
    validate(t, n0, i, j, t - 1)
    return tau_tail(mech, t, n0, i, j, t - 1, trunc_order)


def row_sum_check(mech: MechanismLike, t: int, n0: int, i: int,
                  trunc_order: int = DEFAULT_TRUNC_ORDER) -> tuple[float, float]:
    """(sum_j transition_prob, P(N_t(n0) >= i))."""
    validate(t, n0, i)
    ctx = _Ctx(mech, trunc_order)
    row = math.fsum(transition_prob(ctx.mech, t, n0, i, j, trunc_order).raw for j in range(1, i + 1))
    return row, ctx.survival(t, n0, i)


def coffin_mass(mech: MechanismLike, t: int, n0: int, i: int,
                trunc_order: int = DEFAULT_TRUNC_ORDER) -> float:
    """Mass of the absorbing state: 1 - sum_j transition_prob."""
    row, _ = row_sum_check(mech, t, n0, i, trunc_order)
    return 1.0 - row


def _tmrca_raw(ctx: _Ctx, t: int, n0: int, i: int, k: int) -> float:
    whole, inner = ctx(t), ctx(t - k)
    fi = math.factorial(i)

    def build(B):
        lead = B.d(whole, 1) * n0
        if n0 > 1:
            lead = lead * B.d(whole, 0) ** (n0 - 1)
        if i == 1:
            return lead
        return lead * B.ratio(B.d(inner, i), B.d(inner, 1))

    return _integral(ctx.mech, build, i - 1, (whole, inner)) / math.gamma(i)


def tmrca_tail(mech: MechanismLike, t: int, n0: int, i: int, k: int,
               trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(inf > tau_{i,1}^{(t)}(n0) >= k) through the single-integral form."""
    validate(t, n0, i, 1, k)
    return Probability(_tmrca_raw(_Ctx(mech, trunc_order), t, n0, i, k))


def prob_finite(mech: MechanismLike, t: int, n0: int, i: int,
                trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(tau_{i,1}^{(t)}(n0) < inf)."""
    return tmrca_tail(mech, t, n0, i, 0, trunc_order)


def joint_tmrca_popsize(mech: MechanismLike, t: int, n0: int, i: int, k: int, jpop: int,
                        trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(inf > tau_{i,1}^{(t)}(n0) >= k, N_t(n0) = jpop).

    The integrand G(uz) is expanded in u at every node; only the
    coefficient of u^(jpop - i) is integrated.
    """
    validate(t, n0, i, 1, k)
    if jpop < i:
        raise QueryError("jpop must be at least i")
    m = jpop - i
    ctx = _Ctx(mech, trunc_order)
    outer, inner = ctx(k), ctx(t - k)
    if inner.series is not None and m + i > inner.trunc_order - 5:
        raise TruncationError(f"truncation order {inner.trunc_order} too small for jpop={jpop}")
    g = _joint_coeffs(outer, inner, n0, i, m)[m]
    spec = QuadratureSpec(weight_exponent_right=i - 1, nodes=QUAD.nodes,
                          abs_tol=QUAD.abs_tol, rel_tol=QUAD.rel_tol)
    raw = integrate(lambda z: g * z**m, spec) / math.gamma(i)
    return Probability(raw)


def _joint_coeffs(outer: IteratedPgf, inner: IteratedPgf, n0: int, i: int, m: int) -> np.ndarray:
    """Maclaurin coefficients of (phi_k^n0)'(phi_{t-k}(x)) * phi_{t-k}^(i)(x)."""
    p = inner.pmf(m + i)
    c0 = p[0]
    y = p[: m + 1].copy()
    y[0] = 0.0
    n = np.arange(i, m + i + 1)
    fall = np.ones(m + 1)
    for r in range(i):
        fall *= n - r
    dser = fall * p[i: m + i + 1]
    # Taylor of (phi_k^n0)' around c0, order m
    tw = outer.taylor(np.asarray(c0), m + 1).reshape(m + 2)
    pw = np.zeros(m + 2)
    pw[0] = 1.0
    for _ in range(n0):
        pw = np.convolve(pw, tw)[: m + 2]
    h = pw[1:] * np.arange(1, m + 2)
    # Horner: h(y(x))
    comp = np.zeros(m + 1)
    for coef in h[::-1]:
        comp = np.convolve(comp, y)[: m + 1]
        comp[0] += coef
    return np.convolve(comp, dser)[: m + 1]


def prob_finite_recurrence_check(mech: MechanismLike, t: int, n0: int, i: int,
                                 trunc_order: int = DEFAULT_TRUNC_ORDER) -> "RecurrenceCheck":
    """Both sides of the recurrence linking P(tau_{i,1} < inf) across i.

    ``rhs`` is the identity obtained by integrating by parts.  ``rhs_printed``
    is the two-term variant -P(N_t(n0) = i-1) - n0(n0-1) int(...) without the
    1/Gamma(i) factor; it coincides with ``rhs`` when n0 = 1 or i = 2.
    """
    if i < 2:
        raise QueryError("the recurrence needs i >= 2")
    validate(t, n0, i)
    ctx = _Ctx(mech, trunc_order)
    lhs = _tmrca_raw(ctx, t, n0, i, 0) - _tmrca_raw(ctx, t, n0, i - 1, 0)
    whole = ctx(t)
    if n0 > 1:
        def build(B):
            out = B.d(whole, 1) * B.d(whole, i - 1)
            if n0 > 2:
                out = out * B.d(whole, 0) ** (n0 - 2)
            return out

        cross = n0 * (n0 - 1) * _integral(ctx.mech, build, i - 1, (whole,))
    else:
        cross = 0.0
    p1 = ctx.pmf(t, 1, i - 1)[i - 1]
    q0 = float(whole.value(0.0))
    rhs = -n0 * q0 ** (n0 - 1) * p1 - cross / math.gamma(i)
    rhs_printed = -ctx.pmf(t, n0, i - 1)[i - 1] - cross
    return RecurrenceCheck(lhs, rhs, rhs_printed)


@dataclass(frozen=True)
class RecurrenceCheck:
    lhs: float
    rhs: float
    rhs_printed: float

    def __iter__(self):
        return iter((self.lhs, self.rhs))


def prob_infinite_with_survivors(mech: MechanismLike, t: int, n0: int, i: int,
                                 trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(tau_{i,1} = inf, N_t(n0) >= i): the sample spans several founders."""
    validate(t, n0, i)
    ctx = _Ctx(mech, trunc_order)
    return Probability(ctx.survival(t, n0, i) - _tmrca_raw(ctx, t, n0, i, 0))


def prob_infinite_pair_direct(mech: MechanismLike, t: int, n0: int,
                              trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """The i = 2 case as the single integral n0(n0-1) int (1-z) phi_t'^2 phi_t^(n0-2)."""
    validate(t, n0, 2)
    if n0 == 1:
        return Probability(0.0)
    ctx = _Ctx(mech, trunc_order)
    whole = ctx(t)

    def build(B):
        out = B.d(whole, 1) * B.d(whole, 1)
        if n0 > 2:
            out = out * B.d(whole, 0) ** (n0 - 2)
        return out

    return Probability(n0 * (n0 - 1) * _integral(ctx.mech, build, 1, (whole,)))


def prob_infinite(mech: MechanismLike, t: int, n0: int, i: int,
                  trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(tau_{i,1}^{(t)}(n0) = inf), including too few survivors."""
    return Probability(1.0 - prob_finite(mech, t, n0, i, trunc_order).raw)


def conditional_tail_given_finite(mech: MechanismLike, t: int, n0: int, i: int, k: int,
                                  trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(tau_{i,1} >= k | tau_{i,1} < inf)."""
    validate(t, n0, i, 1, k)
    ctx = _Ctx(mech, trunc_order)
    den = _tmrca_raw(ctx, t, n0, i, 0)
    if den < ZERO_GUARD:
        raise ZeroDenominatorError(f"P(tau < inf) = {den:.3g} is too small to condition on")
    if k == 0:
        return Probability(1.0)
    return Probability(_tmrca_raw(ctx, t, n0, i, k) / den)


def tmrca_full_sample_given_size(mech: MechanismLike, t: int, i: int, k: int,
                                 trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(tau_{i,1}^{(t)}(1) >= k | N_t(1) = i): the whole population is sampled."""
    validate(t, 1, i, 1, k)
    ctx = _Ctx(mech, trunc_order)
    den = ctx.pmf(t, 1, i)[i]
    if den < ZERO_GUARD:
        raise ZeroDenominatorError(f"P(N_t = {i}) = {den:.3g}")
    q = float(ctx(t - k).value(0.0))
    slope = float(ctx(k).derivative(np.asarray(q), 1))
    return Probability(slope * ctx.pmf(t - k, 1, i)[i] / den)


def whole_population_tail(mech: MechanismLike, t: int, k: int,
                          trunc_order: int = DEFAULT_TRUNC_ORDER) -> Probability:
    """P(tau_{N_t,1}^{(t)}(1) >= k | N_t(1) > 0)."""
    validate(t, 1, 1, 1, k)
    ctx = _Ctx(mech, trunc_order)
    den = ctx.nonextinct(t)
    if den < ZERO_GUARD:
        raise ZeroDenominatorError("the population is extinct by generation t")
    q = float(ctx(t - k).value(0.0))
    slope = float(ctx(k).derivative(np.asarray(q), 1))
    return Probability(ctx.nonextinct(t - k) / den * slope)


def merger_ratio(mech: MechanismLike, t: int, n0: int = 1,
                 trunc_order: int = DEFAULT_TRUNC_ORDER) -> float:
    """Triple-to-binary one-step merger ratio P^_{3,1} / P^_{2,1}."""
    validate(t, n0, 3, 1, t - 1)
    two = transition_prob(mech, t, n0, 2, 1, trunc_order).raw
    if two <= 0.0:
        raise ZeroDenominatorError("P^_{2,1} vanishes")
    return transition_prob(mech, t, n0, 3, 1, trunc_order).raw / two
