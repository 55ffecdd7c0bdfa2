"""Closed forms and large-t limits for the b-ary, geometric and Sibuya models.

These formulas are independent of the quadrature engine in ``ancestry`` and
serve as cross-checks for it.  Limits are always labelled as such and never
substituted for exact finite-t values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import gammaln

from .mechanism import (
    BAry,
    Geometric,
    Mechanism,
    Sibuya,
    _lf_params,
    sibuya_params,
)


class AsymptoticRegime(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"
    INFINITE_MEAN = "infinite-mean"


def classify(mech: Mechanism) -> AsymptoticRegime:
    if isinstance(mech, Sibuya):
        return AsymptoticRegime.INFINITE_MEAN
    if isinstance(mech, BAry):
        return AsymptoticRegime.SUPERCRITICAL
    mu = mech.mean
    if mu < 1.0:
        return AsymptoticRegime.SUBCRITICAL
    if mu == 1.0:
        return AsymptoticRegime.CRITICAL
    return AsymptoticRegime.SUPERCRITICAL


def _falling(x: float, n: int) -> float:
    return math.prod(x - r for r in range(n))


def _rising(x: float, n: int) -> float:
    return math.prod(x + r for r in range(n))


# --------------------------------------------------------------------------
# b-ary tree


@dataclass(frozen=True)
class BAryClosedForms:
    prob_finite: float
    transition_i1: float
    conditional_tail: float
    pair_tail: float
    merger_ratio: float


def bary_closed_forms(b: int, t: int, n0: int, i: int, k: int) -> BAryClosedForms:
    """Deterministic-tree values by counting leaves.

    The i sampled leaves coalesce by generation k exactly when they share a
    vertex there, so every quantity is a ratio of falling factorials.
    """
    big = b**t
    total = _falling(n0 * big, i)
    pf = n0 * _falling(big, i) / total if total else 0.0
    step = n0 * b ** (t - 1) * _falling(b, i) / total if total else 0.0
    # undefined when no i-sample can share a founder
    cond = b**k * _falling(b ** (t - k), i) / _falling(big, i) if i <= big else math.nan
    pair = (b ** (t - k) - 1) / (n0 * big - 1)
    merger = 0.0 if b == 2 else (b - 2) / (n0 * big - 2)
    return BAryClosedForms(pf, step, cond, pair, merger)


def bary_pair_conditional_law(b: int, t: int, k: int) -> float:
    """P(tau_{2,1} = k | tau_{2,1} < inf), truncated geometric(1/b)."""
    return b ** (-k) * (1.0 - 1.0 / b) / (1.0 - b ** (-t))


# --------------------------------------------------------------------------
# geometric model


@dataclass(frozen=True)
class GeometricParams:
    """alpha_t = P(N_t = 0), beta_t, delta_t, gap = alpha_t (delta_t - beta_t)."""

    alpha: float
    beta: float
    delta: float
    one_minus_delta: float
    gap: float


def geometric_params(p: float, t: int) -> GeometricParams:
    a = (1.0 - p) / p
    c_inv, g, d, omd = _lf_params(a, 1.0, t)
    alpha = 1.0 - c_inv
    beta = d - g / alpha if alpha > 0 else 0.0
    return GeometricParams(alpha, beta, d, omd, g)


def _xlogx_term(y: float) -> float:
    """(1 + y) log(1 + y) - y, accurate for small y."""
    if y < 1e-3:
        return sum((-1) ** n * y**n / (n * (n - 1)) for n in range(2, 9))
    return (1.0 + y) * math.log1p(y) - y


def closfm_pair_tail(p: float, t: int, k: int) -> float:
    """P(inf > tau_{2,1}^{(t)}(1) >= k) for a single founder."""
    now, then = geometric_params(p, t), geometric_params(p, t - k)
    diff = then.one_minus_delta - now.one_minus_delta
    y = diff / now.one_minus_delta
    if y == 0.0:
        return now.gap * now.delta / now.one_minus_delta
    return 2.0 * now.gap * then.delta * _xlogx_term(y) / (now.one_minus_delta * y * y)


def lauricella_pair_tail(p: float, t: int, n0: int, k: int, tol: float = 1e-14) -> float:
    """Pair tail for n0 founders as sum_m 2 Lambda_m / ((m+1)(m+2)).

    Lambda_m = [z^m] (1 - beta_t z)^(n0-1) / ((1 - delta_{t-k} z)(1 - delta_t z)^(n0+1)),
    read off by running the rational function as a linear recurrence.
    """
    now, then = geometric_params(p, t), geometric_params(p, t - k)
    num = np.polynomial.polynomial.polypow([1.0, -now.beta], n0 - 1)
    prefactor = n0 * then.delta * now.gap * now.alpha ** (n0 - 1)
    size = 256
    while True:
        m = np.arange(size)
        # (1 - delta_t z)^-(n0+1) has coefficients C(m + n0, n0) delta_t^m
        with np.errstate(divide="ignore"):
            log_c = gammaln(m + n0 + 1.0) - gammaln(m + 1.0) - gammaln(n0 + 1.0)
            base = np.exp(log_c + m * math.log(now.delta)) if now.delta > 0 else (m == 0) * 1.0
        lam = lfilter([1.0], [1.0, -then.delta], np.convolve(num, base)[:size])
        terms = 2.0 * lam / ((m + 1.0) * (m + 2.0))
        total = math.fsum(terms)
        tail = abs(math.fsum(terms[size // 2:]))
        if (tail < tol * max(abs(total), 1e-300) and abs(terms[-1]) < tol) or size >= 1 << 24:
            return prefactor * total
        size *= 2


def geometric_pair_tail(p: float, t: int, n0: int, k: int) -> float:
    if n0 == 1:
        return closfm_pair_tail(p, t, k)
    return lauricella_pair_tail(p, t, n0, k)


def geometric_pair_prob_finite(p: float, t: int, n0: int) -> float:
    """P(tau_{2,1}^{(t)}(n0) < inf) through the exact integral identity."""
    g = geometric_params(p, t)
    if p == 0.5:
        return 2.0 * t / ((n0 + 1) * (t + 1) ** (n0 + 1)) * (
            (t + 1) ** (n0 + 1) - t**n0 * (n0 + t + 1)
        )
    db = g.gap / g.alpha
    one_b = g.one_minus_delta + db
    bracket = -one_b - n0 * db + one_b ** (n0 + 1) / g.one_minus_delta**n0
    return 2.0 * g.delta * g.alpha**n0 * bracket / ((n0 + 1) * db)


def _mu_power_ratio(mu: float, t: int, k: int) -> float:
    """(mu^(t+1) - mu^k) / (mu^k (mu^(t+1) - 1)) without overflow."""
    lm = math.log(mu)
    if mu > 1.0:
        return -math.expm1((k - t - 1) * lm) / (math.exp(k * lm) * -math.expm1(-(t + 1) * lm))
    return math.expm1((t + 1 - k) * lm) / math.expm1((t + 1) * lm)


def geometric_whole_population_tail(p: float, t: int, k: int) -> float:
    """P(tau_{N_t,1} >= k | N_t > 0), exact for every regime."""
    mu = p / (1.0 - p)
    if p == 0.5:
        return (t - k + 1) / (t + 1)
    return _mu_power_ratio(mu, t, k)


def geometric_whole_population_tail_critical_printed(t: int, k: int) -> float:
    """The large-t form t(t-k+1)/((t-1)(t+1)); may exceed 1 for small t."""
    return t * (t - k + 1) / ((t - 1) * (t + 1))


def geometric_full_sample_critical(t: int, i: int, k: int) -> float:
    """P(tau_{i,1} >= k | N_t = i) at criticality."""
    return ((t - k) * (t + 1) / (t * (t - k + 1))) ** (i - 1)


@dataclass(frozen=True)
class GeometricClosedForms:
    regime: AsymptoticRegime
    pair_tail: float
    pair_prob_finite: float
    whole_population_tail: float
    full_sample_critical: float | None
    whole_population_tail_printed: float | None


def geometric_closed_forms(p: float, t: int, n0: int, i: int, k: int) -> GeometricClosedForms:
    regime = classify(Geometric(p))
    crit = regime is AsymptoticRegime.CRITICAL
    return GeometricClosedForms(
        regime=regime,
        pair_tail=geometric_pair_tail(p, t, n0, k),
        pair_prob_finite=geometric_pair_prob_finite(p, t, n0),
        whole_population_tail=geometric_whole_population_tail(p, t, k),
        full_sample_critical=geometric_full_sample_critical(t, i, k) if crit else None,
        whole_population_tail_printed=(
            geometric_whole_population_tail_critical_printed(t, k) if crit and t > 1 else None
        ),
    )


# geometric limits ------------------------------------------------------------


def e1_limit(mu: float, l: int) -> float:
    """Printed subcritical limit of P(t - tau_{2,1} <= l | tau_{2,1} < inf)."""
    if not 0 < mu < 1:
        raise ValueError("needs 0 < mu < 1")
    return mu - mu / 3.0 * mu**l * (3.0 - 2.0 * mu)


def e3_limit(mu: float, k: float) -> float:
    """Supercritical limit pi_k of P(tau_{2,1} >= k | tau_{2,1} < inf)."""
    if mu <= 1:
        raise ValueError("needs mu > 1")
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return 1.0
    x = -math.expm1(-k * math.log(mu))
    return 2.0 * mu ** (-k) * (k * math.log(mu) - x) / (x * x)


def e4_limit(x: float) -> float:
    """Critical scaling limit of P(tau_{2,1} / t >= x | tau_{2,1} < inf)."""
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if x == 0:
        return 1.0
    if x == 1:
        return 0.0
    return -2.0 / (x * x) * (x * (1 - x) + (1 - x) * math.log1p(-x))


def supercritical_prob_finite_limit(mu: float, n0: int) -> float:
    return 2.0 * (mu * (1 - mu ** (-n0)) - n0 * (mu - 1) * mu ** (-n0)) / ((mu - 1) * (n0 + 1))


def whole_population_limit(mu: float, arg: float) -> float:
    """Limit laws of the whole-population coalescence time.

    Subcritical: pmf (1 - mu) mu^s of s = t - tau (s >= 2).  Supercritical:
    pmf (mu - 1) mu^(-k-1) of k = tau.  Critical: tail 1 - x of tau / t.
    """
    if mu < 1:
        return (1.0 - mu) * mu**arg
    if mu > 1:
        return (mu - 1.0) * mu ** (-arg - 1.0)
    if not 0 <= arg <= 1:
        raise ValueError("x must lie in [0, 1]")
    return 1.0 - arg


def merger_ratio_envelope(p: float, t: int) -> float:
    """Printed large-t envelope of P^_{3,1} / P^_{2,1} (critical / supercritical)."""
    mu = p / (1.0 - p)
    c = 0.75 * p * (2.0 - p)
    if mu == 1.0:
        return c / math.log(t)
    if mu > 1.0:
        return c / (t * math.log(mu))
    raise ValueError("the envelope applies to mu >= 1 only")


# --------------------------------------------------------------------------
# Sibuya model


@dataclass(frozen=True)
class SibuyaClosedForms:
    alpha_t: float
    lambda_t: float
    pair_tail: float
    pair_law: float
    pair_conditional_law: float
    prob_finite: float
    prob_infinite: float
    prob_infinite_survivors: float
    prob_fewer_than_two: float
    full_sample_conditional: float
    whole_population_pmf: float
    whole_population_tail: float
    merger_ratio: float
    transition_i1: float
    transition_22_single: float
    defective_limit_mass: float


def sibuya_closed_forms(alpha: float, lam: float, t: int, n0: int, i: int, k: int) -> SibuyaClosedForms:
    at, lt = sibuya_params(alpha, lam, t)
    reach = 1.0 - (1.0 - lt) ** n0
    pair_law = reach * alpha ** (t - k - 1) * (1.0 - alpha)
    wp_pmf = (1.0 - alpha) * alpha**k if k <= t - 2 else alpha ** (t - 1)
    return SibuyaClosedForms(
        alpha_t=at,
        lambda_t=lt,
        pair_tail=(1.0 - alpha ** (t - k)) * reach,
        pair_law=pair_law,
        pair_conditional_law=alpha ** (t - k - 1) * (1.0 - alpha) / (1.0 - at),
        prob_finite=reach * (1.0 - at),
        prob_infinite=at + (1.0 - lt) ** n0 * (1.0 - at),
        prob_infinite_survivors=at * (1.0 - (1.0 - lt) ** (n0 - 1) * (1.0 + (n0 - 1) * lt)),
        prob_fewer_than_two=(1.0 - lt) ** (n0 - 1) * (1.0 + lt * (n0 * at - 1.0)),
        full_sample_conditional=_rising(1.0 - alpha ** (t - k), i - 1) / _rising(1.0 - at, i - 1),
        whole_population_pmf=wp_pmf,
        whole_population_tail=alpha**k,
        merger_ratio=1.0 - alpha / 2.0,
        transition_i1=_rising(1.0 - alpha, i - 1) / math.factorial(i - 1) * reach,
        transition_22_single=lt * (alpha - at),
        defective_limit_mass=1.0 - (1.0 - lam ** (1.0 / (1.0 - alpha))) ** n0,
    )


def sibuya_pair_gap_law(alpha: float, t: int) -> np.ndarray:
    """P(t - tau_{2,1} = l | tau_{2,1} < inf) for l = 1..t."""
    l = np.arange(1, t + 1)
    return alpha ** (l - 1.0) * (1.0 - alpha) / (1.0 - alpha**t)


def geometric_pmf(alpha: float, l: np.ndarray) -> np.ndarray:
    """The geometric(alpha) limit law alpha^(l-1) (1 - alpha), l >= 1."""
    return alpha ** (np.asarray(l) - 1.0) * (1.0 - alpha)


def closed_form_for(mech: Mechanism):
    """The closed-form family of ``mech``, or None for generic laws."""
    if isinstance(mech, BAry):
        return "bary"
    if isinstance(mech, Geometric):
        return "geometric"
    if isinstance(mech, Sibuya):
        return "sibuya"
    return None


def closed_form_value(mech: Mechanism, query: str, t: int, n0: int = 1, i: int = 2,
                      j: int = 1, k: int = 0) -> float | None:
    """Closed-form counterpart of an ancestry query, when one exists."""
    family = closed_form_for(mech)
    if family == "bary":
        b = mech.b
        f = bary_closed_forms(b, t, n0, i, k)
        total = _falling(n0 * b**t, i)
        if query == "prob-finite":
            return f.prob_finite
        if query == "tmrca-tail":
            return n0 * b**k * _falling(b ** (t - k), i) / total if total else 0.0
        if query == "conditional-tail":
            return None if math.isnan(f.conditional_tail) else f.conditional_tail
        if query == "transition" and j == 1:
            return f.transition_i1
        if query == "merger-ratio" and n0 * b**t >= 3:
            return f.merger_ratio
        return None
    if family == "geometric":
        p = mech.p
        if query == "whole-pop-tail":
            return geometric_whole_population_tail(p, t, k)
        if query == "full-sample" and p == 0.5:
            return geometric_full_sample_critical(t, i, k)
        if i != 2:
            return None
        if query == "tmrca-tail":
            return geometric_pair_tail(p, t, n0, k)
        if query == "prob-finite":
            return geometric_pair_prob_finite(p, t, n0)
        if query == "conditional-tail":
            return geometric_pair_tail(p, t, n0, k) / geometric_pair_prob_finite(p, t, n0)
        return None
    if family == "sibuya":
        f = sibuya_closed_forms(mech.alpha, mech.lam, t, n0, i, k)
        if query == "whole-pop-tail":
            return f.whole_population_tail
        if query == "merger-ratio":
            return f.merger_ratio
        if query == "full-sample":
            return f.full_sample_conditional
        if query == "transition" and j == 1:
            return f.transition_i1
        if query == "transition" and (i, j, n0) == (2, 2, 1):
            return f.transition_22_single
        if i != 2:
            return None
        if query == "tmrca-tail":
            return f.pair_tail
        if query == "prob-finite":
            return f.prob_finite
        if query == "prob-infinite":
            return f.prob_infinite
        if query == "conditional-tail":
            return f.pair_tail / f.prob_finite
        return None
    return None
