"""Branching mechanisms, their iterates and population-size laws.

A mechanism is the offspring law of a discrete-time Bienaymé-Galton-Watson
process, described through its probability generating function (pgf)
``phi(z) = E[z^M]``.  ``iterate`` returns the t-fold composition ``phi_t``,
which generates the law of the population size ``N_t(1)`` started from a
single founder.

Closed forms are used whenever the family is stable under composition
(b-ary, geometric / linear-fractional, Sibuya); generic laws fall back on a
truncated power series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import gammaln

DEFAULT_TRUNC_ORDER = 512
NORMALIZATION_TOL = 1e-12


class MechanismError(ValueError):
    """Invalid mechanism parameters or spec string."""


class DomainError(ValueError):
    """Argument outside the domain of a pgf operation."""


class SingularityError(ArithmeticError):
    """Derivative requested at a point where it is infinite."""


class TruncationError(ArithmeticError):
    """A coefficient too close to the series truncation order was requested."""


class TruncationWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# mechanisms


class Mechanism:
    """Base class of the offspring laws."""

    kind: str = ""

    def pgf(self, z):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def spec_string(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class BAry(Mechanism):
    """Deterministic b-ary tree, phi(z) = z**b."""

    b: int
    kind = "bary"

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 2:
            raise MechanismError("b must be an integer >= 2")
        object.__setattr__(self, "b", int(self.b))

    def pgf(self, z):
        return np.asarray(z, dtype=float) ** self.b

    @property
    def mean(self) -> float:
        return float(self.b)

    def spec_string(self) -> str:
        return f"kind=bary b={self.b}"


@dataclass(frozen=True)
class LinearFractional(Mechanism):
    """phi(z) = q0 + p0 q z / (1 - p z) with q0 = 1 - p0, q = 1 - p."""

    p0: float
    p: float
    kind = "linear-fractional"

    def __post_init__(self):
        for name in ("p0", "p"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise MechanismError(f"{name} must lie in (0, 1)")

    def lf_ab(self) -> tuple[float, float]:
        """The (a, b) parametrization with p0 = 1/(a+b), p = b/(a+b)."""
        return (1.0 - self.p) / self.p0, self.p / self.p0

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        return (1.0 - self.p0) + self.p0 * (1.0 - self.p) * z / (1.0 - self.p * z)

    @property
    def mean(self) -> float:
        return self.p0 / (1.0 - self.p)

    def spec_string(self) -> str:
        return f"kind=linear-fractional p0={self.p0!r} p={self.p!r}"


@dataclass(frozen=True)
class Geometric(LinearFractional):
    """phi(z) = q / (1 - p z): P(M = m) = q p^m, mean p/q."""

    p: float
    p0: float = field(init=False, repr=False, compare=False)
    kind = "geometric"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise MechanismError("p must lie in (0, 1)")
        object.__setattr__(self, "p0", self.p)

    def lf_ab(self) -> tuple[float, float]:
        return (1.0 - self.p) / self.p, 1.0

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        return (1.0 - self.p) / (1.0 - self.p * z)

    def spec_string(self) -> str:
        return f"kind=geometric p={self.p!r}"


@dataclass(frozen=True)
class Sibuya(Mechanism):
    """phi(z) = 1 - lam (1 - z)**alpha, infinite mean."""

    alpha: float
    lam: float = 1.0
    kind = "sibuya"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise MechanismError("alpha must lie in (0, 1)")
        if not 0.0 < self.lam <= 1.0:
            raise MechanismError("lambda must lie in (0, 1]")

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        return 1.0 - self.lam * (1.0 - z) ** self.alpha

    @property
    def mean(self) -> float:
        return math.inf

    def pmf(self, m: np.ndarray | int) -> np.ndarray:
        m = np.asarray(m)
        return _sibuya_pmf(self.alpha, self.lam, m)

    def spec_string(self) -> str:
        return f"kind=sibuya alpha={self.alpha!r} lambda={self.lam!r}"


@dataclass(frozen=True)
class Generic(Mechanism):
    """Finite offspring table: ``coeffs[m] = P(M = m)``.

    Laws with infinite support must be truncated by the caller; the missing
    mass is kept in ``mass_deficit`` and may not exceed ``deficit_tol``.
    """

    coeffs: tuple[float, ...]
    deficit_tol: float = field(default=NORMALIZATION_TOL, compare=False)
    kind = "generic"

    def __post_init__(self):
        c = tuple(float(x) for x in self.coeffs)
        if len(c) < 1:
            raise MechanismError("coeffs must not be empty")
        if any(x < 0 or not math.isfinite(x) for x in c):
            raise MechanismError("coeffs must be finite and non-negative")
        total = math.fsum(c)
        if abs(total - 1.0) > self.deficit_tol:
            raise MechanismError(
                f"coeffs must sum to 1 (got {total!r}, tolerance {self.deficit_tol:g})"
            )
        if len(c) > 1 and c[1] == 1.0:
            raise MechanismError("the degenerate law P(M = 1) = 1 is excluded")
        object.__setattr__(self, "coeffs", c)

    @property
    def mass_deficit(self) -> float:
        return 1.0 - math.fsum(self.coeffs)

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        return np.polynomial.polynomial.polyval(z, self.coeffs)

    @property
    def mean(self) -> float:
        return math.fsum(m * c for m, c in enumerate(self.coeffs))

    def spec_string(self) -> str:
        return "kind=generic coeffs=" + ",".join(repr(c) for c in self.coeffs)


def parse_mechanism(text: str) -> Mechanism:
    """Parse ``kind=<name> key=value ...`` into a mechanism.

    >>> parse_mechanism("kind=sibuya alpha=0.5 lambda=1.0")
    Sibuya(alpha=0.5, lam=1.0)
    """
    fields: dict[str, str] = {}
    for token in text.replace(";", " ").split():
        if "=" not in token:
            raise MechanismError(f"malformed token {token!r}, expected key=value")
        key, value = token.split("=", 1)
        key = key.strip().lower()
        if key in fields:
            raise MechanismError(f"duplicate key {key!r}")
        fields[key] = value.strip()
    kind = fields.pop("kind", None)
    if kind is None:
        raise MechanismError("mechanism spec needs kind=...")

    def take(name: str, conv=float):
        if name not in fields:
            raise MechanismError(f"kind={kind} requires {name}=")
        raw = fields.pop(name)
        try:
            return conv(raw)
        except ValueError as exc:
            raise MechanismError(f"bad value for {name}: {raw!r}") from exc

    kind = kind.lower().replace("_", "-")
    if kind in ("bary", "b-ary"):
        b = take("b")
        if b != int(b):
            raise MechanismError("b must be an integer")
        mech: Mechanism = BAry(int(b))
    elif kind == "geometric":
        mech = Geometric(take("p"))
    elif kind in ("linear-fractional", "linfrac", "lf"):
        mech = LinearFractional(take("p0"), take("p"))
    elif kind == "sibuya":
        alpha = take("alpha")
        lam = take("lambda") if "lambda" in fields else take("lam") if "lam" in fields else 1.0
        mech = Sibuya(alpha, lam)
    elif kind == "generic":
        coeffs = take("coeffs", lambda s: tuple(float(x) for x in s.split(",") if x))
        tol = take("tol") if "tol" in fields else NORMALIZATION_TOL
        mech = Generic(coeffs, deficit_tol=tol)
    else:
        raise MechanismError(f"unknown mechanism kind {kind!r}")
    if fields:
        raise MechanismError(f"unexpected keys for kind={kind}: {sorted(fields)}")
    return mech


# --------------------------------------------------------------------------
# truncated power series


@dataclass(frozen=True)
class PgfSeries:
    """Power series ``sum_n coeffs[n] z^n`` truncated at ``trunc_order``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a non-empty 1-d array")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_coeffs(cls, coeffs: Sequence[float], trunc_order: int) -> "PgfSeries":
        c = np.zeros(trunc_order + 1)
        src = np.asarray(coeffs, dtype=float)[: trunc_order + 1]
        c[: src.size] = src
        return cls(c)

    @classmethod
    def identity(cls, trunc_order: int) -> "PgfSeries":
        c = np.zeros(trunc_order + 1)
        if trunc_order >= 1:
            c[1] = 1.0
        return cls(c)

    @property
    def trunc_order(self) -> int:
        return self.coeffs.size - 1

    def __add__(self, other: "PgfSeries") -> "PgfSeries":
        n = min(self.trunc_order, other.trunc_order)
        return PgfSeries(self.coeffs[: n + 1] + other.coeffs[: n + 1])

    def __mul__(self, other):
        if isinstance(other, PgfSeries):
            n = min(self.trunc_order, other.trunc_order)
            return PgfSeries(np.convolve(self.coeffs[: n + 1], other.coeffs[: n + 1])[: n + 1])
        return PgfSeries(self.coeffs * float(other))

    __rmul__ = __mul__

    def power(self, n: int) -> "PgfSeries":
        if n < 0:
            raise ValueError("negative power")
        result = PgfSeries.from_coeffs([1.0], self.trunc_order)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def derivative(self) -> "PgfSeries":
        if self.trunc_order == 0:
            raise ValueError("cannot differentiate a constant-order series")
        k = np.arange(1, self.coeffs.size)
        return PgfSeries(self.coeffs[1:] * k)

    def compose(self, inner: "PgfSeries") -> "PgfSeries":
        """``self(inner(z))`` by Horner's scheme in the series ring.

        Requires ``inner`` to have a constant term in [0, 1] (pgf argument);
        the result keeps the smaller of the two truncation orders.
        """
        n = min(self.trunc_order, inner.trunc_order)
        inner = PgfSeries(inner.coeffs[: n + 1])
        last = int(np.flatnonzero(self.coeffs)[-1]) if np.any(self.coeffs) else 0
        acc = PgfSeries.from_coeffs([self.coeffs[last]], n)
        for c in self.coeffs[last - 1 :: -1] if last > 0 else ():
            acc = acc * inner
            acc = PgfSeries(acc.coeffs + np.eye(1, n + 1, 0).ravel() * c)
        return acc

    def __call__(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), self.coeffs)

    def mass(self) -> float:
        return float(math.fsum(self.coeffs))


# --------------------------------------------------------------------------
# iterated pgfs


def _lf_params(a: float, b: float, t: int) -> tuple[float, float, float, float]:
    """Normalized linear-fractional iterate parameters.

    phi_t(z) = (1 - c_inv) + g z / (1 - delta z) with c_inv = 1/C_t,
    g = a_t / C_t**2, delta = D_t / C_t.  Returns (c_inv, g, delta, 1 - delta).
    """
    if t == 0:
        return 1.0, 1.0, 0.0, 1.0
    if a == 1.0:
        bt = b * t
        c = 1.0 + bt
        return 1.0 / c, 1.0 / c**2, bt / c, 1.0 / c
    if a < 1.0:
        at = a**t
        bt = b * (-math.expm1(t * math.log(a))) / (1.0 - a)
        c = at + bt
        return 1.0 / c, at / c**2, bt / c, at / c
    # a > 1: scale by a^-t to keep everything finite
    s = math.exp(-t * math.log(a))
    bp = b * (-math.expm1(-t * math.log(a))) / (a - 1.0)
    return s / (1.0 + bp), s / (1.0 + bp) ** 2, bp / (1.0 + bp), 1.0 / (1.0 + bp)


def sibuya_params(alpha: float, lam: float, t: int) -> tuple[float, float]:
    """(alpha_t, lambda_t) with phi_t(z) = 1 - lambda_t (1 - z)**alpha_t."""
    at = alpha**t
    if lam == 1.0:
        return at, 1.0
    expo = -math.expm1(t * math.log(alpha)) / (1.0 - alpha)
    return at, math.exp(expo * math.log(lam))


def _sibuya_pmf(alpha: float, lam: float, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    out = np.empty(n.shape)
    zero = n == 0
    out[zero] = 1.0 - lam
    pos = ~zero
    nn = n[pos]
    # alpha lam [1-alpha]_{n-1} / n!
    out[pos] = np.exp(
        math.log(alpha * lam) + gammaln(nn - alpha) - gammaln(1.0 - alpha) - gammaln(nn + 1.0)
    )
    return out


def _rising(x: float, n: int) -> float:
    r = 1.0
    for m in range(n):
        r *= x + m
    return r


def _falling(x, n: int):
    r = np.ones_like(np.asarray(x, dtype=float))
    for m in range(n):
        r = r * (x - m)
    return r


@dataclass(frozen=True)
class IteratedPgf:
    """The iterate ``phi_t`` of a mechanism.

    ``series`` is set only for generic mechanisms; every other family keeps
    its closed form.  ``mass_deficit`` is the probability mass lost to
    truncation (zero for closed forms).
    """

    mechanism: Mechanism
    t: int
    trunc_order: int = DEFAULT_TRUNC_ORDER
    series: PgfSeries | None = None
    mass_deficit: float = 0.0

    @property
    def representation(self) -> str:
        return "series" if self.series is not None else "closed"

    # geometric / linear-fractional parameters --------------------------------

    def _lf(self) -> tuple[float, float, float, float]:
        a, b = self.mechanism.lf_ab()
        return _lf_params(a, b, self.t)

    @property
    def lf_alpha(self) -> float:
        """alpha_t = A_t / C_t = P(N_t(1) = 0)."""
        return 1.0 - self._lf()[0]

    @property
    def lf_delta(self) -> float:
        return self._lf()[2]

    @property
    def lf_gap(self) -> float:
        """alpha_t (delta_t - beta_t), computed without cancellation."""
        return self._lf()[1]

    @property
    def lf_beta(self) -> float:
        c_inv, g, d, _ = self._lf()
        alpha = 1.0 - c_inv
        if alpha == 0.0:
            return 0.0
        return d - g / alpha

    @property
    def sibuya(self) -> tuple[float, float]:
        m = self.mechanism
        return sibuya_params(m.alpha, m.lam, self.t)

    # evaluation -------------------------------------------------------------

    def _s(self, z, s):
        return 1.0 - z if s is None else np.asarray(s, dtype=float)

    @property
    def singular_scale(self) -> float:
        """Width of the boundary layer of phi_t near z = 1 (1 if none)."""
        m = self.mechanism
        if self.t == 0 or self.series is not None:
            return 1.0
        if isinstance(m, LinearFractional):
            return self._lf()[3]
        if isinstance(m, BAry):
            return float(m.b) ** (-self.t)
        return 1.0

    def value(self, z, s=None):
        """phi_t(z), vectorized.  ``s`` optionally supplies 1 - z exactly."""
        z = np.asarray(z, dtype=float)
        m = self.mechanism
        if self.t == 0:
            return z.copy() if z.ndim else float(z)
        if self.series is not None:
            return self.series(z)
        if isinstance(m, BAry):
            if s is None:
                return z ** (m.b**self.t)
            with np.errstate(divide="ignore"):
                return np.exp(m.b**self.t * np.log1p(-self._s(z, s)))
        if isinstance(m, LinearFractional):
            c_inv, g, d, omd = self._lf()
            return (1.0 - c_inv) + g * z / (omd + d * self._s(z, s))
        if isinstance(m, Sibuya):
            at, lt = self.sibuya
            return 1.0 - lt * self._s(z, s) ** at
        raise TypeError(type(m))

    def complement(self, z, s=None):
        """1 - phi_t(z), accurate when phi_t(z) is close to 1."""
        z = np.asarray(z, dtype=float)
        m = self.mechanism
        sz = self._s(z, s)
        if self.t == 0:
            return sz.copy() if sz.ndim else float(sz)
        if isinstance(m, LinearFractional):
            c_inv, _, d, omd = self._lf()
            return c_inv * sz / (omd + d * sz)
        if isinstance(m, Sibuya):
            at, lt = self.sibuya
            return lt * sz**at
        if isinstance(m, BAry):
            with np.errstate(divide="ignore"):
                return -np.expm1(m.b**self.t * np.log1p(-sz))
        return 1.0 - self.value(z)

    def taylor(self, z, order: int, s=None) -> np.ndarray:
        """Taylor coefficients ``phi_t^{(r)}(z) / r!`` for r = 0..order.

        Returns an array of shape ``(order + 1,) + z.shape``.  ``s`` optionally
        supplies 1 - z to full relative precision.
        """
        z = np.asarray(z, dtype=float)
        out = np.zeros((order + 1,) + z.shape)
        m = self.mechanism
        out[0] = self.value(z, s)
        if order == 0:
            return out
        if self.t == 0:
            out[1] = 1.0
            return out
        if self.series is not None:
            if order > self.trunc_order:
                raise TruncationError(
                    f"derivative order {order} exceeds truncation order {self.trunc_order}"
                )
            c = np.trim_zeros(self.series.coeffs, "b")
            ser = PgfSeries(c if c.size else np.zeros(1))
            fact = 1.0
            for r in range(1, order + 1):
                if ser.trunc_order == 0:
                    break
                ser = ser.derivative()
                fact *= r
                out[r] = ser(z) / fact
            return out
        if isinstance(m, BAry):
            big_b = m.b**self.t
            with np.errstate(divide="ignore"):
                log_z = None if s is None else np.log1p(-self._s(z, s))
            for r in range(1, order + 1):
                if r > big_b:
                    break
                coef = math.comb(big_b, r)
                with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
                    if log_z is None:
                        out[r] = coef * z ** (big_b - r)
                    else:
                        out[r] = coef * np.exp((big_b - r) * log_z)
            return out
        if isinstance(m, LinearFractional):
            _, g, d, omd = self._lf()
            base = 1.0 / (omd + d * self._s(z, s))
            for r in range(1, order + 1):
                out[r] = g * d ** (r - 1) * base ** (r + 1)
            return out
        if isinstance(m, Sibuya):
            at, lt = self.sibuya
            sz = self._s(z, s)
            if np.any(sz <= 0.0):
                raise SingularityError("Sibuya derivatives are infinite at z = 1")
            for r in range(1, order + 1):
                # lam_t alpha_t [1-alpha_t]_{r-1} / r!  (1-z)^(alpha_t - r)
                c = lt * at * _rising(1.0 - at, r - 1) / math.factorial(r)
                out[r] = c * sz ** (at - r)
            return out
        raise TypeError(type(m))

    def derivative(self, z, order: int):
        """phi_t^{(order)}(z)."""
        tay = self.taylor(z, order)
        return tay[order] * math.factorial(order)

    def pmf(self, n_max: int, n0: int = 1) -> np.ndarray:
        """P(N_t(n0) = n) for n = 0..n_max."""
        if n_max < 0:
            raise ValueError("n_max must be >= 0")
        m = self.mechanism
        if self.series is not None:
            if n_max > self.trunc_order - 5:
                raise TruncationError(
                    f"P(N_t = {n_max}) is within 5 of the truncation order {self.trunc_order}"
                )
            base = self.series.coeffs[: n_max + 1].copy()
        else:
            base = self._pmf_closed(n_max)
        if n0 == 1:
            return base
        return PgfSeries(base).power(n0).coeffs.copy()

    def _pmf_closed(self, n_max: int) -> np.ndarray:
        m = self.mechanism
        n = np.arange(n_max + 1)
        if self.t == 0:
            return (n == 1).astype(float)
        if isinstance(m, BAry):
            return (n == m.b**self.t).astype(float)
        if isinstance(m, LinearFractional):
            c_inv, g, d, _ = self._lf()
            out = np.empty(n_max + 1)
            out[0] = 1.0 - c_inv
            if n_max >= 1:
                out[1:] = g * d ** (n[1:] - 1.0)
            return out
        if isinstance(m, Sibuya):
            at, lt = self.sibuya
            return _sibuya_pmf(at, lt, n)
        raise TypeError(type(m))


def iterate(mech: Mechanism, t: int, trunc_order: int = DEFAULT_TRUNC_ORDER) -> IteratedPgf:
    """Return ``phi_t``, the t-fold composition of the mechanism's pgf."""
    if int(t) != t or t < 0:
        raise DomainError("t must be a non-negative integer")
    t = int(t)
    if trunc_order < 1:
        raise DomainError("trunc_order must be positive")
    if not isinstance(mech, Generic):
        return IteratedPgf(mech, t, trunc_order)
    phi = PgfSeries.from_coeffs(mech.coeffs, trunc_order)
    acc = PgfSeries.identity(trunc_order)
    for _ in range(t):
        acc = phi.compose(acc)
    deficit = max(0.0, 1.0 - acc.mass())
    if deficit > 1e-9:
        warnings.warn(
            f"series for phi_{t} lost {deficit:.3g} probability mass to truncation "
            f"at order {trunc_order}",
            TruncationWarning,
            stacklevel=2,
        )
    return IteratedPgf(mech, t, trunc_order, acc, deficit)


def _check_unit(z):
    arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("z must lie in [0, 1]")
    return arr


def pgf_eval(mech: Mechanism, z):
    """phi(z) for z in [0, 1]."""
    arr = _check_unit(z)
    out = mech.pgf(arr)
    out = np.where(arr == 1.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def derivative_eval(ip: IteratedPgf, order: int, z):
    """phi_t^{(order)}(z)."""
    arr = _check_unit(z)
    if order < 0:
        raise DomainError("order must be >= 0")
    out = ip.derivative(arr, order) if order else ip.value(arr)
    return float(out) if np.ndim(out) == 0 else out


def popsize_pmf(ip: IteratedPgf, n0: int, n: int) -> float:
    """P(N_t(n0) = n) = [z^n] phi_t(z)^n0."""
    if n0 < 1 or n < 0:
        raise DomainError("need n0 >= 1 and n >= 0")
    return float(ip.pmf(n, n0)[n])


def survival_prob(ip: IteratedPgf, n0: int, i: int) -> float:
    """P(N_t(n0) >= i) by coefficient summation."""
    if i <= 0:
        return 1.0
    return float(max(0.0, 1.0 - math.fsum(ip.pmf(i - 1, n0))))


def extinction_prob(ip: IteratedPgf, n0: int) -> float:
    """P(N_t(n0) = 0) = phi_t(0)**n0."""
    return float(ip.value(0.0)) ** n0


MechanismLike = Union[Mechanism, str]


def as_mechanism(m: MechanismLike) -> Mechanism:
    return parse_mechanism(m) if isinstance(m, str) else m
