"""Weighted quadrature on (0, 1) for integrands with endpoint singularities.

Every integral has the form ``int_0^1 z^L (1-z)^R f(z) dz``. The weight
``z^L (1-z)^R`` is always absorbed into a Gauss-Jacobi rule, so ``f`` only
has to be smooth.  Adaptive refinement bisects the worst panel; panels that
touch a singular endpoint keep a Jacobi rule there, interior panels use
Gauss-Legendre with the (now smooth) weight folded into ``f``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import betaln, roots_jacobi

MAX_DEPTH = 30
MAX_PANELS = 4096


class QuadratureError(ArithmeticError):
    pass


class NonConvergenceError(QuadratureError):
    """Adaptive refinement hit the depth cap before meeting the tolerance."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (best estimate {estimate!r}, error bound {error:.3g})")
        self.estimate = estimate
        self.error = error


class NonFiniteIntegrandError(QuadratureError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    weight_exponent_left: float = 0.0
    weight_exponent_right: float = 0.0
    nodes: int = 64
    adaptive: bool = True
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.weight_exponent_left > -1 and self.weight_exponent_right > -1):
            raise ValueError("weight exponents must exceed -1")
        if self.nodes < 4:
            raise ValueError("need at least 4 nodes")
        if any(not 0.0 < b < 1.0 for b in self.breakpoints):
            raise ValueError("breakpoints must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float
    panels: int
    evaluations: int


def _key(x: float) -> float:
    return round(float(x), 14)


@lru_cache(maxsize=1024)
def _rule(left: float, right: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    # roots_jacobi uses (1-x)^a (1+x)^b on [-1, 1]; z = (1+x)/2
    x, w = roots_jacobi(nodes, right, left)
    z = 0.5 * (1.0 + x)
    w = w / 2.0 ** (left + right + 1.0)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def jacobi_rule(left_exp: float, right_exp: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on (0, 1) for the weight ``z**left_exp * (1-z)**right_exp``."""
    if not (left_exp > -1 and right_exp > -1):
        raise ValueError("exponents must exceed -1")
    if nodes < 1:
        raise ValueError("nodes must be positive")
    z, w = _rule(_key(left_exp), _key(right_exp), int(nodes))
    if not (np.all(w > 0) and np.all((z > 0) & (z < 1))):
        raise QuadratureError("node finding failed")
    return z, w


def beta_weight(left_exp: float, right_exp: float) -> float:
    """int_0^1 z^L (1-z)^R dz."""
    return math.exp(betaln(left_exp + 1.0, right_exp + 1.0))


def _panel(f, a: float, b: float, left: float, right: float, nodes: int) -> float:
    lu = left if a == 0.0 else 0.0
    ru = right if b == 1.0 else 0.0
    u, w = jacobi_rule(lu, ru, nodes)
    z = a + (b - a) * u
    vals = np.asarray(f(z), dtype=float)
    if vals.shape != z.shape:
        vals = np.broadcast_to(vals, z.shape)
    if left != 0.0 and lu == 0.0:
        vals = vals * z**left
    if right != 0.0 and ru == 0.0:
        vals = vals * (1.0 - z) ** right
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrandError(f"integrand is not finite on [{a}, {b}]")
    return float((b - a) ** (1.0 + lu + ru) * np.dot(w, vals))


def integrate_full(f: Callable[[np.ndarray], np.ndarray], spec: QuadratureSpec) -> QuadratureResult:
    """Integrate ``f`` against the weight declared in ``spec``.

    ``f`` receives an array of nodes and must return an array of values.
    """
    L, R, n = spec.weight_exponent_left, spec.weight_exponent_right, spec.nodes
    if not spec.adaptive:
        value = _panel(f, 0.0, 1.0, L, R, n)
        coarse = _panel(f, 0.0, 1.0, L, R, max(n // 2, 1))
        return QuadratureResult(value, abs(value - coarse), 1, n + max(n // 2, 1))

    evals = 0

    def make(a: float, b: float, depth: int, whole: float):
        nonlocal evals
        m = 0.5 * (a + b)
        ql = _panel(f, a, m, L, R, n)
        qr = _panel(f, m, b, L, R, n)
        evals += 2 * n
        return (ql, qr, abs(whole - ql - qr), depth)

    # heap entries: (-err, tiebreak, a, b, refined_value, depth, left, right)
    heap: list = []
    counter = 0

    def push(a, b, depth, whole_val):
        nonlocal counter
        ql, qr, err, d = make(a, b, depth, whole_val)
        heapq.heappush(heap, (-err, counter, a, b, ql + qr, d, ql, qr))
        counter += 1

    edges = [0.0, *sorted(set(spec.breakpoints)), 1.0]
    for a, b in zip(edges, edges[1:]):
        push(a, b, 0, _panel(f, a, b, L, R, n))
        evals += n
    best = None
    while True:
        total = math.fsum(h[4] for h in heap)
        err = math.fsum(-h[0] for h in heap)
        if best is None or err < best[1]:
            best = (total, err, len(heap))
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if err <= tol:
            return QuadratureResult(best[0], best[1], best[2], evals)
        neg_err, _, a, b, _, depth, ql, qr = heapq.heappop(heap)
        if depth + 1 >= MAX_DEPTH:
            raise NonConvergenceError(
                f"adaptive quadrature reached depth {MAX_DEPTH}", best[0], best[1]
            )
        if len(heap) >= MAX_PANELS:
            raise NonConvergenceError(
                f"adaptive quadrature used {MAX_PANELS} panels", best[0], best[1]
            )
        m = 0.5 * (a + b)
        push(a, m, depth + 1, ql)
        push(m, b, depth + 1, qr)


def integrate(f: Callable[[np.ndarray], np.ndarray], spec: QuadratureSpec = QuadratureSpec()) -> float:
    """Value of ``int_0^1 z^L (1-z)^R f(z) dz``; see ``integrate_full``."""
    return integrate_full(f, spec).value
