import math

import numpy as np
import pytest
from scipy import integrate as sci

from bgw_genealogy import quadrature as qd
from bgw_genealogy.quadrature import (
    NonConvergenceError,
    NonFiniteIntegrandError,
    QuadratureSpec,
    beta_weight,
    integrate,
    integrate_full,
    jacobi_rule,
)


@pytest.mark.parametrize("left,right", [(0, 0), (0, 3), (-0.5, 0), (0, -0.7), (1.5, 2.5)])
def test_rule_integrates_weight(left, right):
    z, w = jacobi_rule(left, right, 12)
    assert w.sum() == pytest.approx(beta_weight(left, right), rel=1e-13)
    assert np.all((z > 0) & (z < 1))


def test_polynomial_exactness():
    z, w = jacobi_rule(0.0, 2.0, 6)
    # int z^5 (1-z)^2 = B(6, 3)
    assert np.dot(w, z**5) == pytest.approx(math.exp(math.lgamma(6) + math.lgamma(3) - math.lgamma(9)), rel=1e-13)


def test_singular_endpoint_folded():
    spec = QuadratureSpec(weight_exponent_right=-0.7, nodes=16)
    val = integrate(lambda z: np.cos(z), spec)
    ref = sci.quad(lambda z: math.cos(z), 0, 1, weight="alg", wvar=(0, -0.7))[0]
    assert val == pytest.approx(ref, rel=1e-12)


def test_adaptive_with_breakpoints():
    # sharp layer near z = 1e-3
    f = lambda z: 1.0 / (1e-6 + (z - 1e-3) ** 2)
    res = integrate_full(f, QuadratureSpec(nodes=16, breakpoints=(1e-3,), rel_tol=1e-12))
    ref = (math.atan((1 - 1e-3) / 1e-3) + math.atan(1e-3 / 1e-3)) / 1e-3
    assert res.value == pytest.approx(ref, rel=1e-10)
    assert res.panels >= 2


def test_non_adaptive_error_estimate():
    res = integrate_full(np.exp, QuadratureSpec(nodes=8, adaptive=False))
    assert res.value == pytest.approx(math.e - 1, rel=1e-14)
    assert res.panels == 1


def test_non_convergence_reports_estimate():
    with pytest.raises(NonConvergenceError) as info:
        integrate(lambda z: np.sign(z - 1 / 3), QuadratureSpec(nodes=4, abs_tol=0.0, rel_tol=1e-300))
    assert info.value.estimate == pytest.approx(1 / 3, abs=1e-6)


def test_non_finite():
    with pytest.raises(NonFiniteIntegrandError):
        integrate(lambda z: np.full_like(z, np.nan))


@pytest.mark.parametrize("kwargs", [
    {"weight_exponent_left": -1.0}, {"nodes": 2}, {"breakpoints": (1.0,)},
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        QuadratureSpec(**kwargs)


def test_depth_cap_constant():
    assert qd.MAX_DEPTH == 30
