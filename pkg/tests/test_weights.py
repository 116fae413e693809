from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tests.strategies import polys
from ucplab.polysym import PolySymbol, differentiate
from ucplab.weights import (
    bent, convexification_factor, convexify, general, gradient, hessian, linear, paraboloid,
    parse_weight, sup_on_box,
)

X = PolySymbol.x


def test_linear_gradient_constant():
    g = gradient(linear([0, 0, 1]))
    assert g == (PolySymbol.zero(3), PolySymbol.zero(3), PolySymbol.constant(3, 1))


def test_paraboloid_gradient_minus_branch():
    w = paraboloid(3, -1, Fraction(1, 2))
    assert w.gradient == (2 * X(3, 0), 2 * X(3, 1), PolySymbol.constant(3, -1))
    # phi0 = -x_n + |x'|^2 + c^2
    assert w.phi == -X(3, 2) + X(3, 0) ** 2 + X(3, 1) ** 2 + Fraction(1, 4)


def test_convexified_linear_gradient():
    w = convexify(linear([0, 1]), Fraction(1, 10), Fraction(1, 2))
    assert w.phi == X(2, 1) + Fraction(1, 10) * X(2, 1) ** 2
    assert w.gradient[1] == 1 + Fraction(1, 5) * X(2, 1)
    assert w.gradient[1] == differentiate(w.phi, "x", 1)
    assert w.hessian[1][1] == PolySymbol.constant(2, Fraction(1, 5))
    assert w.hessian[0][0].is_zero() and w.hessian[0][1].is_zero()


def test_hessians():
    z = PolySymbol.zero(2)
    assert all(e == z for row in hessian(linear([1, 2])) for e in row)
    hp = hessian(paraboloid(3, 1, Fraction(1, 2)))
    for j in range(3):
        for k in range(3):
            want = 2 if (j == k and j < 2) else 0
            assert hp[j][k] == PolySymbol.constant(3, want)


def test_convexify_preconditions():
    w = linear([0, 1])
    for h, eps in [(0, Fraction(1, 2)), (Fraction(1, 2), Fraction(1, 4)), (Fraction(1, 2), 1)]:
        with pytest.raises(ValueError):
            convexify(w, h, eps)


@pytest.mark.parametrize("sign", [1, -1])
def test_convexified_paraboloid_chain_rule(sign):
    w = paraboloid(2, sign, Fraction(1, 2))
    psi = convexify(w, Fraction(1, 100), Fraction(1, 10))
    assert psi.phi.degree() == 4
    fp = convexification_factor(psi)
    for j in range(2):
        assert psi.gradient[j] == fp * w.gradient[j]


@settings(max_examples=40, deadline=None)
@given(polys(dim=2, max_terms=4, max_exp=2, x_only=True), st.integers(1, 9), st.integers(2, 10))
def test_chain_rule_identity(phi, hn, en):
    h, eps = Fraction(hn, 100), Fraction(en, 11)
    if not h < eps:
        return
    w = general(phi)
    psi = convexify(w, h, eps)
    for j in range(2):
        assert psi.gradient[j] == (1 + (h / eps) * phi) * w.gradient[j]
        assert psi.gradient[j] == differentiate(psi.phi, "x", j)
    hs = psi.hessian
    assert hs[0][1] == hs[1][0]


def test_sup_examples():
    assert sup_on_box(linear([0, 0, 1]), [(0, 1)] * 3).value == pytest.approx(1.0)
    phi0 = paraboloid(2, -1, Fraction(1, 2))
    s = sup_on_box(phi0, [(-1, 1), (-1, 1)])
    # separable: max(-x2) + max(x1^2) + 1/4
    assert s.value == pytest.approx(9 / 4, rel=1e-12)
    assert abs(s.argmax[0]) == 1 and s.argmax[1] == -1
    zero = general(PolySymbol.zero(2))
    assert sup_on_box(zero, [(-1, 1), (0, 2)]).value == 0
    with pytest.raises(ValueError):
        sup_on_box(linear([1]), [(1, 0)])


@settings(max_examples=30, deadline=None)
@given(polys(dim=2, max_terms=3, max_exp=3, x_only=True), st.floats(0, 0.5), st.floats(0, 0.5))
def test_sup_monotone_under_inclusion(phi, s1, s2):
    w = general(phi)
    inner = [(-0.5 + s1 / 2, 0.5 - s2 / 2), (-0.4, 0.4)]
    outer = [(-1, 1), (-1, 1)]
    assert sup_on_box(w, inner).value <= sup_on_box(w, outer).value + 1e-6


def test_bent_defaults():
    phi0 = -X(2, 1)
    w = bent(phi0, shift=Fraction(1, 4))
    assert w.phi == -X(2, 1) + X(2, 0) ** 2 - Fraction(1, 4)


@pytest.mark.parametrize("text,dim", [
    ("linear rho=(0,0,1)", 3),
    ("parab sign=- c=1/2", 2),
    ("parab sign=+ c=1/3", 3),
    ('poly "x2^2 + 1/3*x1"', 2),
    ("linear rho=(0,1) convexify h=1/100 eps=1/10", 2),
])
def test_weight_spec_round_trip(text, dim):
    w = parse_weight(text, dim)
    assert parse_weight(w.describe(), dim) == w


def test_weight_spec_errors():
    for bad in ["", "cone r=1", "linear rho=()", "parab sign=? c=1", "poly", "linear rho=(1) convexify h=1/2"]:
        with pytest.raises(ValueError):
            parse_weight(bad, 1)
    with pytest.raises(ValueError):
        parse_weight("linear rho=(0,1)", 3)
