import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tests.strategies import points, polys
from ucplab.polysym import (
    CompiledPoly, MAX_EXPONENT, PolySymbol, add, compose_weight, differentiate, dumps, evaluate,
    is_zero, mul, parse, substitute_scaled_xi,
)
from ucplab.subellipticity import conjugated_symbol
from ucplab.weights import convexify, linear

X = PolySymbol.x
XI = PolySymbol.xi


def test_additive_inverse_is_empty():
    p = add(X(1, 0), -X(1, 0))
    assert is_zero(p) and p.terms == {}


def test_like_terms_merge():
    assert add(XI(1, 0) ** 2, XI(1, 0) ** 2) == 2 * XI(1, 0) ** 2


def test_linear_weight_summand():
    s = XI(2, 1)
    a, _ = conjugated_symbol(linear([0, 1]))
    summand = add(add(s ** 4, -6 * s ** 2), PolySymbol.constant(2, 1))
    assert a - XI(2, 0) ** 4 == summand


def test_binomial_square():
    s = XI(2, 0) ** 2 + XI(2, 1) ** 2
    assert mul(s, s) == XI(2, 0) ** 4 + 2 * XI(2, 0) ** 2 * XI(2, 1) ** 2 + XI(2, 1) ** 4


def test_mul_zero_and_monomials():
    p = X(1, 0) * 3 + XI(1, 0)
    assert is_zero(mul(PolySymbol.zero(1), p))
    assert mul(2 * X(1, 0), 3 * XI(1, 0)) == 6 * X(1, 0) * XI(1, 0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        add(X(1, 0), X(2, 0))
    with pytest.raises(ValueError):
        mul(X(1, 0), X(2, 0))


def test_large_coefficients_stay_exact():
    p = PolySymbol(1, {(0, 1): Fraction(10 ** 40, 3)})
    q = p ** 5
    assert q.terms[(0, 5)] == Fraction(10 ** 200, 243)


def test_exponent_cap():
    with pytest.raises(ValueError):
        PolySymbol(1, {(MAX_EXPONENT + 1, 0): 1})
    with pytest.raises(OverflowError):
        mul(PolySymbol(1, {(200, 0): 1}), PolySymbol(1, {(100, 0): 1}))


def test_power_rule():
    assert differentiate(XI(2, 1) ** 4, "xi", 1) == 4 * XI(2, 1) ** 3
    p = X(1, 0) + Fraction(1, 10) * X(1, 0) ** 2
    assert differentiate(p, "x", 0) == 1 + Fraction(1, 5) * X(1, 0)


def test_xi_gradient_of_linear_symbol():
    # hand derivation: d/dxi2 (xi2^4 - 6 xi2^2 + 1) = 4 xi2^3 - 12 xi2
    a, _ = conjugated_symbol(linear([0, 1]))
    assert differentiate(a, "xi", 1) == 4 * XI(2, 1) ** 3 - 12 * XI(2, 1)


def test_axis_out_of_range():
    with pytest.raises(IndexError):
        differentiate(X(2, 0), "x", 2)
    with pytest.raises((ValueError, KeyError)):
        differentiate(X(2, 0), "y", 0)


def test_evaluate_examples():
    a, b = conjugated_symbol(linear([0, 1]))
    assert evaluate(a, [0.3, -0.2, 0, 0]) == 1
    assert evaluate(b, [0.1, 0.2, 7.5, 1]) == 0
    # b = 0 forces xi2 = +-1, then a = xi1^4 - 4 = 0 gives xi1 = sqrt2
    assert abs(evaluate(a, [0, 0, math.sqrt(2), 1])) < 1e-12
    with pytest.raises(ValueError):
        evaluate(a, [0, 0, 1])


def test_substitute_scaled_xi_examples():
    s = 1 + X(1, 0)
    assert substitute_scaled_xi(XI(1, 0) ** 4, s) == s ** 4 * XI(1, 0) ** 4
    assert substitute_scaled_xi(X(1, 0), s) == X(1, 0)
    with pytest.raises(ValueError):
        substitute_scaled_xi(X(1, 0), XI(1, 0))


def test_substitute_matches_convexified_symbol():
    # with grad psi = f' grad phi, the convexified symbols satisfy a~(x, f' xi) = f'^4 a(x, xi)
    h, eps = Fraction(1, 10), Fraction(1, 2)
    w = linear([0, 1])
    fp = 1 + (h / eps) * X(2, 1)
    a, b = conjugated_symbol(w)
    at, bt = conjugated_symbol(convexify(w, h, eps))
    assert substitute_scaled_xi(bt, fp) == fp ** 4 * b
    assert substitute_scaled_xi(at, fp) == fp ** 4 * a
    rng = np.random.default_rng(1)
    for _ in range(10):
        x, xi = rng.uniform(-1, 1, 2), rng.uniform(-2, 2, 2)
        s = float(evaluate(fp, list(x) + [0, 0]))
        assert math.isclose(evaluate(substitute_scaled_xi(b, fp), list(x) + list(xi)),
                            evaluate(b, list(x) + list(s * xi)), rel_tol=1e-12, abs_tol=1e-12)


def test_compose_weight_examples():
    assert compose_weight(X(2, 1), Fraction(1, 10)) == X(2, 1) + Fraction(1, 10) * X(2, 1) ** 2
    assert is_zero(compose_weight(PolySymbol.zero(2), Fraction(1, 3)))
    phi = -X(2, 1) + X(2, 0) ** 2 + Fraction(1, 4)
    assert compose_weight(phi, Fraction(1, 7)).degree() == 4
    with pytest.raises(ValueError):
        compose_weight(XI(2, 0), 1)


def test_dumps_sorted_and_round_trips():
    p = 3 * XI(2, 1) ** 2 - Fraction(1, 2) * X(2, 0) + 7
    text = dumps(p)
    keys = [k for k, _ in p.sorted_terms()]
    assert keys == sorted(keys)
    assert parse(text, 2) == p
    assert dumps(PolySymbol.zero(2)) == "0"


# -- properties -------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(polys(), polys(), polys())
def test_ring_laws(p, q, r):
    assert p + q == q + p
    assert p * q == q * p
    assert (p + q) + r == p + (q + r)
    assert (p * q) * r == p * (q * r)
    assert p * (q + r) == p * q + p * r


@settings(max_examples=60, deadline=None)
@given(polys(), st.integers(0, 1), st.integers(0, 1))
def test_mixed_partials_commute(p, j, k):
    assert differentiate(differentiate(p, "x", j), "xi", k) == differentiate(differentiate(p, "xi", k), "x", j)


@settings(max_examples=80, deadline=None)
@given(polys(), polys(), points)
def test_evaluate_is_multiplicative(p, q, pt):
    lhs = evaluate(mul(p, q), pt)
    rhs = evaluate(p, pt) * evaluate(q, pt)
    scale = max(1.0, abs(rhs), sum(abs(float(c)) for c in p.terms.values())
                * sum(abs(float(c)) for c in q.terms.values()) * 1.5 ** 12)
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(polys())
def test_canonicalization_idempotent(p):
    again = PolySymbol(p.dim, p.terms)
    assert again == p and again.terms == p.terms
    assert all(c != 0 for c in p.terms.values())
    assert all(len(k) == 2 * p.dim for k in p.terms)
    assert parse(dumps(p), p.dim) == p


@settings(max_examples=40, deadline=None)
@given(polys(), st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=4, max_size=4))
def test_compiled_matches_evaluate(p, pt):
    comp = CompiledPoly(p)
    assert math.isclose(float(comp(np.array(pt))), evaluate(p, pt), rel_tol=1e-10, abs_tol=1e-9)
