import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from polaron_bounds.closed_form import (
    ClosedForm,
    DivergentIntegralError,
    DotMonomial,
    angular_average,
    evaluate,
    radial_integral,
)
from polaron_bounds.oracle import angular_average_mc, quadrature_radial

K0S = (0.5, 1.0, 2.0, 3.0)


def test_trivial_integral_is_k0():
    assert radial_integral(0, 0) == ClosedForm.k0_power(1)


def test_r31_structure_and_value():
    expected = ClosedForm.log() - ClosedForm.k0_power(1) + ClosedForm.k0_power(2) * Fraction(1, 2)
    assert radial_integral(3, 1) == expected
    assert evaluate(radial_integral(3, 1), 1.0) == pytest.approx(math.log(2) - 0.5, rel=1e-15)


def test_r52_against_frozen_quadrature():
    # frozen adaptive-quadrature value of int_0^1 k^3/(1+k)^2 dk
    assert evaluate(radial_integral(5, 2), 1.0) == pytest.approx(0.07944154167983593, rel=1e-12)


def test_divergent_integral_rejected():
    with pytest.raises(DivergentIntegralError):
        radial_integral(1, 2)
    with pytest.raises(DivergentIntegralError):
        quadrature_radial(0, 1, 1.0)


def test_evaluate_basics():
    assert evaluate(ClosedForm.k0_power(1), 2.0) == 2.0
    assert evaluate(ClosedForm.log(), 1.0) == pytest.approx(0.6931471805599453, rel=1e-15)


@pytest.mark.parametrize("p", range(0, 13))
def test_radial_matches_quadrature(p):
    for q in range(0, min(p, 6) + 1):
        cf = radial_integral(p, q)
        for k0 in K0S:
            ref = quadrature_radial(p, q, k0)
            assert abs(evaluate(cf, k0) - ref) <= 1e-12 * abs(ref), (p, q, k0)


def test_split_domain_additivity():
    for p, q in [(3, 1), (5, 2), (7, 3), (12, 6)]:
        whole = evaluate(radial_integral(p, q), 2.0)
        r = p - q
        from scipy.integrate import quad

        left, _ = quad(lambda k: k**r / (1 + k) ** q, 0, 1, epsabs=0, epsrel=1e-13)
        right, _ = quad(lambda k: k**r / (1 + k) ** q, 1, 2, epsabs=0, epsrel=1e-13)
        assert whole == pytest.approx(left + right, rel=1e-12)


@given(st.integers(0, 12), st.integers(0, 6))
def test_radial_vanishes_at_zero_cutoff(p, q):
    if p < q:
        return
    assert abs(evaluate(radial_integral(p, q), 0.0)) < 1e-40


@given(st.integers(0, 10), st.integers(0, 5), st.integers(0, 10), st.integers(0, 5),
       st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_closed_form_ring_is_consistent(p1, q1, p2, q2, k0):
    if p1 < q1 or p2 < q2:
        return
    a, b = radial_integral(p1, q1), radial_integral(p2, q2)
    va, vb = evaluate(a, k0), evaluate(b, k0)
    assert evaluate(a * b, k0) == pytest.approx(va * vb, rel=1e-12, abs=1e-300)
    assert evaluate(a + b, k0) == pytest.approx(va + vb, rel=1e-12)
    assert (a - a).is_zero()
    assert a * 2 == a + a


def test_terms_view_uses_k0_basis():
    t = radial_integral(3, 1).terms()
    assert t == {("const", 0, 1): 1, ("power", 1, 0): -1, ("power", 2, 0): Fraction(1, 2)}
    inv = ClosedForm.inv_power(2).terms()
    assert inv == {("invpow", 2, 0): 1}


def test_coefficients_stay_exact():
    cf = radial_integral(12, 6)
    assert all(isinstance(c, Fraction) for c in cf.coefficients.values())


# -- angular averages ----------------------------------------------------------


def test_angular_examples():
    assert angular_average(DotMonomial([("a", "b")])) == 0
    assert angular_average(DotMonomial([("a", "b"), ("a", "b")])) == Fraction(1, 3)
    assert angular_average(DotMonomial([("a", "b"), ("b", "c"), ("c", "a")])) == Fraction(1, 9)
    assert angular_average(DotMonomial({("a", "b"): 4})) == Fraction(1, 5)


def test_self_dots_are_unit():
    assert angular_average(DotMonomial([("a", "a"), ("a", "b"), ("a", "b")])) == Fraction(1, 3)


_labels = st.sampled_from("abcd")
_monomials = st.lists(st.tuples(_labels, _labels), min_size=0, max_size=6).map(DotMonomial)


@given(_monomials)
@settings(max_examples=80, deadline=None)
def test_elimination_order_does_not_matter(m):
    assert angular_average(m, "lowest") == angular_average(m, "highest")


@given(_monomials)
@settings(max_examples=60, deadline=None)
def test_average_bounded_by_one(m):
    assert abs(angular_average(m)) <= 1


MC_MONOMIALS = [
    {("a", "b"): 2},
    {("a", "b"): 4},
    {("a", "b"): 1, ("b", "c"): 1, ("c", "a"): 1},
    {("a", "b"): 2, ("b", "c"): 2},
    {("a", "b"): 2, ("c", "d"): 2, ("a", "c"): 2, ("b", "d"): 2},
    {("a", "b"): 3, ("b", "c"): 3, ("a", "c"): 1, ("c", "c"): 0},
    {("a", "b"): 6, ("a", "c"): 2},
    {("a", "b"): 1, ("b", "c"): 1, ("c", "d"): 1, ("d", "a"): 1, ("a", "c"): 2, ("b", "d"): 2},
]


@pytest.mark.parametrize("factors", MC_MONOMIALS)
def test_angular_average_agrees_with_monte_carlo(factors):
    m = DotMonomial(factors)
    est, err = angular_average_mc(m, samples=10**6, seed=11)
    exact = float(angular_average(m))
    assert abs(est - exact) <= 4 * err + 1e-12
