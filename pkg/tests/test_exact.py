from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import example, given, settings
from hypothesis import strategies as st

from imexglm import _exact

small = st.integers(-6, 6)
fracs = st.builds(Fraction, st.integers(-9, 9), st.integers(1, 5))


def square(n):
    return st.lists(st.lists(fracs, min_size=n, max_size=n), min_size=n, max_size=n)


@given(st.integers(1, 4).flatmap(square))
@settings(max_examples=60, deadline=None)
def test_charpoly_matches_sympy(rows):
    a = _exact.matrix(rows)
    ours = _exact.charpoly(a)
    x = sympy.Symbol("x")
    ref = sympy.Matrix(rows).charpoly(x).all_coeffs()[::-1]
    assert [Fraction(int(sympy.fraction(c)[0]), int(sympy.fraction(c)[1])) for c in ref] == ours


@given(st.integers(1, 4).flatmap(square))
@settings(max_examples=60, deadline=None)
def test_inverse_round_trip(rows):
    a = _exact.matrix(rows)
    if sympy.Matrix(rows).det() == 0:
        with pytest.raises(ZeroDivisionError):
            _exact.inverse(a)
        return
    assert _exact.matmul(a, _exact.inverse(a)) == _exact.identity(len(rows))


def from_roots(roots):
    poly = [Fraction(1)]
    for r in roots:
        # multiply by (x - r)
        nxt = [Fraction(0)] * (len(poly) + 1)
        for i, c in enumerate(poly):
            nxt[i + 1] += c
            nxt[i] -= r * c
        poly = nxt
    return poly


@given(st.lists(fracs, min_size=1, max_size=5))
@settings(max_examples=100, deadline=None)
def test_real_positive_roots_from_known_roots(roots):
    expected = all(r > 0 for r in roots)
    assert _exact.all_roots_real_positive(from_roots(roots)) == expected


@given(st.lists(fracs, min_size=1, max_size=5))
@settings(max_examples=100, deadline=None)
def test_unit_disk_from_known_roots(roots):
    expected = all(abs(r) < 1 for r in roots)
    assert _exact.all_roots_in_unit_disk(from_roots(roots)) == expected


def test_complex_roots_are_not_real_positive():
    # x^2 - 2x + 2 has roots 1 +- i
    assert not _exact.all_roots_real_positive([Fraction(2), Fraction(-2), Fraction(1)])


@given(st.lists(small, min_size=2, max_size=6).filter(lambda c: c[-1] != 0))
@settings(max_examples=150, deadline=None)
def test_unit_disk_against_numpy_roots(coeffs):
    poly = [Fraction(c) for c in coeffs]
    radii = np.abs(np.roots(coeffs[::-1]))
    # skip polynomials with a root too close to the circle for floats to decide
    if np.any(np.abs(radii - 1.0) < 1e-6):
        return
    assert _exact.all_roots_in_unit_disk(poly) == bool(np.all(radii < 1.0))


@given(st.lists(small, min_size=2, max_size=6).filter(lambda c: c[-1] != 0))
@settings(max_examples=150, deadline=None)
@example([0, 0, 1, -1])  # double root at the lower endpoint
def test_sturm_count_against_sympy(coeffs):
    poly = [Fraction(c) for c in coeffs]
    x = sympy.Symbol("x")
    p = sympy.Poly(list(reversed(coeffs)), x)
    distinct_positive = len({r for r in sympy.real_roots(p) if r > 0})
    assert _exact.count_roots_in(poly, Fraction(0), None) == distinct_positive


def test_to_fraction_parses_strings():
    assert _exact.to_fraction("3/8") == Fraction(3, 8)
    assert _exact.to_fraction("-2") == Fraction(-2)
