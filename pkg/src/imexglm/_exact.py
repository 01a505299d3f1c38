"""Exact rational arithmetic for tableau certification.

Matrices are tuples of tuples of :class:`fractions.Fraction`; polynomials are
lists of coefficients in increasing degree.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

Matrix = tuple[tuple[Fraction, ...], ...]
Poly = list[Fraction]


def to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, int):
        return Fraction(value)
    # floats are taken at their exact binary value
    return Fraction(value)


def matrix(rows) -> Matrix:
    return tuple(tuple(to_fraction(v) for v in row) for row in rows)


def vector(vals) -> tuple[Fraction, ...]:
    return tuple(to_fraction(v) for v in vals)


def shape(a: Matrix) -> tuple[int, int]:
    return len(a), (len(a[0]) if a else 0)


def identity(n: int) -> Matrix:
    return tuple(tuple(Fraction(int(i == j)) for j in range(n)) for i in range(n))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    n, k = shape(a)
    m = shape(b)[1]
    return tuple(
        tuple(sum((a[i][l] * b[l][j] for l in range(k)), Fraction(0)) for j in range(m))
        for i in range(n)
    )


def matvec(a: Matrix, x: Sequence[Fraction]) -> tuple[Fraction, ...]:
    return tuple(sum((ai * xi for ai, xi in zip(row, x)), Fraction(0)) for row in a)


def sub(a: Matrix, b: Matrix) -> Matrix:
    return tuple(tuple(x - y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def column(a: Matrix, j: int) -> tuple[Fraction, ...]:
    return tuple(row[j] for row in a)


def inverse(a: Matrix) -> Matrix:
    """Gauss-Jordan inverse; raises ZeroDivisionError if ``a`` is singular."""
    n = len(a)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(a)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[col])]
    return tuple(tuple(row[n:]) for row in aug)


def charpoly(a: Matrix) -> Poly:
    """Characteristic polynomial det(xI - a) by Faddeev-LeVerrier.

    Returns coefficients [c_0, ..., c_n] with c_n = 1.
    """
    n = len(a)
    coeffs = [Fraction(0)] * (n + 1)
    coeffs[n] = Fraction(1)
    m = tuple(tuple(Fraction(0) for _ in range(n)) for _ in range(n))
    eye = identity(n)
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{n-k+1} I
        am = matmul(a, m)
        m = tuple(
            tuple(am[i][j] + coeffs[n - k + 1] * eye[i][j] for j in range(n)) for i in range(n)
        )
        am = matmul(a, m)
        tr = sum((am[i][i] for i in range(n)), Fraction(0))
        coeffs[n - k] = -tr / k
    return coeffs


# -- polynomial helpers ------------------------------------------------------

def _trim(p: Poly) -> Poly:
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p


def degree(p: Poly) -> int:
    p = _trim(p)
    if len(p) == 1 and p[0] == 0:
        return -1
    return len(p) - 1


def derivative(p: Poly) -> Poly:
    if len(p) <= 1:
        return [Fraction(0)]
    return [k * p[k] for k in range(1, len(p))]


def polyrem(a: Poly, b: Poly) -> Poly:
    a = _trim(a)
    b = _trim(b)
    db = degree(b)
    if db < 0:
        raise ZeroDivisionError("polynomial division by zero")
    a = list(a)
    while degree(a) >= db:
        da = degree(a)
        f = a[da] / b[db]
        for i in range(db + 1):
            a[da - db + i] -= f * b[i]
        a = _trim(a)
        if degree(a) < 0:
            break
    return _trim(a)


def polygcd(a: Poly, b: Poly) -> Poly:
    a, b = _trim(a), _trim(b)
    while degree(b) >= 0:
        a, b = b, polyrem(a, b)
    lead = a[degree(a)]
    return [v / lead for v in a]


def polyquo(a: Poly, b: Poly) -> Poly:
    a = list(_trim(a))
    b = _trim(b)
    db = degree(b)
    q = [Fraction(0)] * max(degree(a) - db + 1, 1)
    while degree(a) >= db and degree(a) >= 0:
        da = degree(a)
        f = a[da] / b[db]
        q[da - db] = f
        for i in range(db + 1):
            a[da - db + i] -= f * b[i]
        a = _trim(a)
    return _trim(q)


def polyval(p: Poly, x: Fraction) -> Fraction:
    acc = Fraction(0)
    for coef in reversed(p):
        acc = acc * x + coef
    return acc


def squarefree(p: Poly) -> Poly:
    g = polygcd(p, derivative(p))
    if degree(g) <= 0:
        return _trim(p)
    return polyquo(p, g)


def sturm_sequence(p: Poly) -> list[Poly]:
    seq = [_trim(p), _trim(derivative(p))]
    while degree(seq[-1]) > 0:
        r = polyrem(seq[-2], seq[-1])
        if degree(r) < 0:
            break
        seq.append([-v for v in r])
    return seq


def _sign_changes(vals) -> int:
    signs = [v for v in vals if v != 0]
    return sum(1 for a, b in zip(signs, signs[1:]) if (a > 0) != (b > 0))


def _signs_at_infinity(seq, positive: bool):
    out = []
    for s in seq:
        d = degree(s)
        if d < 0:
            continue
        lead = s[d]
        if not positive and d % 2 == 1:
            lead = -lead
        out.append(lead)
    return out


def count_roots_in(p: Poly, lo: Fraction | None, hi: Fraction | None) -> int:
    """Number of distinct real roots of ``p`` in the half-open interval (lo, hi].

    ``None`` stands for -inf / +inf.  The sequence is built from the squarefree
    part so that a multiple root at an endpoint is counted correctly.
    """
    seq = sturm_sequence(squarefree(p))
    if lo is None:
        v_lo = _sign_changes(_signs_at_infinity(seq, positive=False))
    else:
        v_lo = _sign_changes([polyval(s, lo) for s in seq])
    if hi is None:
        v_hi = _sign_changes(_signs_at_infinity(seq, positive=True))
    else:
        v_hi = _sign_changes([polyval(s, hi) for s in seq])
    return v_lo - v_hi


def all_roots_real_positive(p: Poly) -> bool:
    """True iff every root of ``p`` is real and strictly positive."""
    sf = squarefree(p)
    d = degree(sf)
    if d <= 0:
        return True
    if polyval(sf, Fraction(0)) == 0:
        return False
    return count_roots_in(sf, Fraction(0), None) == d


def all_roots_in_unit_disk(p: Poly) -> bool:
    """Schur-Cohn test: every root of the real polynomial ``p`` has modulus < 1."""
    p = _trim(p)
    while degree(p) > 0:
        n = degree(p)
        a0, an = p[0], p[n]
        if abs(a0) >= abs(an):
            return False
        rev = list(reversed(p))
        t = [an * x - a0 * y for x, y in zip(p, rev)]
        # constant term vanishes by construction; drop it
        p = _trim(t[1:])
    return degree(p) == 0
