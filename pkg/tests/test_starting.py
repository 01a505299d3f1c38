import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imexglm.problems import kaps, linear_dae, nonlinear_additive, split_dahlquist
from imexglm.starting import (
    InconsistentInitialData,
    StartError,
    additive_table,
    bootstrap_derivatives,
    start,
    start_additive,
    start_component,
)


def test_p1_direct_formula(p1):
    P = split_dahlquist(-1.0, -10.0, y0=2.0)
    h = 0.1
    st0 = start_additive(P, P.y0, h, p1)
    WE, WI = p1.explicit.W, p1.implicit.W
    want = (WE[:, 0] * 2.0 + WE[:, 1] * h * (-1.0 * 2.0) + WI[:, 1] * h * (-10.0 * 2.0))[:, None]
    np.testing.assert_allclose(st0.y, want, rtol=0, atol=1e-15)


def test_zero_rhs_gives_w0_y0(p2):
    P = split_dahlquist(0.0, 0.0, y0=3.0)
    st0 = start_additive(P, P.y0, 0.25, p2)
    assert np.array_equal(st0.y, np.outer(p2.explicit.W[:, 0], [3.0]))


def test_split_dahlquist_p2_closed_form(p2):
    le, li, y0, h = -1.0, -10.0, 1.5, 0.05
    lam = le + li
    P = split_dahlquist(le, li, y0=y0)
    WE, WI = p2.explicit.W, p2.implicit.W
    want = (WE[:, 0] * y0
            + WE[:, 1] * h * le * y0 + WI[:, 1] * h * li * y0
            + WE[:, 2] * h**2 * le * lam * y0 + WI[:, 2] * h**2 * li * lam * y0)
    got = start_additive(P, P.y0, h, p2).y[:, 0]
    np.testing.assert_allclose(got, want, rtol=1e-15, atol=1e-16)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_bootstrap_matches_exact_linear(p):
    P = split_dahlquist(-1.0, -2.0)
    b = bootstrap_derivatives(P, P.y0, 0.1, p)
    e = additive_table(P, P.y0, 0.1, p, 0.0)
    assert b.source == "bootstrapped"
    for key in "EI":
        assert len(b.entries[key]) == p + 1
        for x, y in zip(b.entries[key], e.entries[key]):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-8)


def test_bootstrap_p0_and_cap():
    P = split_dahlquist()
    t = bootstrap_derivatives(P, P.y0, 0.1, 0)
    assert len(t.entries["E"]) == 1 and np.array_equal(t.entries["E"][0], P.y0)
    with pytest.raises(StartError):
        bootstrap_derivatives(P, P.y0, 0.1, 5)


def test_bootstrap_zero_rhs():
    P = split_dahlquist(0.0, 0.0)
    t = bootstrap_derivatives(P, P.y0, 0.1, 3)
    for key in "EI":
        for d in t.entries[key][1:]:
            assert np.all(d == 0.0)


def test_missing_derivatives_without_bootstrap(p2):
    P = replace(split_dahlquist(), split_derivatives=None)
    with pytest.raises(StartError):
        start_additive(P, P.y0, 0.1, p2, bootstrap=False)
    # the fallback kicks in by default
    st0 = start_additive(P, P.y0, 0.1, p2)
    ref = start_additive(split_dahlquist(), P.y0, 0.1, p2)
    np.testing.assert_allclose(st0.y, ref.y, atol=1e-10)


def test_bootstrap_reference_failure(p2):
    # the RK4 micro trajectory overflows
    P = replace(split_dahlquist(-1.0, -1e100), split_derivatives=None)
    with pytest.raises(StartError):
        start_additive(P, P.y0, 1.0, p2)


def test_starting_error_slope(p2):
    # bootstrapped start vs the exact combination, on rungs above the rounding floor
    P = nonlinear_additive(lam=-5.0)
    hs = np.array([0.8, 0.4, 0.2])
    errs = []
    for h in hs:
        a = start_additive(P, P.y0, h, p2, bootstrap=True).y
        b = start_additive(P, P.y0, h, p2).y
        errs.append(np.max(np.abs(a - b)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= p2.p + 0.8


@settings(max_examples=30, deadline=None)
@given(y0=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=4),
       h=st.floats(1e-4, 1.0))
def test_y0_block_is_w0_y0(p2, y0, h):
    y0 = np.array(y0)
    P = replace(split_dahlquist(0.0, 0.0), y0=y0)
    got = start_additive(P, y0, h, p2).y
    assert np.array_equal(got, np.outer(p2.explicit.W[:, 0], y0))


def test_component_p1_uses_g_over_eps(p1):
    eps, h = 1e-3, 0.1
    P = replace(kaps(eps), derivatives=None)
    st0 = start_component(P, P.x0, P.z0, h, p1)
    zdot = (1.0 - (1.0 + 2 * eps) * 1.0) / eps
    want = p1.implicit.W[:, 0] * 1.0 + p1.implicit.W[:, 1] * h * zdot
    np.testing.assert_allclose(st0.z[:, 0], want, rtol=1e-14)
    xdot = 1.0 - 1.0 - 1.0
    np.testing.assert_allclose(st0.x[:, 0], p1.explicit.W[:, 0] + p1.explicit.W[:, 1] * h * xdot,
                               rtol=1e-14)


def test_component_constant_x(p2):
    P = replace(kaps(1e-3), f=lambda t, x, z: 0.0 * x, derivatives=None)
    st0 = start_component(P, P.x0, P.z0, 0.1, p2)
    np.testing.assert_allclose(st0.x, np.outer(p2.explicit.W[:, 0], P.x0), atol=1e-12)


def test_dae_z_derivative_identity(p1):
    # z' = -g_z^{-1} g_x f, checked against a difference quotient of the exact z
    P = replace(linear_dae(x0=1.0), derivatives=None)
    h = 0.1
    st0 = start_component(P, P.x0, P.z0, h, p1)
    d = 1e-6
    zdot_fd = (P.exact(d)[1][0] - P.exact(-d)[1][0]) / (2 * d)
    want = p1.implicit.W[:, 0] * P.z0[0] + p1.implicit.W[:, 1] * h * zdot_fd
    np.testing.assert_allclose(st0.z[:, 0], want, atol=1e-10)


def test_dae_bootstrap_through_reduced_ode(p2):
    P = linear_dae(x0=1.0)
    b = bootstrap_derivatives(P, P.x0, 0.1, 2, z0=P.z0)
    for k in range(3):
        assert b.entries["x"][k][0] == pytest.approx(0.1**k * (-1.0) ** k, abs=1e-10)
        assert b.entries["z"][k][0] == pytest.approx(-(0.1**k) * (-1.0) ** k, abs=1e-10)


def test_inconsistent_dae_data(p2):
    P = linear_dae()
    with pytest.raises(InconsistentInitialData):
        start_component(P, P.x0, P.z0 + 1e-6, 0.1, p2)
    # within tolerance is accepted
    start_component(P, P.x0, P.z0 + 1e-12, 0.1, p2)


def test_start_dispatch(p2):
    P = kaps(1e-4)
    st0 = start(p2, P, 0.1)
    assert st0.x.shape == (2, 1) and st0.z.shape == (2, 1)
    assert math.isclose(st0.t, 0.0)
