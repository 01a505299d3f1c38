from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from imexglm.dae import DaeError, dae_step, reduced_rhs, solve_algebraic
from imexglm.problems import ComponentProblem, kaps, linear_dae
from imexglm.starting import start
from imexglm.stepper import ExternalState, glm_step, step
from imexglm.tableau import Mode, stability_matrix_at_infinity


def dae(f, g, gx, gz, x0, z0):
    return ComponentProblem("t", f, g, gx, gz, x0, z0, eps=0.0)


def test_linear_constraint_one_iteration():
    calls = []

    def g(t, x, z):
        calls.append(1)
        return z + x

    P = dae(lambda t, x, z: z, g, lambda t, x, z: np.eye(1), lambda t, x, z: np.eye(1), [1.0], [-1.0])
    z = solve_algebraic(P, [3.0], [0.0])
    assert z[0] == -3.0
    # one residual to take the Newton step, one to confirm it
    assert len(calls) == 2


def test_explicit_quadratic_constraint():
    P = dae(lambda t, x, z: z, lambda t, x, z: z - x * x,
            lambda t, x, z: np.diag(-2 * x), lambda t, x, z: np.eye(1), [1.0], [1.0])
    z = solve_algebraic(P, [2.0], [0.0])
    assert z[0] == pytest.approx(4.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-3.0, 3.0))
def test_kaps_constraint_vs_bisection(x):
    P = kaps(0.0)
    z = solve_algebraic(P, [x], [1.0])
    oracle = brentq(lambda zz: float(P.g(0.0, np.array([x]), np.array([zz]))[0]), -1.0, 10.0,
                    xtol=1e-15, rtol=1e-15)
    assert z[0] == pytest.approx(oracle, abs=1e-12 * (1 + abs(oracle)))
    assert abs(P.g(0.0, np.array([x]), z)[0]) <= 1e-12 * (1 + abs(z[0]))


def test_singular_constraint_jacobian():
    P = dae(lambda t, x, z: z, lambda t, x, z: z * z - x,
            lambda t, x, z: -np.eye(1), lambda t, x, z: np.diag(2 * z), [1.0], [1.0])
    with pytest.raises(DaeError, match="singular"):
        solve_algebraic(P, [1.0], [0.0])


def test_constraint_newton_failure():
    # no real root: the iteration wanders until the cap
    P = dae(lambda t, x, z: z, lambda t, x, z: z * z + 1.0,
            lambda t, x, z: np.zeros((1, 1)), lambda t, x, z: np.diag(2 * z), [1.0], [1.0])
    with pytest.raises(DaeError):
        solve_algebraic(P, [1.0], [0.3], max_iters=20)


def test_reduced_rhs_cases():
    P = linear_dae()
    assert reduced_rhs(P, [2.0])[0] == pytest.approx(-2.0, abs=1e-14)
    Q = dae(lambda t, x, z: -3.0 * x, lambda t, x, z: z - x,
            lambda t, x, z: -np.eye(1), lambda t, x, z: np.eye(1), [1.0], [1.0])
    assert reduced_rhs(Q, [2.0])[0] == -6.0


def test_reduced_rhs_linear_system(rng):
    A, B, C = rng.standard_normal((3, 2, 2))
    D = rng.standard_normal((2, 2)) - 4 * np.eye(2)
    P = dae(lambda t, x, z: A @ x + B @ z, lambda t, x, z: C @ x + D @ z,
            lambda t, x, z: C, lambda t, x, z: D, np.zeros(2), np.zeros(2))
    x = rng.standard_normal(2)
    want = (A - B @ np.linalg.solve(D, C)) @ x
    np.testing.assert_allclose(reduced_rhs(P, x), want, rtol=1e-12, atol=1e-13)


def test_linear_dae_single_step(euler):
    # s = 1, A^E = 0: the stage is X = x_ext, then Z = -X and x_new = (1 - h) x_ext
    h, x0 = 0.1, 2.0
    P = linear_dae(x0=x0)
    st0 = ExternalState(Mode.COMPONENT, t=0.0, h=h, x=np.array([[x0]]), z=np.array([[-x0]]))
    st1 = dae_step(euler, P, st0)
    assert st1.x[0, 0] == pytest.approx((1 - h) * x0, abs=1e-15)
    # M^I(inf) = 0 for the Euler pair, so z_new is exactly the stage value Z = -X
    assert st1.z[0, 0] == pytest.approx(-x0, abs=1e-15)


def test_decoupled_constraint_matches_explicit_glm(p2):
    P = dae(lambda t, x, z: -x + 0.0 * z, lambda t, x, z: z.copy(),
            lambda t, x, z: np.zeros((1, 1)), lambda t, x, z: np.eye(1), [1.0], [0.0])
    h = 0.1
    x = np.array([[1.0], [0.9]])
    z = np.array([[0.3], [-0.2]])
    st1 = dae_step(p2, P, ExternalState(Mode.COMPONENT, t=0.0, h=h, x=x, z=z))
    want_x = glm_step(p2.explicit, lambda t, y: -y, None, x, 0.0, h)
    np.testing.assert_allclose(st1.x, want_x, rtol=1e-14, atol=1e-15)
    Minf = stability_matrix_at_infinity(p2.implicit)
    np.testing.assert_allclose(st1.z, Minf @ z, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("name", ["p2", "minf_neg1", "minf_pos1"])
def test_constraint_holds_at_stages(name, request):
    pair = request.getfixturevalue(name)
    P = kaps(0.0)
    st0 = start(pair, P, 0.05)
    seen = []

    def g(t, x, z):
        r = P.g(t, x, z)
        seen.append((x.copy(), z.copy()))
        return r

    Q = replace(P, g=g)
    s = st0
    for _ in range(5):
        seen.clear()
        s = dae_step(pair, Q, s)
        best = {}
        for x, z in seen:
            r = abs(P.g(0.0, x, z)[0])
            best[x[0]] = min(best.get(x[0], np.inf), r)
        # every stage X ends with a satisfied constraint
        assert max(best.values()) <= 1e-10


def test_stage_failure_reports_index(p2):
    # g_z vanishes at t = 1, which only the second stage (c = 1) reaches with h = 1
    P = dae(lambda t, x, z: z, lambda t, x, z: (1.0 - t) * z - x,
            lambda t, x, z: -np.eye(1), lambda t, x, z: np.array([[1.0 - t]]), [1.0], [1.0])
    st0 = ExternalState(Mode.COMPONENT, t=0.0, h=1.0, x=np.array([[1.0], [1.0]]),
                        z=np.array([[1.0], [1.0]]))
    with pytest.raises(DaeError) as info:
        dae_step(p2, P, st0)
    assert info.value.stage == 1


def test_requires_invertible_implicit_matrix(fwd_euler):
    P = linear_dae()
    st0 = ExternalState(Mode.COMPONENT, t=0.0, h=0.1, x=np.array([[1.0]]), z=np.array([[-1.0]]))
    with pytest.raises(ValueError):
        dae_step(fwd_euler, P, st0)


@pytest.mark.parametrize("name", ["p2", "minf_neg1", "minf_pos1"])
def test_agrees_with_tiny_eps_component_run(name, request):
    pair = request.getfixturevalue(name)
    h = 0.1
    spp, lim = kaps(1e-10), kaps(0.0)
    a, b = start(pair, spp, h), start(pair, lim, h)
    for _ in range(10):
        a = step(pair, spp, a)
        b = dae_step(pair, lim, b)
    assert np.max(np.abs(a.x - b.x)) <= 1e-6
