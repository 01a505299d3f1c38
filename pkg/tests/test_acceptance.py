"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line (shown in the terminal summary, and
printed under ``-s``) before asserting.
"""
import time

import numpy as np
import pytest

from imexglm.analysis import (RecurrenceSpec, epsilon_sweep, run_convergence_study,
                              simulate_error_recurrence, stiffness_sweep)
from imexglm.dae import dae_step
from imexglm.problems import (builtin, check_spp_wellposed, flip_sign, kaps, nonlinear_additive,
                              reference_samples, split_dahlquist)
from imexglm.starting import start
from imexglm.stepper import ExternalState, solve_stages_newton, step
from imexglm.tableau import (Mode, load_method, order_condition_residuals, shipped_methods,
                             spectral_radius, stability_matrix, stability_matrix_at_infinity,
                             validate_class_of_interest)

from conftest import ACCEPTANCE, euler_doc, make_pair

CERTIFIED = ["imex-glm-p1", "imex-glm-p2"]
LADDER = dict(h0=2.0**-4, rungs=6, t_final=1.0)  # h = 2^-4 .. 2^-9


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_tableau_certification():
    t0 = time.perf_counter()
    worst, classes = 0.0, []
    for name in CERTIFIED:
        pair = load_method(name)
        for comp in (pair.explicit, pair.implicit):
            worst = max(worst, order_condition_residuals(comp).max_required)
        classes.append(validate_class_of_interest(pair).overall)
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-12 and all(classes) and dt < 1.0,
           f"max residual {worst:.2e}, class of interest {classes}, {dt:.2f}s")


def test_criterion_02_stability_at_infinity():
    t0 = time.perf_counter()
    worst_entry = worst_rho = 0.0
    for name in shipped_methods():
        imp = load_method(name).implicit
        Mz = stability_matrix(imp, -1e8)
        Minf = stability_matrix_at_infinity(imp)
        worst_entry = max(worst_entry, float(np.max(np.abs(Mz - Minf))))
        worst_rho = max(worst_rho, abs(spectral_radius(Mz) - spectral_radius(Minf)))
    dt = time.perf_counter() - t0
    record(2, worst_entry <= 1e-6 and worst_rho <= 1e-6 and dt < 1.0,
           f"entries {worst_entry:.2e}, rho {worst_rho:.2e}, {dt:.2f}s")


def test_criterion_03_closed_form_step():
    # implicit Euler paired with explicit Euler, lam_E = 0: y1 = y0 / (1 - h lam_I)
    pair = make_pair(euler_doc())
    P = split_dahlquist(0.0, -1.0, y0=1.0)
    st0 = ExternalState(Mode.ADDITIVE, t=0.0, h=0.1, y=np.array([[1.0]]))
    y1 = step(pair, P, st0).y[0, 0]
    err = abs(y1 - 1.0 / 1.1)
    record(3, err <= 1e-14, f"|y1 - 1/1.1| = {err:.1e}")


def test_criterion_04_classical_convergence():
    t0 = time.perf_counter()
    pair = load_method("imex-glm-p2")
    rep = run_convergence_study(pair, nonlinear_additive(lam=-1e4), **LADDER)
    tab = stiffness_sweep(pair, lambda lam: split_dahlquist(-1.0, lam), [-1e2, -1e4, -1e6, -1e8], 0.01)
    dt = time.perf_counter() - t0
    ok = abs(rep.fitted_x - 2.0) <= 0.2 and tab.ratio <= 2.0 and dt < 30.0
    record(4, ok, f"fitted order {rep.fitted_x:.3f}, stiffness error ratio {tab.ratio:.3f}, {dt:.1f}s")


def test_criterion_05_newton_robustness():
    pair = load_method("imex-glm-p2")
    # eps small enough that 20 steps at h/eps = 1e6 stay on the smooth branch
    eps = 1e-8
    worst = {}
    for ratio in (1e2, 1e4, 1e6):
        h = ratio * eps
        P = builtin("vdp-spp", eps=eps)
        st = start(pair, P, h)
        w = 0
        for _ in range(20):
            w = max(w, solve_stages_newton(pair, P, st).newton_iterations)
            st = step(pair, P, st)
        worst[f"h/eps={ratio:g}"] = w
    # single step at eps = 1e-6, h = 1 from the post-transient start
    P = builtin("vdp-spp", eps=1e-6)
    one = solve_stages_newton(pair, P, start(pair, P, 1.0)).newton_iterations
    worst["eps=1e-6, h=1"] = one
    record(5, max(worst.values()) <= 10,
           "max Newton iterations " + ", ".join(f"{k}: {w}" for k, w in worst.items()))


@pytest.mark.xfail(strict=True, reason="an eigenvalue -1 of M(inf) is of the form exp(i pi / L), "
                                       "so the stiff stages keep order min(p, q+1) = 2, not 1")
def test_criterion_06_dae_orders():
    P = kaps(0.0)
    a = run_convergence_study(load_method("imex-glm-p2"), P, **LADDER)
    b = run_convergence_study(load_method("imex-glm-p2-minf-neg1"), P, **LADDER)
    ok_a = abs(a.fitted_x - 2.0) <= 0.3 and abs(a.fitted_z - 2.0) <= 0.3
    ok_b = abs(b.fitted_x - 2.0) <= 0.3 and abs(b.fitted_z - 1.0) <= 0.3
    record(6, ok_a and ok_b,
           f"p2 x {a.fitted_x:.2f} z {a.fitted_z:.2f}; M(inf) eigenvalue -1: "
           f"x {b.fitted_x:.2f} z {b.fitted_z:.2f} (criterion asks 1.0)")


def test_criterion_06_supplement_stiff_order_dichotomy():
    # not a criterion line: the observed orders follow the two cases of dae_z_order
    P = kaps(0.0)
    neg = run_convergence_study(load_method("imex-glm-p2-minf-neg1"), P, **LADDER)
    pos = run_convergence_study(load_method("imex-glm-p2-minf-pos1"), P, **LADDER)
    assert neg.theoretical_z == 2.0 and abs(neg.fitted_z - 2.0) <= 0.3
    assert abs(neg.fitted_x - 2.0) <= 0.3 and abs(pos.fitted_x - 2.0) <= 0.3
    # eigenvalue +1 (power bounded, not of the form exp(i pi / L)): order q = 1
    # in the full external stage vector
    assert pos.theoretical_z == 1.0 and abs(pos.fit_full_z.order - 1.0) <= 0.3


def test_criterion_07_dae_limit_consistency():
    pair = load_method("imex-glm-p2")
    h = 0.1
    spp, lim = kaps(1e-10), kaps(0.0)
    a, b = start(pair, spp, h), start(pair, lim, h)
    for _ in range(10):
        a = step(pair, spp, a)
        b = dae_step(pair, lim, b)
    diff = float(np.max(np.abs(a.x - b.x)))
    record(7, diff <= 1e-6, f"max |x_spp - x_dae| after 10 steps = {diff:.2e}")


def test_criterion_08_uniform_in_eps():
    t0 = time.perf_counter()
    pair = load_method("imex-glm-p2")
    sw = epsilon_sweep(pair, kaps, [1e-3, 1e-4, 1e-5, 1e-6], D=1.0, **LADDER)
    dt = time.perf_counter() - t0
    orders = [min(r.fitted_x, r.fitted_z) for r in sw.reports.values()]
    ok = min(orders) >= 1.7 and not any(r.degenerate for r in sw.reports.values()) and dt < 60.0
    record(8, ok, "min order per eps " + ", ".join(f"{o:.2f}" for o in orders) + f", {dt:.1f}s")


M3_NEG = np.array([[0.5, 1.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, -1.0]])
M3_POS = np.array([[0.5, 1.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]])
M3_IN = np.array([[0.5, 1.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, -0.9]])


def test_criterion_09_recurrence_regimes():
    nu = 2
    cases = [
        ("d=1 constant |lam|=1", [[1.0]], "constant", nu - 1),
        ("d=1 smooth lam=-1", [[-1.0]], "smooth", nu),
        ("d=1 constant rho<1", [[0.5]], "constant", nu),
        ("d=1 smooth rho<1", [[0.5]], "smooth", nu),
        ("d=1 rough rho<1", [[0.5]], "rough", nu),
        ("d=3 constant |lam|=1", M3_POS, "constant", nu - 1),
        ("d=3 smooth lam=-1", M3_NEG, "smooth", nu),
        ("d=3 constant rho<1", M3_IN, "constant", nu),
        ("d=3 smooth rho<1", M3_IN, "smooth", nu),
        ("d=3 rough rho<1", M3_IN, "rough", nu),
    ]
    bad = []
    worst = 0.0
    for label, M, noise, want in cases:
        r = simulate_error_recurrence(RecurrenceSpec(np.array(M, float), nu, noise))
        dev = abs(r.exponent - want)
        worst = max(worst, dev)
        if dev > 0.2:
            bad.append(f"{label}: {r.exponent:.2f} vs {want}")
    record(9, not bad, f"{len(cases)} regimes, max deviation {worst:.3f}" + (f"; {bad}" if bad else ""))


def test_criterion_10_wellposedness_gate():
    problems = [builtin("kaps", eps=1e-5), builtin("linear-spp", eps=1e-3), builtin("vdp-spp", eps=1e-6)]
    passed, flipped = [], []
    for P in problems:
        pts = reference_samples(P, t_final=P.params.get("window", 1.0))
        passed.append(check_spp_wellposed(P, pts))
        flipped.append(check_spp_wellposed(flip_sign(P), pts))
    ok = all(r.passed for r in passed) and not any(r.passed for r in flipped)
    detail = "max mu2(g_z) " + ", ".join(f"{P.name} {r.max_log_norm:.3g}"
                                          for P, r in zip(problems, passed))
    detail += "; flipped: " + ", ".join(f"{r.max_log_norm:.3g}" for r in flipped)
    record(10, ok, detail)
