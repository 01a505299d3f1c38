"""Convergence studies, stiffness and eps sweeps, and the error-recurrence simulator."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import kernels
from .problems import AdditiveProblem, ComponentProblem, ProblemKind
from .dae import DaeError
from .stepper import IntegrationError, NewtonConfig, NewtonError, step, step_count
from .starting import (additive_content, additive_table, component_table, nordsieck, start)
from .tableau import (GlmTableau, ImexGlmPair, effective_stage_order,
                      stability_matrix_at_infinity)

EPS = np.finfo(float).eps
FLOOR_FACTOR = 100.0


# -- order fitting -------------------------------------------------------------------

@dataclass(frozen=True)
class OrderFit:
    order: float
    n_used: int
    excluded: tuple = ()
    floor_proximity: bool = False
    degenerate: bool = False


def observed_order(errors: Sequence[float], hs: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)."""
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.shape != hs.shape:
        raise ValueError("errors and hs differ in length")
    if errors.size < 3:
        raise ValueError("need at least 3 rungs to fit an order")
    if not np.all(errors > 0) or not np.all(np.isfinite(errors)):
        raise ValueError("errors must be positive and finite")
    if not np.all(hs > 0):
        raise ValueError("step sizes must be positive")
    lx, ly = np.log(hs), np.log(errors)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def _floor_estimate(errors, hs):
    # e = C h^p + F fitted through the last three rungs of a halving ladder
    e1, e2, e3 = errors[-3:]
    d1, d2 = e1 - e2, e2 - e3
    if d2 == 0 or d1 / d2 <= 1:
        return 0.0
    return e3 - d2 / (d1 / d2 - 1.0)


def fit_order(errors: Sequence[float], hs: Sequence[float], scale: float = 1.0) -> OrderFit:
    """Fit the observed order, skipping rungs below the roundoff floor.

    Rungs with error < 100 eps * scale are excluded.  ``floor_proximity`` is
    set when rungs were excluded, or when a small positive error floor is
    detectable in the last three rungs (above rounding noise, but below 1e-6
    of the smallest error).
    """
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    floor = FLOOR_FACTOR * EPS * max(scale, 0.0)
    keep = errors >= floor
    excluded = tuple(float(h) for h in hs[~keep])
    if keep.sum() < 3:
        return OrderFit(float("nan"), int(keep.sum()), excluded, bool(excluded), degenerate=True)
    e, hk = errors[keep], hs[keep]
    order = observed_order(e, hk)
    F = _floor_estimate(e, hk)
    near = bool(excluded) or (4 * EPS * e.max() < F < 1e-6 * e.min())
    return OrderFit(order, int(keep.sum()), excluded, near)


# -- error measure -------------------------------------------------------------------

def exact_content(pair: ImexGlmPair, problem, t: float, h: float, values):
    """Nordsieck content of the exact solution at ``t`` as external-stage arrays.

    ``values`` is ``y`` (additive) or ``(x, z)`` (component).
    """
    if isinstance(problem, AdditiveProblem):
        return (additive_content(pair, additive_table(problem, values, h, pair.p, t)),)
    x, z = values
    tab = component_table(problem, x, z, h, pair.p, t)
    return (nordsieck(pair.explicit.W, tab.entries["x"]),
            nordsieck(pair.implicit.W, tab.entries["z"]))


def recover_solution(pair, problem, state, t, tol=1e-13):
    """Invert the content map on block 0: the solution value whose exact
    Nordsieck content matches the first external block of ``state``."""
    h = state.h
    if isinstance(problem, AdditiveProblem):
        target = state.y[0]
        w00 = pair.explicit.W[0, 0]

        def resid(y):
            return exact_content(pair, problem, t, h, y)[0][0] - target
        guess = target / w00
        split = None
    else:
        target = np.concatenate([state.x[0], state.z[0]])
        mx = state.x.shape[1]
        guess = np.concatenate([state.x[0] / pair.explicit.W[0, 0],
                                state.z[0] / pair.implicit.W[0, 0]])

        def resid(v):
            cx, cz = exact_content(pair, problem, t, h, (v[:mx], v[mx:]))
            return np.concatenate([cx[0], cz[0]]) - target
        split = mx
    sol = optimize.root(resid, guess, method="hybr", options={"xtol": 1e-15})
    v = sol.x
    scale = max(1.0, float(np.max(np.abs(target))))
    if not np.all(np.isfinite(v)) or np.max(np.abs(resid(v))) > tol * scale:
        raise IntegrationError(f"could not recover the solution at t = {t!r} from the "
                               f"external stages", state.n, t)
    if split is None:
        return v
    return v[:split], v[split:]


# -- convergence study -----------------------------------------------------------------

@dataclass
class Rung:
    h: float
    n_steps: int
    error_x: float
    error_z: float
    full_x: float
    full_z: float
    newton_avg: float


@dataclass
class ConvergenceReport:
    method: str
    problem: str
    ladder: list
    fit_x: OrderFit
    fit_z: Optional[OrderFit]
    theoretical_x: float
    theoretical_z: Optional[float]
    tolerance: float
    reference_kind: str
    fit_full_z: Optional[OrderFit] = None

    @property
    def fitted_x(self) -> float:
        return self.fit_x.order

    @property
    def fitted_z(self) -> Optional[float]:
        return None if self.fit_z is None else self.fit_z.order

    @property
    def degenerate(self) -> bool:
        return self.fit_x.degenerate or (self.fit_z is not None and self.fit_z.degenerate)

    def _ok(self, fit, theory):
        return (not fit.degenerate) and abs(fit.order - theory) <= self.tolerance

    @property
    def pass_x(self) -> bool:
        return self._ok(self.fit_x, self.theoretical_x)

    @property
    def pass_z(self) -> bool:
        if self.fit_z is None:
            return True
        return self._ok(self.fit_z, self.theoretical_z)

    @property
    def passed(self) -> bool:
        return self.pass_x and self.pass_z

    def to_csv(self) -> str:
        return ladder_csv(self.ladder)

    def summary(self) -> str:
        lines = [f"method {self.method}, problem {self.problem}, reference {self.reference_kind}",
                 f"{'h':>12} {'n':>6} {'error_x':>12} {'error_z':>12} {'newton':>7}"]
        for r in self.ladder:
            lines.append(f"{r.h:12.6g} {r.n_steps:6d} {r.error_x:12.4e} {r.error_z:12.4e} "
                         f"{r.newton_avg:7.2f}")
        verdict = "PASS" if self.passed else "FAIL"
        if self.fit_z is None:
            lines.append(f"fitted order y: {_fmt_order(self.fit_x)}, {verdict}")
        else:
            lines.append(f"fitted order x: {_fmt_order(self.fit_x)}, z: {_fmt_order(self.fit_z)}, "
                         f"{verdict}")
        flags = [name for name, f in (("x", self.fit_x), ("z", self.fit_z))
                 if f is not None and f.floor_proximity]
        if flags:
            lines.append("note: errors near the roundoff floor for " + ", ".join(flags))
        return "\n".join(lines)


def _fmt_order(fit: OrderFit) -> str:
    return "degenerate" if fit.degenerate else f"{fit.order:.2f}"


def csv_number(v) -> str:
    """Round-trip (17 significant digit) CSV formatting."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def ladder_csv(ladder) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["h", "error_x", "error_z", "n_steps", "newton_avg"])
    for r in ladder:
        w.writerow([csv_number(r.h), csv_number(r.error_x), csv_number(r.error_z),
                    csv_number(r.n_steps), csv_number(r.newton_avg)])
    return buf.getvalue()


def dae_z_order(pair: ImexGlmPair, tol: float = 1e-9) -> float:
    """Predicted order of the stiff external stages in the eps -> 0 limit.

    min(p, q + 1) when every eigenvalue of M^I(inf) is inside the unit disk or
    of the form exp(i pi / L); q when some other unit-modulus eigenvalue exists.
    """
    p = pair.p
    q = effective_stage_order(pair.implicit)
    eigs = np.linalg.eigvals(stability_matrix_at_infinity(pair.implicit))
    for lam in eigs:
        if abs(abs(lam) - 1.0) <= tol and not _is_pi_over_L(lam, tol):
            return float(q)
    return float(min(p, q + 1))


def _is_pi_over_L(lam, tol):
    theta = abs(np.angle(lam))
    if theta < tol:
        return False
    L = math.pi / theta
    return abs(L - round(L)) <= 1e-6 and round(L) >= 1


def theoretical_orders(pair: ImexGlmPair, problem):
    p = float(pair.p)
    if isinstance(problem, AdditiveProblem):
        return p, None
    if problem.kind is ProblemKind.DAE:
        return p, dae_z_order(pair)
    return p, p


def _threads(threads):
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get("GLM_THREADS", "1")))
    except ValueError:
        return 1


def _integrate_counting(pair, problem, h, t_final, cfg):
    st = start(pair, problem, h)
    n = step_count(st.t, t_final, h)
    iters = solves = 0
    for k in range(1, n + 1):
        try:
            st = step(pair, problem, st, cfg)
        except (NewtonError, DaeError, np.linalg.LinAlgError) as exc:
            raise IntegrationError(f"h = {h!r}: step {k} failed at t = {st.t!r}: {exc}", k, st.t) \
                from exc
        arrays = [a for a in (st.y, st.x, st.z) if a is not None]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise IntegrationError(f"h = {h!r}: non-finite state at step {k}", k, st.t)
        iters += st.newton_iterations
        solves += st.stage_solves
    return st, n, (iters / solves if solves else 0.0)


def _errors(pair, problem, final, t_final, h, ref):
    content = exact_content(pair, problem, t_final, h, ref)
    if isinstance(problem, AdditiveProblem):
        (cy,) = content
        return (float(np.max(np.abs(final.y[0] - cy[0]))), float("nan"),
                float(np.max(np.abs(final.y - cy))), float("nan"))
    cx, cz = content
    return (float(np.max(np.abs(final.x[0] - cx[0]))), float(np.max(np.abs(final.z[0] - cz[0]))),
            float(np.max(np.abs(final.x - cx))), float(np.max(np.abs(final.z - cz))))


def reference_solution(pair, problem, t_final, h_min, cfg=None, refine: int = 64):
    """Self-refined reference: run the same method at ``h_min / refine``."""
    final, _, _ = _integrate_counting(pair, problem, h_min / refine, t_final, cfg)
    return recover_solution(pair, problem, final, t_final)


def run_convergence_study(pair: ImexGlmPair, problem, h0: float, rungs: int, t_final: float,
                          cfg: NewtonConfig | None = None, reference: str = "auto",
                          tolerance: float | None = None, threads: int | None = None) -> ConvergenceReport:
    """Integrate on h_k = h0 2^-k, k = 0..rungs-1, and fit observed orders."""
    if rungs < 4:
        raise ValueError("a convergence study needs at least 4 rungs")
    cfg = cfg or NewtonConfig()
    hs = [h0 * 2.0**-k for k in range(rungs)]
    for h in hs:
        step_count(problem.t0, t_final, h)
    if reference == "auto":
        reference = "exact" if problem.exact is not None else "self"
    if reference == "exact":
        if problem.exact is None:
            raise ValueError(f"{problem.name} has no exact solution")
        ref = problem.exact(t_final)
        kind = "Exact"
    elif reference == "self":
        ref = reference_solution(pair, problem, t_final, hs[-1], cfg)
        kind = "SelfRefined"
    else:
        raise ValueError("reference must be 'auto', 'exact' or 'self'")

    def one(h):
        final, n, navg = _integrate_counting(pair, problem, h, t_final, cfg)
        ex, ez, fx, fz = _errors(pair, problem, final, t_final, h, ref)
        return Rung(h, n, ex, ez, fx, fz, navg)

    nthreads = _threads(threads)
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            ladder = list(pool.map(one, hs))
    else:
        ladder = [one(h) for h in hs]

    if isinstance(problem, AdditiveProblem):
        scale_x = float(np.max(np.abs(ref)))
        scale_z = None
    else:
        scale_x = float(np.max(np.abs(ref[0])))
        scale_z = float(np.max(np.abs(ref[1])))
    fit_x = fit_order([r.error_x for r in ladder], hs, max(scale_x, 1.0))
    fit_z = fit_full_z = None
    if scale_z is not None:
        fit_z = fit_order([r.error_z for r in ladder], hs, max(scale_z, 1.0))
        fit_full_z = fit_order([r.full_z for r in ladder], hs, max(scale_z, 1.0))
    tx, tz = theoretical_orders(pair, problem)
    if tolerance is None:
        tolerance = 0.2 if problem.linear else 0.3
    return ConvergenceReport(pair.name, problem.name, ladder, fit_x, fit_z, tx, tz, tolerance,
                             kind, fit_full_z)


# -- stiffness sweep -------------------------------------------------------------------

@dataclass
class StiffnessRow:
    stiffness: float
    h_lambda: float
    error: float
    status: str


@dataclass
class StiffnessTable:
    rows: list
    h: float
    ratio: float
    passed: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "h_lambda", "error", "status"])
        for r in self.rows:
            w.writerow([csv_number(r.stiffness), csv_number(r.h_lambda), csv_number(r.error), r.status])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'lambda':>12} {'|h lambda|':>12} {'error':>12} status"]
        for r in self.rows:
            lines.append(f"{r.stiffness:12.4g} {abs(r.h_lambda):12.4g} {r.error:12.4e} {r.status}")
        lines.append(f"max/min error ratio (|h lambda| >= 10): {self.ratio:.3f}, "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def explicit_only(pair: ImexGlmPair) -> ImexGlmPair:
    """The pair with its implicit component replaced by the explicit one."""
    e = pair.explicit
    twin = GlmTableau(e.c, e.A, e.U, e.B, e.V, e.W, e.p, e.q, explicit=False)
    return ImexGlmPair(e, twin, pair.mode, name=pair.name + "-explicit-only")


def stiffness_sweep(pair: ImexGlmPair, family: Callable[[float], AdditiveProblem],
                    values: Sequence[float], h: float, t_final: float = 1.0,
                    cfg: NewtonConfig | None = None, ratio_limit: float = 2.0,
                    threshold: float = 10.0) -> StiffnessTable:
    """Errors at fixed ``h`` across stiffness values (``family(lam)`` builds the problem).

    Errors are floored at 100 eps times the solution scale so that an error that
    happens to hit rounding level cannot inflate the ratio.
    """
    cfg = cfg or NewtonConfig()
    rows = []
    for lam in values:
        prob = family(lam)
        ref = prob.exact(t_final)
        floor = FLOOR_FACTOR * EPS * max(1.0, float(np.max(np.abs(ref))))
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                final, _, _ = _integrate_counting(pair, prob, h, t_final, cfg)
            err = _errors(pair, prob, final, t_final, h, ref)[0]
            status = "ok"
            err = max(err, floor)
        except IntegrationError:
            err, status = float("inf"), "unstable"
        rows.append(StiffnessRow(float(lam), h * float(lam), err, status))
    stiff = [r for r in rows if abs(r.h_lambda) >= threshold]
    if not stiff:
        ratio, passed = float("nan"), False
    elif any(r.status != "ok" for r in stiff):
        ratio, passed = float("inf"), False
    else:
        errs = [r.error for r in stiff]
        ratio = max(errs) / min(errs)
        passed = ratio <= ratio_limit
    return StiffnessTable(rows, h, ratio, passed)


# -- eps sweep -------------------------------------------------------------------------

class SweepPreconditionError(ValueError):
    """An (eps, h) pair outside the region eps <= D h."""


@dataclass
class EpsilonSweep:
    reports: dict
    p: int
    margin: float = 0.3

    @property
    def passed(self) -> bool:
        for rep in self.reports.values():
            for fit in (rep.fit_x, rep.fit_z):
                if fit is None:
                    continue
                if fit.degenerate or fit.order < self.p - self.margin:
                    return False
        return True

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "h", "error_x", "error_z", "n_steps", "newton_avg"])
        for eps, rep in self.reports.items():
            for r in rep.ladder:
                w.writerow([csv_number(eps), csv_number(r.h), csv_number(r.error_x), csv_number(r.error_z),
                            csv_number(r.n_steps), csv_number(r.newton_avg)])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'eps':>10} {'order x':>8} {'order z':>8}"]
        for eps, rep in self.reports.items():
            lines.append(f"{eps:10.3g} {_fmt_order(rep.fit_x):>8} {_fmt_order(rep.fit_z):>8}")
        lines.append(f"all orders >= {self.p - self.margin:.1f}: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def epsilon_sweep(pair: ImexGlmPair, family: Callable[[float], ComponentProblem],
                  eps_values: Sequence[float], h0: float, rungs: int, D: float,
                  t_final: float = 1.0, cfg: NewtonConfig | None = None,
                  margin: float = 0.3) -> EpsilonSweep:
    """Convergence study for each eps; requires eps <= D h on every rung."""
    hs = [h0 * 2.0**-k for k in range(rungs)]
    bad = [(e, h) for e in eps_values for h in hs if e > D * h]
    if bad:
        e, h = bad[0]
        raise SweepPreconditionError(f"eps = {e:g} exceeds D*h = {D * h:g} (D = {D:g}, h = {h:g}); "
                         f"the uniform estimates need eps <= D h")
    reports = {}
    for eps in eps_values:
        prob = family(eps)
        reports[float(eps)] = run_convergence_study(pair, prob, h0, rungs, t_final, cfg)
    return EpsilonSweep(reports, pair.p, margin)


# -- error recurrence --------------------------------------------------------------------

NOISE_KINDS = ("constant", "smooth", "rough")


@dataclass(frozen=True)
class RecurrenceSpec:
    M: np.ndarray
    nu: float
    noise: str = "smooth"
    T: float = 1.0
    hs: tuple = tuple(2.0**-k for k in range(4, 11))
    seed: int = 0

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise ValueError("M must be a non-empty square matrix")
        object.__setattr__(self, "M", M)
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        if len(self.hs) < 3:
            raise ValueError("need at least 3 step sizes")


@dataclass(frozen=True)
class RecurrenceResult:
    exponent: float
    predicted: float
    case: str
    hs: tuple
    norms: tuple
    bound_only: bool = False

    def matches(self, tol: float = 0.2) -> bool:
        # rough noise on a unit-modulus eigenvalue: the prediction is a worst
        # case, independent sign flips accumulate like a random walk instead
        if self.bound_only:
            return self.exponent >= self.predicted - tol
        return abs(self.exponent - self.predicted) <= tol


def classify_recurrence(M, nu: float, noise: str, tol: float = 1e-9):
    """Predicted exponent and case label for ``zeta_n = M zeta_{n-1} + delta_n``.

    Cases: (b) unit-modulus eigenvalue not of the form exp(i pi/L): nu - 1;
    (a-smooth) / (a-general) eigenvalues exp(i pi/L) with smooth or rough noise;
    (c) spectral radius below one: nu.  The worst block present decides.
    """
    eigs = np.linalg.eigvals(np.atleast_2d(M))
    unit = [lam for lam in eigs if abs(abs(lam) - 1.0) <= tol]
    if any(not _is_pi_over_L(lam, tol) for lam in unit):
        return nu - 1.0, "(b)"
    if unit:
        if noise == "rough":
            return nu - 1.0, "(a-general)"
        return float(nu), "(a-smooth)"
    return float(nu), "(c)"


def _noise(spec: RecurrenceSpec, h: float, n: int, rng):
    d = spec.M.shape[0]
    amp = h**spec.nu
    t = h * np.arange(n + 1)
    if spec.noise == "constant":
        return amp * np.ones((n + 1, d))
    if spec.noise == "smooth":
        j = np.arange(d)
        return amp * (1.0 + 0.5 * np.sin(t[:, None] + j[None, :]))
    signs = rng.choice([-1.0, 1.0], size=(n + 1, 1))
    return amp * signs * np.ones((1, d))


def simulate_error_recurrence(spec: RecurrenceSpec, use_numba: bool | None = None) -> RecurrenceResult:
    """Iterate zeta_n = M zeta_{n-1} + delta_n for n = T/h steps on each rung and
    fit the exponent of max_n |zeta_n| against h."""
    rho = float(np.max(np.abs(np.linalg.eigvals(spec.M))))
    if rho > 1.0 + 1e-12:
        raise ValueError(f"spectral radius {rho:.6g} > 1")
    norms = []
    for k, h in enumerate(spec.hs):
        n = step_count(0.0, spec.T, h)
        rng = np.random.default_rng(spec.seed + k)
        deltas = _noise(spec, h, n, rng)
        peak, _ = kernels.recurrence_norms(spec.M, deltas, use_numba)
        norms.append(peak)
    exponent = observed_order(norms, spec.hs)
    predicted, case = classify_recurrence(spec.M, spec.nu, spec.noise)
    bound_only = spec.noise == "rough" and case != "(c)"
    return RecurrenceResult(exponent, predicted, case, tuple(spec.hs), tuple(norms), bound_only)
