"""Fixed-step IMEX-GLM stepping.

External stages are stored as ``(r, m)`` arrays; row ``i`` is block ``i`` of the
stacked vector, so ``(U kron I) y`` is simply ``U @ y``.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .problems import AdditiveProblem, ComponentProblem, ProblemKind
from .tableau import GlmTableau, ImexGlmPair, Mode


class JacobianRefresh(str, enum.Enum):
    EVERY_ITERATION = "every"
    FROZEN = "frozen"


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_iters: int = 25
    jacobian_refresh: JacobianRefresh = JacobianRefresh.EVERY_ITERATION

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        object.__setattr__(self, "jacobian_refresh", JacobianRefresh(self.jacobian_refresh))


class NewtonError(RuntimeError):
    def __init__(self, msg, residual=float("nan"), iterations=0, stage=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations
        self.stage = stage


class NewtonDivergence(NewtonError):
    pass


class SingularStageJacobian(NewtonError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, msg, n=None, t=None):
        super().__init__(msg)
        self.n = n
        self.t = t


class StepCountError(ValueError):
    """(t_final - t0) / h is not a positive integer."""


@dataclass(frozen=True, eq=False)
class ExternalState:
    """External stages after ``n`` steps.

    Additive states use ``y``; component (and DAE) states use ``x`` and ``z``.
    ``t_comp`` is the running compensation term of the time sum.
    """

    mode: Mode
    t: float
    h: float
    n: int = 0
    y: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    t_comp: float = 0.0
    # Newton work of the step that produced this state (summed over stage solves)
    newton_iterations: int = 0
    stage_solves: int = 0

    @property
    def y_ext(self) -> np.ndarray:
        return self.y.ravel()

    @property
    def x_ext(self) -> np.ndarray:
        return self.x.ravel()

    @property
    def z_ext(self) -> np.ndarray:
        return self.z.ravel()

    def advanced(self, **arrays) -> "ExternalState":
        # compensated accumulation of t
        yk = self.h - self.t_comp
        tn = self.t + yk
        comp = (tn - self.t) - yk
        return replace(self, t=tn, t_comp=comp, n=self.n + 1, **arrays)


@dataclass
class StageValues:
    Y: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    newton_iterations: int = 0
    residual_norm: float = 0.0
    stage_solves: int = 0
    total_iterations: int = 0
    # stage derivatives consumed by the external-stage update
    FE: Optional[np.ndarray] = None
    FI: Optional[np.ndarray] = None


# -- Newton kernel -----------------------------------------------------------------

def _factor(J, stage):
    J = np.atleast_2d(J)
    if not np.all(np.isfinite(J)):
        raise SingularStageJacobian(f"non-finite Jacobian in stage block {stage}", stage=stage)
    with warnings.catch_warnings():
        # singularity is detected from the pivots below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(J, check_finite=False)
    dg = np.abs(np.diag(lu))
    if dg.min() <= np.finfo(float).eps * J.shape[0] * max(dg.max(), np.finfo(float).tiny):
        raise SingularStageJacobian(f"singular Jacobian in stage block {stage}", stage=stage)
    return lu, piv


def newton_solve(residual: Callable, jacobian: Callable, d0: np.ndarray, cfg: NewtonConfig,
                 scale: Callable, stage=None, preconditioned: bool = False):
    """Newton iteration on ``residual(d) = 0``.

    At least one correction is always applied.  The convergence measure is the
    max norm of the residual, or of the Newton correction ``J^{-1} R`` when
    ``preconditioned`` is set.  Returns ``(d, iterations, measure)``.
    """
    d = np.array(d0, dtype=float)
    lu = None
    history = []
    it = 0
    frozen = cfg.jacobian_refresh is JacobianRefresh.FROZEN
    while True:
        R = residual(d)
        if not np.all(np.isfinite(R)):
            raise NewtonError(f"non-finite residual in stage block {stage}", iterations=it, stage=stage)
        tol = cfg.abs_tol + cfg.rel_tol * scale(d)
        if preconditioned:
            if lu is None or not frozen:
                lu = _factor(jacobian(d), stage)
            delta = lu_solve(lu, R, check_finite=False)
            meas = float(np.max(np.abs(delta)))
        else:
            meas = float(np.max(np.abs(R)))
        if it >= 1 and meas <= tol:
            return d, it, meas
        history.append(meas)
        if len(history) >= 4 and history[-1] > history[-2] > history[-3] > history[-4]:
            raise NewtonDivergence(f"Newton diverging in stage block {stage}", meas, it, stage)
        if it >= cfg.max_iters:
            raise NewtonError(f"Newton did not converge in {cfg.max_iters} iterations "
                              f"(stage block {stage})", meas, it, stage)
        if not preconditioned:
            if lu is None or not frozen:
                lu = _factor(jacobian(d), stage)
            delta = lu_solve(lu, R, check_finite=False)
        d = d - delta
        it += 1


def _is_lower(A) -> bool:
    return not np.any(np.triu(A, 1) != 0.0)


def _maxabs(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


# -- additive mode -----------------------------------------------------------------

def _additive_stages(AE, AI, c, fE, fI, jacI, Ue, t, h, cfg):
    s, m = Ue.shape
    FE = np.zeros((s, m))
    FI = np.zeros((s, m))
    Y = np.zeros((s, m))
    eye = np.eye(m)
    iters = 0
    meas_max = 0.0
    solves = 0
    total = 0
    if _is_lower(AI):
        for i in range(s):
            ti = t + c[i] * h
            base = Ue[i] + h * (AE[i, :i] @ FE[:i]) + h * (AI[i, :i] @ FI[:i])
            aii = AI[i, i]
            if aii == 0.0:
                Y[i] = base
                FI[i] = fI(ti, Y[i])
            else:
                ha = h * aii

                def res(d, base=base, ha=ha, ti=ti):
                    return d - ha * fI(ti, base + d)

                def jac(d, base=base, ha=ha, ti=ti):
                    return eye - ha * jacI(ti, base + d)

                d, it, meas = newton_solve(res, jac, Ue[i] - base, cfg,
                                           lambda d, base=base: _maxabs(base + d),
                                           stage=i, preconditioned=True)
                Y[i] = base + d
                FI[i] = d / ha
                total += it
                iters = max(iters, it)
                meas_max = max(meas_max, meas)
                solves += 1
            FE[i] = fE(ti, Y[i])
    else:
        ts = t + c * h

        def evalE(Yv):
            return np.array([fE(ts[j], Yv[j]) for j in range(s)])

        def evalI(Yv):
            return np.array([fI(ts[j], Yv[j]) for j in range(s)])

        def res(v):
            Yv = v.reshape(s, m)
            return (Yv - h * (AE @ evalE(Yv)) - h * (AI @ evalI(Yv)) - Ue).ravel()

        def jac(v):
            Yv = v.reshape(s, m)
            J = np.eye(s * m)
            for j in range(s):
                Jj = jacI(ts[j], Yv[j])
                for i in range(s):
                    J[i * m:(i + 1) * m, j * m:(j + 1) * m] -= h * AI[i, j] * Jj
            return J

        v, it, meas = newton_solve(res, jac, Ue.ravel(), cfg, _maxabs, stage="all",
                                   preconditioned=True)
        Y = v.reshape(s, m)
        FE = evalE(Y)
        FI = evalI(Y)
        iters, meas_max, solves, total = it, meas, 1, it
    return StageValues(Y=Y, newton_iterations=iters, residual_norm=meas_max,
                       stage_solves=solves, total_iterations=total, FE=FE, FI=FI)


def solve_stages_newton(pair: ImexGlmPair, problem, state: ExternalState,
                        cfg: NewtonConfig | None = None) -> StageValues:
    """Solve the implicit stage equations of one step, starting from ``U ext``."""
    cfg = cfg or NewtonConfig()
    e, i = pair.explicit, pair.implicit
    if isinstance(problem, AdditiveProblem):
        Ue = e.U @ state.y
        return _additive_stages(e.A, i.A, pair.c, problem.f_explicit, problem.f_implicit,
                                problem.jac_implicit, Ue, state.t, state.h, cfg)
    if problem.kind is ProblemKind.DAE:
        raise ValueError("eps = 0: use dae.dae_step for the limit scheme")
    return _component_stages(pair, problem, state, cfg)


def imex_step_additive(pair: ImexGlmPair, problem: AdditiveProblem, state: ExternalState,
                       cfg: NewtonConfig | None = None) -> ExternalState:
    if pair.mode is not Mode.ADDITIVE:
        raise ValueError("imex_step_additive needs an additive pair")
    sv = solve_stages_newton(pair, problem, state, cfg)
    h = state.h
    e, i = pair.explicit, pair.implicit
    y = h * (e.B @ sv.FE) + h * (i.B @ sv.FI) + e.V @ state.y
    return state.advanced(y=y, newton_iterations=sv.total_iterations,
                          stage_solves=sv.stage_solves)


# -- component mode ----------------------------------------------------------------

def _component_stages(pair, problem: ComponentProblem, state, cfg):
    e, im = pair.explicit, pair.implicit
    h, t, eps = state.h, state.t, problem.eps
    c = pair.c
    s = pair.s
    Ux = e.U @ state.x
    Uz = im.U @ state.z
    mx, mz = Ux.shape[1], Uz.shape[1]
    AE, AI = e.A, im.A
    X = np.zeros((s, mx))
    Z = np.zeros((s, mz))
    Fx = np.zeros((s, mx))
    Kz = np.zeros((s, mz))  # h z' at the stages, i.e. (h/eps) g
    ratio = eps / h
    eye = np.eye(mz)
    iters, meas_max, solves, total = 0, 0.0, 0, 0
    if _is_lower(AI):
        for i in range(s):
            ti = t + c[i] * h
            X[i] = Ux[i] + h * (AE[i, :i] @ Fx[:i])
            base = Uz[i] + AI[i, :i] @ Kz[:i]
            aii = AI[i, i]
            if aii == 0.0:
                Z[i] = base
                Kz[i] = problem.g(ti, X[i], Z[i]) / ratio
            else:
                Xi = X[i]

                def res(d, base=base, aii=aii, Xi=Xi, ti=ti):
                    return ratio * d - aii * problem.g(ti, Xi, base + d)

                def jac(d, base=base, aii=aii, Xi=Xi, ti=ti):
                    return ratio * eye - aii * problem.g_z(ti, Xi, base + d)

                d, it, meas = newton_solve(res, jac, Uz[i] - base, cfg,
                                           lambda d, base=base: _maxabs(base + d), stage=i)
                Z[i] = base + d
                Kz[i] = d / aii
                total += it
                iters = max(iters, it)
                meas_max = max(meas_max, meas)
                solves += 1
            Fx[i] = problem.f(ti, X[i], Z[i])
    else:
        ts = t + c * h

        def xstages(Zv):
            Xv = np.zeros((s, mx))
            F = np.zeros((s, mx))
            for i in range(s):
                Xv[i] = Ux[i] + h * (AE[i, :i] @ F[:i])
                F[i] = problem.f(ts[i], Xv[i], Zv[i])
            return Xv, F

        def res(v):
            Zv = v.reshape(s, mz)
            Xv, _ = xstages(Zv)
            G = np.array([problem.g(ts[j], Xv[j], Zv[j]) for j in range(s)])
            return (ratio * (Zv - Uz) - AI @ G).ravel()

        def jac(v):
            Zv = v.reshape(s, mz)
            Xv, _ = xstages(Zv)
            J = ratio * np.eye(s * mz)
            for j in range(s):
                Gz = problem.g_z(ts[j], Xv[j], Zv[j])
                for i in range(s):
                    J[i * mz:(i + 1) * mz, j * mz:(j + 1) * mz] -= AI[i, j] * Gz
            return J

        v, it, meas = newton_solve(res, jac, Uz.ravel(), cfg, _maxabs, stage="all")
        Z = v.reshape(s, mz)
        X, Fx = xstages(Z)
        Kz = np.linalg.solve(AI, Z - Uz)
        iters, meas_max, solves, total = it, meas, 1, it
    return StageValues(X=X, Z=Z, newton_iterations=iters, residual_norm=meas_max,
                       stage_solves=solves, total_iterations=total, FE=Fx, FI=Kz)


def imex_step_component(pair: ImexGlmPair, problem: ComponentProblem, state: ExternalState,
                        cfg: NewtonConfig | None = None) -> ExternalState:
    """One step on ``x' = f``, ``z' = g / eps``.

    Additive pairs are accepted too (their shared U, V are used for both parts).
    """
    if not problem.eps > 0:
        raise ValueError("imex_step_component needs eps > 0; use dae.dae_step")
    sv = solve_stages_newton(pair, problem, state, cfg)
    e, im = pair.explicit, pair.implicit
    x = state.h * (e.B @ sv.FE) + e.V @ state.x
    z = im.B @ sv.FI + im.V @ state.z
    return state.advanced(x=x, z=z, newton_iterations=sv.total_iterations,
                          stage_solves=sv.stage_solves)


# -- single-method step ------------------------------------------------------------

def glm_step(t: GlmTableau, f: Callable, jac: Optional[Callable], y_ext: np.ndarray,
             time: float, h: float, cfg: NewtonConfig | None = None) -> np.ndarray:
    """One step of a single GLM on ``y' = f(t, y)`` (no splitting).

    Diagonally implicit stages are solved with the same Newton kernel as the
    IMEX stepper.
    """
    cfg = cfg or NewtonConfig()
    A, c = t.A, t.c
    s = t.s
    Ue = t.U @ y_ext
    m = Ue.shape[1]
    F = np.zeros((s, m))
    eye = np.eye(m)
    if not _is_lower(A):
        raise ValueError("glm_step supports explicit and diagonally implicit methods")
    for i in range(s):
        ti = time + c[i] * h
        base = Ue[i] + h * (A[i, :i] @ F[:i])
        aii = A[i, i]
        if aii == 0.0:
            F[i] = f(ti, base)
        else:
            ha = h * aii

            def res(d, base=base, ha=ha, ti=ti):
                return d - ha * f(ti, base + d)

            def jj(d, base=base, ha=ha, ti=ti):
                return eye - ha * jac(ti, base + d)

            d, _, _ = newton_solve(res, jj, Ue[i] - base, cfg,
                                   lambda d, base=base: _maxabs(base + d), stage=i,
                                   preconditioned=True)
            F[i] = d / ha
    return h * (t.B @ F) + t.V @ y_ext


# -- trajectories ------------------------------------------------------------------

def step(pair: ImexGlmPair, problem, state: ExternalState,
         cfg: NewtonConfig | None = None) -> ExternalState:
    if isinstance(problem, AdditiveProblem):
        return imex_step_additive(pair, problem, state, cfg)
    if problem.kind is ProblemKind.DAE:
        from .dae import dae_step
        return dae_step(pair, problem, state, cfg)
    return imex_step_component(pair, problem, state, cfg)


def step_count(t0: float, t_final: float, h: float) -> int:
    ratio = (t_final - t0) / h
    n = round(ratio)
    if not math.isfinite(ratio) or abs(ratio - n) > 1e-9 or n < 1:
        raise StepCountError(f"(t_final - t0)/h = {ratio!r} is not a positive integer")
    return int(n)


def integrate(pair: ImexGlmPair, problem, state0: ExternalState, t_final: float,
              cfg: NewtonConfig | None = None, stride: int = 1) -> list[ExternalState]:
    """Take fixed steps from ``state0`` to ``t_final``.

    Every ``stride``-th state is recorded, plus the initial and final ones.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    from .dae import DaeError
    n_steps = step_count(state0.t, t_final, state0.h)
    cfg = cfg or NewtonConfig()
    traj = [state0]
    st = state0
    for k in range(1, n_steps + 1):
        try:
            st = step(pair, problem, st, cfg)
        except (NewtonError, DaeError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise IntegrationError(f"step {k} failed at t = {st.t!r}: {exc}", k, st.t) from exc
        arrays = [a for a in (st.y, st.x, st.z) if a is not None]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise IntegrationError(f"non-finite state at step {k}, t = {st.t!r}", k, st.t)
        if k % stride == 0 or k == n_steps:
            traj.append(st)
    return traj
