"""The eps -> 0 limit of the component IMEX-GLM for index-1 DAEs.

    X_i     = h sum_{j<i} aE_ij f(X_j, Z_j) + (U^E x)_i
    0       = g(X_i, Z_i)
    x_new   = h B^E f(X, Z) + V^E x
    z_new   = B^I A^I^{-1} Z + M^I(inf) z
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .problems import ComponentProblem
from .stepper import ExternalState, NewtonConfig, _is_lower
from .tableau import ImexGlmPair, stability_matrix_at_infinity


class DaeError(RuntimeError):
    def __init__(self, msg, stage=None):
        super().__init__(msg)
        self.stage = stage


def solve_algebraic(problem: ComponentProblem, x, z_guess, t: float = 0.0,
                    tol: float = 1e-12, max_iters: int = 50, min_sv: float = 1e-8) -> np.ndarray:
    """Newton solve of ``g(x, z) = 0`` for z, to ``|g| <= tol (1 + |z|)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.array(np.atleast_1d(z_guess), dtype=float)
    for _ in range(max_iters + 1):
        gv = np.asarray(problem.g(t, x, z), dtype=float)
        if not np.all(np.isfinite(gv)):
            raise DaeError("non-finite constraint residual")
        if np.max(np.abs(gv)) <= tol * (1.0 + np.max(np.abs(z))):
            return z
        Gz = np.atleast_2d(problem.g_z(t, x, z))
        sv = np.linalg.svd(Gz, compute_uv=False)
        if sv[-1] < min_sv:
            raise DaeError(f"g_z is singular (smallest singular value {sv[-1]:.3g})")
        z = z - np.linalg.solve(Gz, gv)
    raise DaeError(f"algebraic solve did not converge in {max_iters} iterations")


def reduced_rhs(problem: ComponentProblem, x, z_guess=None, t: float = 0.0) -> np.ndarray:
    """``f(x, G(x))`` where ``g(x, G(x)) = 0``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if z_guess is None:
        z_guess = problem.z0
    z = solve_algebraic(problem, x, z_guess, t=t)
    return np.asarray(problem.f(t, x, z), dtype=float)


@lru_cache(maxsize=64)
def _limit_matrices(pair: ImexGlmPair):
    im = pair.implicit
    eigs = np.linalg.eigvals(im.A)
    if np.any(np.abs(eigs) == 0.0) or np.any(eigs.real <= 0):
        raise ValueError("the limit scheme needs A^I with eigenvalues of positive real part")
    BAinv = im.B @ np.linalg.inv(im.A)
    return BAinv, stability_matrix_at_infinity(im)


def dae_step(pair: ImexGlmPair, problem: ComponentProblem, state: ExternalState,
             cfg: NewtonConfig | None = None, stage_tol: float = 1e-10) -> ExternalState:
    e = pair.explicit
    if not _is_lower(e.A) or np.any(np.diag(e.A) != 0):
        raise ValueError("the explicit component must be strictly lower triangular")
    BAinv, Minf = _limit_matrices(pair)
    h, t = state.h, state.t
    c = pair.c
    s = pair.s
    Ux = e.U @ state.x
    Uz = pair.implicit.U @ state.z
    X = np.zeros((s, Ux.shape[1]))
    Z = np.zeros((s, Uz.shape[1]))
    F = np.zeros_like(X)
    guess = Uz[0]
    for i in range(s):
        ti = t + c[i] * h
        X[i] = Ux[i] + h * (e.A[i, :i] @ F[:i])
        try:
            Z[i] = solve_algebraic(problem, X[i], guess, t=ti)
        except DaeError as exc:
            raise DaeError(f"algebraic solve failed at stage {i}: {exc}", stage=i) from exc
        res = float(np.max(np.abs(problem.g(ti, X[i], Z[i]))))
        if res > stage_tol:
            raise DaeError(f"constraint residual {res:.3g} at stage {i}", stage=i)
        guess = Z[i]
        F[i] = problem.f(ti, X[i], Z[i])
    x = h * (e.B @ F) + e.V @ state.x
    z = BAinv @ Z + Minf @ state.z
    return state.advanced(x=x, z=z)
