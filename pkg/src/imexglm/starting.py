"""Initial external stages from the initial condition.

The Nordsieck vector is ``eta_p(h, y, t) = [y, h y', h^2 y'', ..., h^p y^(p)]``
and the external stages start as ``W eta_p``.  Additively split problems mix
the derivatives of the two right-hand sides, each weighted by its own ``W``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import AdditiveProblem, ComponentProblem, ProblemKind
from .stepper import ExternalState
from .tableau import ImexGlmPair, Mode

MAX_BOOTSTRAP_ORDER = 4
MICRO_FACTOR = 64


class StartError(ValueError):
    pass


class InconsistentInitialData(StartError):
    pass


@dataclass(frozen=True)
class DerivativeTable:
    """Scaled derivatives ``d_k`` for k = 0..p, keyed by component.

    Additive tables use keys ``"E"`` and ``"I"`` with ``d_0 = y0`` and
    ``d_k = h^k (f^E)^(k-1)`` (resp. ``f^I``); component tables use ``"x"`` and
    ``"z"`` with ``d_k = h^k x^(k)``.
    """

    entries: dict
    source: str = "exact"
    h: float = 0.0

    def __post_init__(self):
        for key, vals in self.entries.items():
            for d in vals:
                if not np.all(np.isfinite(d)):
                    raise StartError(f"non-finite derivative entry for {key}")


def nordsieck(W: np.ndarray, d: list) -> np.ndarray:
    """``(W kron I) [d_0, ..., d_p]`` as an ``(r, m)`` array."""
    out = np.outer(W[:, 0], d[0])
    for k in range(1, W.shape[1]):
        out = out + np.outer(W[:, k], d[k])
    return out


def additive_content(pair: ImexGlmPair, table: DerivativeTable) -> np.ndarray:
    dE, dI = table.entries["E"], table.entries["I"]
    WE, WI = pair.explicit.W, pair.implicit.W
    out = np.outer(WE[:, 0], dE[0])
    for k in range(1, WE.shape[1]):
        out = out + np.outer(WE[:, k], dE[k]) + np.outer(WI[:, k], dI[k])
    return out


# -- finite differences ------------------------------------------------------------

def _fd_weights(half: int, order: int) -> np.ndarray:
    """Central weights on offsets -half..half (unit spacing) for d^order/dt^order."""
    offs = np.arange(-half, half + 1, dtype=float)
    n = offs.size
    V = np.array([offs**l / math.factorial(l) for l in range(n)])
    rhs = np.zeros(n)
    rhs[order] = 1.0
    return np.linalg.solve(V, rhs)


def _rk4(rhs, t, y, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + dt / 2 * k1)
    k3 = rhs(t + dt / 2, y + dt / 2 * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _micro_samples(rhs, quantities, t0, y0, hm, half):
    """Evaluate ``quantities(t, y)`` on the RK4 micro trajectory at t0 + j hm, |j| <= half."""
    samples = {0: quantities(t0, y0)}
    for sign in (1, -1):
        y = y0
        for j in range(1, half + 1):
            with np.errstate(over="ignore", invalid="ignore"):
                y = _rk4(rhs, t0 + sign * (j - 1) * hm, y, sign * hm)
            if not np.all(np.isfinite(y)):
                raise StartError("bootstrap reference trajectory is not finite")
            samples[sign * j] = quantities(t0 + sign * j * hm, y)
    return [samples[j] for j in range(-half, half + 1)]


def _fd_derivatives(samples, hm, half, n_orders):
    """Derivatives of order 0..n_orders-1 of each tracked quantity at the centre."""
    nq = len(samples[0])
    out = [[None] * n_orders for _ in range(nq)]
    for order in range(n_orders):
        w = _fd_weights(half, order) / hm**order
        for q in range(nq):
            out[q][order] = sum(wj * s[q] for wj, s in zip(w, samples))
    return out


def bootstrap_derivatives(problem, y0, h: float, p: int, t0: float | None = None,
                          z0=None) -> DerivativeTable:
    """Estimate the derivative table from an RK4 micro trajectory (step h/64).

    Derivatives of the right-hand sides are taken by central differences on
    ``p // 2 + 2`` micro steps either side of ``t0``.  For a component problem pass ``y0 = x0`` and ``z0``; a DAE is
    bootstrapped through its reduced ODE.
    """
    if p > MAX_BOOTSTRAP_ORDER:
        raise StartError(f"bootstrap supports p <= {MAX_BOOTSTRAP_ORDER}, got {p}")
    if p < 0:
        raise StartError("p must be non-negative")
    t0 = problem.t0 if t0 is None else t0
    hm = h / MICRO_FACTOR
    half = p // 2 + 2
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))

    if isinstance(problem, AdditiveProblem):
        if p == 0:
            return DerivativeTable({"E": [y0], "I": [y0]}, "bootstrapped", h)
        fE, fI = problem.f_explicit, problem.f_implicit
        samples = _micro_samples(lambda t, y: fE(t, y) + fI(t, y),
                                 lambda t, y: (np.asarray(fE(t, y), float), np.asarray(fI(t, y), float)),
                                 t0, y0, hm, half)
        derivs = _fd_derivatives(samples, hm, half, p)
        dE = [y0] + [h ** (k + 1) * derivs[0][k] for k in range(p)]
        dI = [y0] + [h ** (k + 1) * derivs[1][k] for k in range(p)]
        return DerivativeTable({"E": dE, "I": dI}, "bootstrapped", h)

    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    if p == 0:
        return DerivativeTable({"x": [y0], "z": [z0]}, "bootstrapped", h)
    mx = y0.shape[0]
    if problem.kind is ProblemKind.DAE:
        from .dae import solve_algebraic
        guess = {"z": z0}

        def Gz(t, x):
            zz = solve_algebraic(problem, x, guess["z"], t=t)
            guess["z"] = zz
            return zz

        def rhs(t, x):
            return np.asarray(problem.f(t, x, Gz(t, x)), float)

        def quantities(t, x):
            zz = Gz(t, x)
            fx = np.asarray(problem.f(t, x, zz), float)
            zdot = -np.linalg.solve(problem.g_z(t, x, zz), problem.g_x(t, x, zz) @ fx)
            return fx, zdot

        samples = _micro_samples(rhs, quantities, t0, y0, hm, half)
    else:
        eps = problem.eps

        def rhs(t, v):
            x, z = v[:mx], v[mx:]
            return np.concatenate([problem.f(t, x, z), problem.g(t, x, z) / eps])

        def quantities(t, v):
            x, z = v[:mx], v[mx:]
            return np.asarray(problem.f(t, x, z), float), np.asarray(problem.g(t, x, z), float) / eps

        samples = _micro_samples(rhs, quantities, t0, np.concatenate([y0, z0]), hm, half)
    derivs = _fd_derivatives(samples, hm, half, p)
    dx = [y0] + [h ** (k + 1) * derivs[0][k] for k in range(p)]
    dz = [z0] + [h ** (k + 1) * derivs[1][k] for k in range(p)]
    return DerivativeTable({"x": dx, "z": dz}, "bootstrapped", h)


# -- exact tables ------------------------------------------------------------------

def additive_table(problem: AdditiveProblem, y, h, p, t) -> DerivativeTable:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dE_raw, dI_raw = problem.split_derivatives(t, y, p)
    dE = [y] + [h ** (k + 1) * np.asarray(dE_raw[k], float) for k in range(p)]
    dI = [y] + [h ** (k + 1) * np.asarray(dI_raw[k], float) for k in range(p)]
    return DerivativeTable({"E": dE, "I": dI}, "exact", h)


def component_table(problem: ComponentProblem, x, z, h, p, t) -> DerivativeTable:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    xs, zs = problem.derivatives(t, x, z, p)
    dx = [x] + [h**k * np.asarray(xs[k], float) for k in range(1, p + 1)]
    dz = [z] + [h**k * np.asarray(zs[k], float) for k in range(1, p + 1)]
    return DerivativeTable({"x": dx, "z": dz}, "exact", h)


def _first_order_table(problem: ComponentProblem, x, z, h, t) -> DerivativeTable:
    fx = np.asarray(problem.f(t, x, z), float)
    if problem.kind is ProblemKind.DAE:
        zdot = -np.linalg.solve(problem.g_z(t, x, z), problem.g_x(t, x, z) @ fx)
    else:
        zdot = np.asarray(problem.g(t, x, z), float) / problem.eps
    return DerivativeTable({"x": [x, h * fx], "z": [z, h * zdot]}, "exact", h)


def start_additive(problem: AdditiveProblem, y0, h: float, pair: ImexGlmPair,
                   t0: float | None = None, bootstrap: str | bool = "auto") -> ExternalState:
    t0 = problem.t0 if t0 is None else t0
    y0 = np.atleast_1d(np.asarray(y0 if y0 is not None else problem.y0, dtype=float))
    p = pair.p
    if problem.split_derivatives is not None and bootstrap is not True:
        table = additive_table(problem, y0, h, p, t0)
    elif bootstrap is False:
        raise StartError(f"{problem.name}: no derivative callbacks and bootstrap disabled")
    else:
        table = bootstrap_derivatives(problem, y0, h, p, t0)
    y = additive_content(pair, table)
    # the y0 block is exactly w0 kron y0
    return ExternalState(Mode.ADDITIVE, t=float(t0), h=float(h), y=y)


def start_component(problem: ComponentProblem, x0, z0, h: float, pair: ImexGlmPair,
                    t0: float | None = None, bootstrap: str | bool = "auto") -> ExternalState:
    t0 = problem.t0 if t0 is None else t0
    x0 = np.atleast_1d(np.asarray(x0 if x0 is not None else problem.x0, dtype=float))
    z0 = np.atleast_1d(np.asarray(z0 if z0 is not None else problem.z0, dtype=float))
    if problem.kind is ProblemKind.DAE:
        res = float(np.max(np.abs(problem.g(t0, x0, z0))))
        if res > 1e-10:
            raise InconsistentInitialData(f"inconsistent DAE initial data: |g(x0, z0)| = {res:.3g}")
    p = pair.p
    if problem.derivatives is not None and bootstrap is not True:
        table = component_table(problem, x0, z0, h, p, t0)
    elif p == 1 and bootstrap is not True:
        table = _first_order_table(problem, x0, z0, h, t0)
    elif bootstrap is False:
        raise StartError(f"{problem.name}: no derivative callbacks and bootstrap disabled")
    else:
        table = bootstrap_derivatives(problem, x0, h, p, t0, z0=z0)
    x = nordsieck(pair.explicit.W, table.entries["x"])
    z = nordsieck(pair.implicit.W, table.entries["z"])
    return ExternalState(Mode.COMPONENT, t=float(t0), h=float(h), x=x, z=z)


def start(pair: ImexGlmPair, problem, h: float, **kw) -> ExternalState:
    """Start from the problem's own initial data."""
    if isinstance(problem, AdditiveProblem):
        return start_additive(problem, problem.y0, h, pair, **kw)
    return start_component(problem, problem.x0, problem.z0, h, pair, **kw)
