"""Test problems and well-posedness checks.

Two problem shapes are used throughout:

* :class:`AdditiveProblem`: ``y' = fE(t, y) + fI(t, y)`` with ``fI`` stiff.
* :class:`ComponentProblem`: ``x' = f(t, x, z)``, ``eps z' = g(t, x, z)``;
  ``eps = 0`` gives the index-1 DAE ``0 = g``.

Derivative callbacks feed the starting procedure and the error measure.  For an
additive problem ``split_derivatives(t, y, n)`` returns two lists with the
time derivatives of order ``0..n-1`` of ``fE`` and ``fI`` along the solution
through ``(t, y)``.  For a component problem ``derivatives(t, x, z, n)``
returns ``x^(k)`` and ``z^(k)`` for ``k = 0..n``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np


class ProblemKind(str, enum.Enum):
    ADDITIVE = "additive"
    COMPONENT = "component"
    DAE = "dae"


@dataclass(frozen=True, eq=False)
class StiffSplit:
    """Stiff part written as ``fI(y) = J y + r(y)`` with a nonstiff remainder."""

    J: np.ndarray
    remainder: Callable
    lipschitz_explicit: float = float("nan")
    lipschitz_implicit: float = float("nan")

    def __post_init__(self):
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        object.__setattr__(self, "J", J)
        lam, vecs = np.linalg.eig(J)
        if np.any(lam.real > 1e-12 * max(1.0, np.max(np.abs(lam)))):
            raise ValueError("stiff part has an eigenvalue with positive real part")
        if np.linalg.cond(vecs) > 1e12:
            raise ValueError("stiff part is not (numerically) diagonalizable")


@dataclass(frozen=True, eq=False)
class AdditiveProblem:
    name: str
    f_explicit: Callable
    f_implicit: Callable
    jac_implicit: Callable
    y0: np.ndarray
    t0: float = 0.0
    exact: Optional[Callable] = None
    split_derivatives: Optional[Callable] = None
    stiff_split: Optional[StiffSplit] = None
    params: dict = field(default_factory=dict)
    linear: bool = False

    kind = ProblemKind.ADDITIVE

    def __post_init__(self):
        object.__setattr__(self, "y0", np.atleast_1d(np.asarray(self.y0, dtype=float)))

    @property
    def m(self) -> int:
        return self.y0.shape[0]


@dataclass(frozen=True, eq=False)
class ComponentProblem:
    name: str
    f: Callable
    g: Callable
    g_x: Callable
    g_z: Callable
    x0: np.ndarray
    z0: np.ndarray
    eps: float
    t0: float = 0.0
    exact: Optional[Callable] = None
    derivatives: Optional[Callable] = None
    reference: Optional[Callable] = None
    params: dict = field(default_factory=dict)
    linear: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        object.__setattr__(self, "z0", np.atleast_1d(np.asarray(self.z0, dtype=float)))
        if not (self.eps >= 0.0):
            raise ValueError("eps must be non-negative")

    @property
    def kind(self) -> ProblemKind:
        return ProblemKind.DAE if self.eps == 0.0 else ProblemKind.COMPONENT

    @property
    def mx(self) -> int:
        return self.x0.shape[0]

    @property
    def mz(self) -> int:
        return self.z0.shape[0]

    def with_eps(self, eps: float) -> "ComponentProblem":
        return replace(self, eps=float(eps), params={**self.params, "eps": float(eps)})


# -- well-posedness ------------------------------------------------------------

def log_norm(J) -> float:
    """Euclidean logarithmic norm: largest eigenvalue of (J + J^T)/2."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    return float(np.max(np.linalg.eigvalsh(0.5 * (J + J.T))))


@dataclass(frozen=True)
class WellPosedReport:
    max_log_norm: float
    values: list
    passed: bool


def check_spp_wellposed(problem: ComponentProblem, sample_points, tol: float = 1e-8) -> WellPosedReport:
    """Evaluate mu_2(g_z) at ``(t, x, z)`` samples; pass iff max <= -1 + tol."""
    vals = [log_norm(problem.g_z(t, np.atleast_1d(x), np.atleast_1d(z))) for t, x, z in sample_points]
    mx = max(vals)
    return WellPosedReport(mx, vals, mx <= -1.0 + tol)


def reference_samples(problem: ComponentProblem, t_final: float = 1.0, n: int = 10):
    """Points ``(t, x, z)`` along the exact or reference trajectory."""
    ts = problem.t0 + (t_final - problem.t0) * np.arange(n) / (n - 1)
    traj = problem.exact if problem.exact is not None else problem.reference
    if traj is None:
        raise ValueError(f"{problem.name}: no exact or reference trajectory")
    out = []
    for t in ts:
        x, z = traj(float(t))
        out.append((float(t), x, z))
    return out


def flip_sign(problem: ComponentProblem) -> ComponentProblem:
    """Counterexample with ``g -> -g`` (an unstable fast subsystem)."""
    return replace(
        problem,
        name=problem.name + "-flipped",
        g=lambda t, x, z: -problem.g(t, x, z),
        g_x=lambda t, x, z: -problem.g_x(t, x, z),
        g_z=lambda t, x, z: -problem.g_z(t, x, z),
        exact=None, derivatives=None,
    )


# -- catalog -------------------------------------------------------------------

def _sin_d(t, j):
    return math.sin(t + j * math.pi / 2)


def _cos_d(t, j):
    return math.cos(t + j * math.pi / 2)


def split_dahlquist(lam_e: float = -1.0, lam_i: float = -10.0, y0: float = 1.0,
                    t0: float = 0.0) -> AdditiveProblem:
    lam = lam_e + lam_i

    def derivs(t, y, n):
        dE = [lam_e * lam**j * y for j in range(n)]
        dI = [lam_i * lam**j * y for j in range(n)]
        return dE, dI

    return AdditiveProblem(
        name="split-dahlquist",
        f_explicit=lambda t, y: lam_e * y,
        f_implicit=lambda t, y: lam_i * y,
        jac_implicit=lambda t, y: np.array([[lam_i]]),
        y0=[y0], t0=t0,
        exact=lambda t: np.array([y0 * math.exp(lam * (t - t0))]),
        split_derivatives=derivs,
        stiff_split=StiffSplit(np.array([[lam_i]]), lambda y: 0.0 * y,
                               abs(lam_e), 0.0),
        params={"lam_e": lam_e, "lam_i": lam_i, "y0": y0},
        linear=True,
    )


def nonlinear_additive(lam: float = -1e4, beta: float = 1.0, sigma: float = 1.0) -> AdditiveProblem:
    """Three-variable problem with one stiff linear direction.

    Exact solution (cos t, sin t, cos t); the stiff part ``lam (w - u)``
    vanishes on it and ``J = lam e3 (e3 - e1)^T`` has the single eigenvalue ``lam``.
    """

    def fE(t, y):
        u, v, w = y
        rho2 = u * u + v * v
        return np.array([-v * rho2 + beta * (w - u), u * rho2, u * v])

    def fI(t, y):
        u, v, w = y
        rho2 = u * u + v * v
        return np.array([0.0, 0.0, lam * (w - u) + sigma * math.sin(w - u) - v * rho2 - u * v])

    def jac(t, y):
        u, v, w = y
        cs = sigma * math.cos(w - u)
        return np.array([
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [-lam - cs - 2 * u * v - v, -(u * u + 3 * v * v) - u, lam + cs],
        ])

    def derivs(t, y, n):
        dE, dI = [], []
        for j in range(n):
            s2 = 0.5 * 2**j * _sin_d(2 * t, j)
            dE.append(np.array([-_sin_d(t, j), _cos_d(t, j), s2]))
            dI.append(np.array([0.0, 0.0, -_sin_d(t, j) - s2]))
        return dE, dI

    J = np.zeros((3, 3))
    J[2, 0], J[2, 2] = -lam, lam

    def remainder(y):
        u, v, w = y
        return np.array([0.0, 0.0, sigma * math.sin(w - u) - v * (u * u + v * v) - u * v])

    return AdditiveProblem(
        name="nonlinear-additive",
        f_explicit=fE, f_implicit=fI, jac_implicit=jac,
        y0=[1.0, 0.0, 1.0],
        exact=lambda t: np.array([math.cos(t), math.sin(t), math.cos(t)]),
        split_derivatives=derivs,
        stiff_split=StiffSplit(J, remainder, 3.0 + abs(beta), 3.0 + abs(sigma)),
        params={"lam": lam, "beta": beta, "sigma": sigma},
    )


def kaps(eps: float = 1e-5) -> ComponentProblem:
    """x' = z - x - x^2, eps z' = x^2 - (1 + 2 eps) z; exact x = e^-t, z = e^-2t."""
    eps = float(eps)

    def derivs(t, x, z, n):
        return ([(-1.0) ** k * x for k in range(n + 1)],
                [(-2.0) ** k * z for k in range(n + 1)])

    return ComponentProblem(
        name="kaps",
        f=lambda t, x, z: z - x - x * x,
        g=lambda t, x, z: x * x - (1.0 + 2.0 * eps) * z,
        g_x=lambda t, x, z: np.diag(2.0 * x),
        g_z=lambda t, x, z: np.array([[-(1.0 + 2.0 * eps)]]),
        x0=[1.0], z0=[1.0], eps=eps,
        exact=lambda t: (np.array([math.exp(-t)]), np.array([math.exp(-2 * t)])),
        derivatives=derivs,
        params={"eps": eps},
    )


def linear_spp(eps: float = 1e-3, x0: float = 1.0) -> ComponentProblem:
    """x' = -2x + z, eps z' = x - z, started on the invariant slow manifold z = phi x."""
    eps = float(eps)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    a, b, c, d = -2.0, 1.0, 1.0, -1.0
    k = 1.0 - 2.0 * eps
    phi = 2.0 / (k + math.sqrt(k * k + 4.0 * eps))
    mu = a + b * phi

    def derivs(t, x, z, n):
        return [mu**j * x for j in range(n + 1)], [mu**j * z for j in range(n + 1)]

    return ComponentProblem(
        name="linear-spp",
        f=lambda t, x, z: a * x + b * z,
        g=lambda t, x, z: c * x + d * z,
        g_x=lambda t, x, z: np.array([[c]]),
        g_z=lambda t, x, z: np.array([[d]]),
        x0=[x0], z0=[phi * x0], eps=eps,
        exact=lambda t: (np.array([x0 * math.exp(mu * t)]), np.array([phi * x0 * math.exp(mu * t)])),
        derivatives=derivs,
        params={"eps": eps, "x0": x0, "phi": phi},
        linear=True,
    )


def linear_dae(x0: float = 1.0) -> ComponentProblem:
    """x' = z, 0 = -(z + x); exact x = x0 e^-t, z = -x."""

    def derivs(t, x, z, n):
        return [(-1.0) ** k * x for k in range(n + 1)], [(-1.0) ** k * z for k in range(n + 1)]

    return ComponentProblem(
        name="linear-dae",
        f=lambda t, x, z: z.copy(),
        g=lambda t, x, z: -(z + x),
        g_x=lambda t, x, z: np.array([[-1.0]]),
        g_z=lambda t, x, z: np.array([[-1.0]]),
        x0=[x0], z0=[-x0], eps=0.0,
        exact=lambda t: (np.array([x0 * math.exp(-t)]), np.array([-x0 * math.exp(-t)])),
        derivatives=derivs,
        params={"x0": x0},
        linear=True,
    )


def vdp_spp(eps: float = 1e-6, x0: float = 2.0, window: float = 0.5) -> ComponentProblem:
    """Van der Pol in Lienard form: x' = z, eps z' = (1 - x^2) z - x.

    The initial point is moved onto the smooth slow solution by a short warm-up
    with a stiff reference integrator.  On ``t <= window`` the trajectory keeps
    ``x^2 >= 2`` so that ``g_z = 1 - x^2 <= -1``.
    """
    from scipy.integrate import solve_ivp

    eps = float(eps)
    if not eps > 0:
        raise ValueError("vdp-spp needs eps > 0")

    def g(t, x, z):
        return (1.0 - x * x) * z - x

    def rhs(t, y):
        return [y[1], ((1.0 - y[0] ** 2) * y[1] - y[0]) / eps]

    def jac(t, y):
        return [[0.0, 1.0], [(-2.0 * y[0] * y[1] - 1.0) / eps, (1.0 - y[0] ** 2) / eps]]

    def G(x):
        return x / (1.0 - x * x)

    warm = 10.0 * eps * math.log(1.0 / eps) if eps < 1.0 else 0.0
    y = np.array([x0, G(x0)])
    if warm > 0:
        sol = solve_ivp(rhs, (0.0, warm), y, method="Radau", jac=jac, rtol=1e-12, atol=1e-14)
        y = sol.y[:, -1]
    ref = solve_ivp(rhs, (0.0, window), y, method="Radau", jac=jac, rtol=1e-12, atol=1e-14,
                    dense_output=True)

    def reference(t):
        v = ref.sol(t)
        return np.array([v[0]]), np.array([v[1]])

    def derivs(t, x, z, n):
        # derivatives along the slow manifold z = G(x) (accurate to O(eps))
        xv = float(x[0])
        d = 1.0 - xv * xv
        G1 = (1.0 + xv * xv) / d**2
        G2 = 2.0 * xv * (3.0 + xv * xv) / d**3
        x1 = float(z[0])
        z1 = G1 * x1
        x2 = z1
        z2 = G2 * x1 * x1 + G1 * x2
        xs = [np.array([xv]), np.array([x1]), np.array([x2])]
        zs = [np.array([float(z[0])]), np.array([z1]), np.array([z2])]
        if n > 2:
            raise ValueError("vdp-spp derivatives only available up to order 2")
        return xs[: n + 1], zs[: n + 1]

    return ComponentProblem(
        name="vdp-spp",
        f=lambda t, x, z: z.copy(),
        g=g,
        g_x=lambda t, x, z: np.diag(-2.0 * x * z - 1.0),
        g_z=lambda t, x, z: np.diag(1.0 - x * x),
        x0=[y[0]], z0=[y[1]], eps=eps,
        derivatives=derivs, reference=reference,
        params={"eps": eps, "x0": x0, "window": window},
    )


CATALOG = {
    "split-dahlquist": split_dahlquist,
    "nonlinear-additive": nonlinear_additive,
    "kaps": kaps,
    "vdp-spp": vdp_spp,
    "linear-spp": linear_spp,
    "linear-dae": linear_dae,
}


def builtin(name: str, **params):
    """Construct a catalog problem; parameters are keyword arguments."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ValueError(f"invalid parameters for {name}: {exc}") from exc
