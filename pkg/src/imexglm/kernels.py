"""Hot loops with numba-compiled and pure-numpy implementations.

Set ``GLM_DISABLE_NUMBA=1`` to force the numpy path (also used automatically
when numba is not importable).  Both paths produce the same numbers up to
rounding.
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

COND_LIMIT = 1e14


def numba_enabled() -> bool:
    return _HAVE_NUMBA and os.environ.get("GLM_DISABLE_NUMBA", "") not in ("1", "true", "yes")


# -- error recurrence zeta_n = M zeta_{n-1} + delta_n ------------------------------

def recurrence_numpy(M: np.ndarray, deltas: np.ndarray) -> tuple[float, float]:
    """Max and final infinity norms of the recurrence iterates, zeta_0 = delta_0."""
    z = deltas[0].copy()
    peak = float(np.max(np.abs(z)))
    for k in range(1, deltas.shape[0]):
        z = M @ z + deltas[k]
        nz = float(np.max(np.abs(z)))
        if nz > peak:
            peak = nz
    return peak, float(np.max(np.abs(z)))


def _recurrence_loop(M, deltas):
    d = M.shape[0]
    z = deltas[0].copy()
    peak = 0.0
    for j in range(d):
        peak = max(peak, abs(z[j]))
    tmp = np.empty(d)
    for k in range(1, deltas.shape[0]):
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += M[i, j] * z[j]
            tmp[i] = acc + deltas[k, i]
        nz = 0.0
        for i in range(d):
            z[i] = tmp[i]
            nz = max(nz, abs(tmp[i]))
        if nz > peak:
            peak = nz
    last = 0.0
    for j in range(d):
        last = max(last, abs(z[j]))
    return peak, last


# -- spectral radius of M(z) over a grid --------------------------------------------

def stability_grid_numpy(A, U, B, V, zs) -> np.ndarray:
    """rho(V + z B (I - zA)^{-1} U) for each z; NaN where I - zA is singular."""
    zs = np.asarray(zs, dtype=complex).ravel()
    s = A.shape[0]
    S = np.eye(s)[None, :, :] - zs[:, None, None] * A[None, :, :]
    out = np.full(zs.shape, np.nan)
    cond = np.linalg.cond(S)
    ok = np.isfinite(cond) & (cond <= COND_LIMIT)
    if np.any(ok):
        Uc = np.broadcast_to(U.astype(complex), (int(ok.sum()),) + U.shape)
        X = np.linalg.solve(S[ok], Uc)
        M = V[None] + zs[ok, None, None] * (B[None] @ X)
        out[ok] = np.max(np.abs(np.linalg.eigvals(M)), axis=1)
    return out


def _stability_loop(A, U, B, V, zs):
    n = zs.shape[0]
    s = A.shape[0]
    out = np.empty(n)
    eye = np.eye(s).astype(np.complex128)
    Ac = A.astype(np.complex128)
    Uc = U.astype(np.complex128)
    Bc = B.astype(np.complex128)
    Vc = V.astype(np.complex128)
    for k in range(n):
        S = eye - zs[k] * Ac
        c = np.linalg.cond(S)
        if not np.isfinite(c) or c > 1e14:
            out[k] = np.nan
            continue
        X = np.linalg.solve(S, Uc)
        M = Vc + zs[k] * (Bc @ X)
        ev = np.linalg.eigvals(M)
        out[k] = np.max(np.abs(ev))
    return out


if _HAVE_NUMBA:
    recurrence_numba = numba.njit(cache=True)(_recurrence_loop)
    stability_grid_numba = numba.njit(cache=True)(_stability_loop)
else:  # pragma: no cover
    recurrence_numba = None
    stability_grid_numba = None


def recurrence_norms(M, deltas, use_numba: bool | None = None):
    M = np.ascontiguousarray(M, dtype=float)
    deltas = np.ascontiguousarray(deltas, dtype=float)
    if use_numba is None:
        use_numba = numba_enabled()
    if use_numba:
        peak, last = recurrence_numba(M, deltas)
        return float(peak), float(last)
    return recurrence_numpy(M, deltas)


def stability_grid(A, U, B, V, zs, use_numba: bool | None = None) -> np.ndarray:
    zs = np.ascontiguousarray(np.asarray(zs, dtype=complex).ravel())
    if use_numba is None:
        use_numba = numba_enabled()
    if use_numba:
        return stability_grid_numba(np.ascontiguousarray(A, float), np.ascontiguousarray(U, float),
                                    np.ascontiguousarray(B, float), np.ascontiguousarray(V, float), zs)
    return stability_grid_numpy(np.asarray(A, float), np.asarray(U, float),
                                np.asarray(B, float), np.asarray(V, float), zs)
