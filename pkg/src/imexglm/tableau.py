"""GLM and IMEX-GLM coefficient containers, order conditions and stability.

A single GLM component is described by ``(c, A, U, B, V, W)``.  One step on
``y' = f(y)`` with external stages ``ext`` (shape ``(r, m)``) reads::

    Y   = h A F(Y) + U ext
    ext = h B F(Y) + V ext

and the external stages carry the Nordsieck content ``W @ [y, h y', h^2 y'', ...]``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import _exact


class TableauError(ValueError):
    """Malformed tableau data (schema, dimension or finiteness violation)."""


PRECONSISTENCY_TOL = 1e-12


class SingularResolventError(ArithmeticError):
    """``I - zA`` (or ``A`` itself at z = infinity) is singular."""


class Mode(str, enum.Enum):
    ADDITIVE = "additive"
    COMPONENT = "component"


@dataclass(frozen=True, eq=False)
class GlmTableau:
    """One GLM component.

    ``exact`` optionally holds the rational coefficients the floats were
    rounded from; it is used by the exact-arithmetic validator.
    """

    c: np.ndarray
    A: np.ndarray
    U: np.ndarray
    B: np.ndarray
    V: np.ndarray
    W: np.ndarray
    p: int
    q: int
    explicit: bool = False
    exact: Mapping[str, Any] | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("c", "A", "U", "B", "V", "W"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _check_dims(self)

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.V.shape[0]

    @property
    def w0(self) -> np.ndarray:
        return self.W[:, 0]


def _check_dims(t: GlmTableau, label: str = "") -> None:
    s = t.c.shape[0] if t.c.ndim == 1 else -1
    if t.c.ndim != 1 or s < 1:
        raise TableauError(f"{label}c must be a non-empty vector")
    r = t.V.shape[0] if t.V.ndim == 2 else -1
    expected = {"A": (s, s), "U": (s, r), "B": (r, s), "V": (r, r), "W": (r, t.p + 1)}
    if t.p < 1:
        raise TableauError(f"{label}p must be a positive integer")
    if t.q < 0 or t.q > t.p:
        raise TableauError(f"{label}q must satisfy 0 <= q <= p")
    for name, shp in expected.items():
        arr = getattr(t, name)
        if arr.shape != shp:
            raise TableauError(f"{label}{name} has shape {arr.shape}, expected {shp}")
    for name in ("c", "A", "U", "B", "V", "W"):
        if not np.all(np.isfinite(getattr(t, name))):
            raise TableauError(f"{label}{name} contains a non-finite entry")
    if t.explicit and np.any(np.triu(t.A) != 0.0):
        raise TableauError(f"{label}A of an explicit component must be strictly lower triangular")


@dataclass(frozen=True, eq=False)
class ImexGlmPair:
    explicit: GlmTableau
    implicit: GlmTableau
    mode: Mode
    name: str = ""
    rational: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        e, i = self.explicit, self.implicit
        if (e.s, e.r, e.p) != (i.s, i.r, i.p):
            raise TableauError("explicit and implicit components differ in s, r or p")
        if self.mode is Mode.ADDITIVE:
            if not (np.array_equal(e.U, i.U) and np.array_equal(e.V, i.V)):
                raise TableauError("additive pairs must share U and V")
            if not np.array_equal(e.W[:, 0], i.W[:, 0]):
                raise TableauError("W_explicit and W_implicit must share column w0")

    @property
    def c(self) -> np.ndarray:
        return self.explicit.c

    @property
    def s(self) -> int:
        return self.explicit.s

    @property
    def r(self) -> int:
        return self.explicit.r

    @property
    def p(self) -> int:
        return self.explicit.p


# -- parsing -----------------------------------------------------------------

_REQUIRED = ("name", "mode", "s", "r", "p", "q_explicit", "q_implicit", "A_explicit",
             "A_implicit", "U", "B_explicit", "B_implicit", "V", "W_explicit", "W_implicit")


def _entry(value, rational: bool, fld: str):
    if rational:
        if not isinstance(value, (str, int)):
            raise TableauError(f"{fld}: rational entries must be 'num/den' strings")
        try:
            fr = Fraction(str(value).strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise TableauError(f"{fld}: cannot parse rational {value!r}") from exc
        return fr
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TableauError(f"{fld}: expected a number, got {value!r}")
    x = float(value)
    if not math.isfinite(x):
        raise TableauError(f"{fld}: non-finite entry")
    return x


def _mat(doc, fld, rational):
    rows = doc.get(fld)
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise TableauError(f"{fld}: expected a non-empty array of arrays")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise TableauError(f"{fld}: ragged matrix")
    return [[_entry(v, rational, fld) for v in r] for r in rows]


def _vec(doc, fld, rational):
    vals = doc.get(fld)
    if not isinstance(vals, list) or not vals:
        raise TableauError(f"{fld}: expected a non-empty array")
    return [_entry(v, rational, fld) for v in vals]


def _int(doc, fld):
    v = doc.get(fld)
    if isinstance(v, bool) or not isinstance(v, int):
        raise TableauError(f"{fld}: expected an integer")
    return v


def _to_float(m):
    return np.array([[float(v) for v in row] for row in m], dtype=float) if isinstance(m[0], list) \
        else np.array([float(v) for v in m], dtype=float)


def parse_tableau(text: str) -> ImexGlmPair:
    """Parse a JSON tableau document into a structurally validated pair."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TableauError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise TableauError("top-level JSON value must be an object")
    rational = doc.get("rational", False)
    if not isinstance(rational, bool):
        raise TableauError("rational: expected true or false")
    has_c = "c" in doc
    if not has_c and not ("c_explicit" in doc and "c_implicit" in doc):
        raise TableauError("c: missing field")
    for fld in _REQUIRED:
        if fld not in doc:
            raise TableauError(f"{fld}: missing field")
    if doc["mode"] not in ("additive", "component"):
        raise TableauError("mode: must be 'additive' or 'component'")
    mode = Mode(doc["mode"])
    if mode is Mode.ADDITIVE:
        for fld in ("U_explicit", "U_implicit", "V_explicit", "V_implicit"):
            if fld in doc:
                raise TableauError(f"{fld}: only allowed in component mode")
    s, r, p = _int(doc, "s"), _int(doc, "r"), _int(doc, "p")
    qe, qi = _int(doc, "q_explicit"), _int(doc, "q_implicit")

    raw: dict[str, Any] = {}
    for side in ("explicit", "implicit"):
        cfld = f"c_{side}" if f"c_{side}" in doc else "c"
        ufld = f"U_{side}" if f"U_{side}" in doc else "U"
        vfld = f"V_{side}" if f"V_{side}" in doc else "V"
        raw[side] = {
            "c": _vec(doc, cfld, rational),
            "A": _mat(doc, f"A_{side}", rational),
            "U": _mat(doc, ufld, rational),
            "B": _mat(doc, f"B_{side}", rational),
            "V": _mat(doc, vfld, rational),
            "W": _mat(doc, f"W_{side}", rational),
        }

    comps = {}
    for side, q in (("explicit", qe), ("implicit", qi)):
        d = raw[side]
        arrays = {k: _to_float(v) for k, v in d.items()}
        if arrays["c"].shape != (s,):
            raise TableauError(f"c ({side}): length {arrays['c'].shape[0]} does not match s={s}")
        if arrays["V"].shape[0] != r:
            raise TableauError(f"V ({side}): does not match r={r}")
        exact = {k: (_exact.vector(v) if k == "c" else _exact.matrix(v)) for k, v in d.items()} \
            if rational else None
        try:
            comps[side] = GlmTableau(**arrays, p=p, q=q, explicit=(side == "explicit"), exact=exact)
        except TableauError as exc:
            raise TableauError(f"{side} component: {exc}") from exc
    return ImexGlmPair(comps["explicit"], comps["implicit"], mode, name=str(doc["name"]),
                       rational=rational)


def load_tableau(path) -> ImexGlmPair:
    return parse_tableau(Path(path).read_text(encoding="utf-8"))


def _fmt(v, rational):
    if rational:
        fr = Fraction(v)
        return str(fr.numerator) if fr.denominator == 1 else f"{fr.numerator}/{fr.denominator}"
    return float(v)


def to_document(pair: ImexGlmPair) -> dict:
    rat = pair.rational
    e, i = pair.explicit, pair.implicit

    def get(t, key):
        if rat:
            src = t.exact[key]
            if key == "c":
                return [_fmt(v, True) for v in src]
            return [[_fmt(v, True) for v in row] for row in src]
        arr = getattr(t, key)
        return arr.tolist()

    doc: dict[str, Any] = {"name": pair.name, "mode": pair.mode.value}
    if rat:
        doc["rational"] = True
    doc.update({"s": pair.s, "r": pair.r, "p": pair.p, "q_explicit": e.q, "q_implicit": i.q})
    if np.array_equal(e.c, i.c) and (not rat or e.exact["c"] == i.exact["c"]):
        doc["c"] = get(e, "c")
    else:
        doc["c_explicit"] = get(e, "c")
        doc["c_implicit"] = get(i, "c")
    doc["A_explicit"] = get(e, "A")
    doc["A_implicit"] = get(i, "A")
    same_uv = np.array_equal(e.U, i.U) and np.array_equal(e.V, i.V)
    if pair.mode is Mode.ADDITIVE or same_uv:
        doc["U"] = get(e, "U")
        doc["V"] = get(e, "V")
    else:
        doc["U"] = get(e, "U")
        doc["V"] = get(e, "V")
        doc["U_implicit"] = get(i, "U")
        doc["V_implicit"] = get(i, "V")
    doc["B_explicit"] = get(e, "B")
    doc["B_implicit"] = get(i, "B")
    doc["W_explicit"] = get(e, "W")
    doc["W_implicit"] = get(i, "W")
    return doc


def serialize_tableau(pair: ImexGlmPair) -> str:
    # json uses repr() for floats, which round-trips bit-exactly
    return json.dumps(to_document(pair), indent=2)


# -- order conditions ----------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    """Max-norm residuals of the preconsistency and order conditions.

    ``stage[k]`` holds the stage condition for k = 1..p (only k <= q is
    required by the declared stage order); ``external[k]`` for k = 1..p.
    """

    preconsistency_U: float
    preconsistency_V: float
    stage: dict[int, float]
    external: dict[int, float]
    q: int

    @property
    def max_required(self) -> float:
        vals = [self.preconsistency_U, self.preconsistency_V]
        vals += [v for k, v in self.stage.items() if k <= self.q]
        vals += list(self.external.values())
        return max(vals)


def _stage_residual(c, A, U, W, k):
    fk = math.factorial
    return c**k / fk(k) - A @ (c ** (k - 1)) / fk(k - 1) - U @ W[:, k]


def _external_residual(c, B, V, W, k):
    fk = math.factorial
    acc = sum(W[:, k - l] / fk(l) for l in range(k + 1))
    return acc - B @ (c ** (k - 1)) / fk(k - 1) - V @ W[:, k]


def order_condition_residuals(t: GlmTableau) -> ResidualReport:
    one_s = np.ones(t.s)
    pu = float(np.max(np.abs(t.U @ t.w0 - one_s)))
    pv = float(np.max(np.abs(t.V @ t.w0 - t.w0)))
    stage = {k: float(np.max(np.abs(_stage_residual(t.c, t.A, t.U, t.W, k))))
             for k in range(1, t.p + 1)}
    ext = {k: float(np.max(np.abs(_external_residual(t.c, t.B, t.V, t.W, k))))
           for k in range(1, t.p + 1)}
    return ResidualReport(pu, pv, stage, ext, t.q)


def effective_stage_order(t: GlmTableau, tol: float = 1e-10) -> int:
    """Largest k such that the stage conditions 1..k all hold to ``tol``."""
    rep = order_condition_residuals(t)
    q = 0
    for k in range(1, t.p + 1):
        if rep.stage[k] > tol:
            break
        q = k
    return q


def exact_residuals(t: GlmTableau) -> ResidualReport:
    """Same as :func:`order_condition_residuals` in rational arithmetic."""
    if t.exact is None:
        raise ValueError("tableau carries no rational coefficients")
    ex = t.exact
    c, A, U, B, V, W = (ex[k] for k in ("c", "A", "U", "B", "V", "W"))
    s, r = len(c), len(V)
    w = [_exact.column(W, k) for k in range(t.p + 1)]
    pu = max(abs(x - 1) for x in _exact.matvec(U, w[0]))
    pv = max(abs(x - y) for x, y in zip(_exact.matvec(V, w[0]), w[0]))

    def cpow(k):
        return tuple(ci**k for ci in c)

    stage, ext = {}, {}
    for k in range(1, t.p + 1):
        fk, fk1 = math.factorial(k), math.factorial(k - 1)
        ac = _exact.matvec(A, cpow(k - 1))
        uw = _exact.matvec(U, w[k])
        stage[k] = max(abs(cpow(k)[i] / fk - ac[i] / fk1 - uw[i]) for i in range(s))
        bc = _exact.matvec(B, cpow(k - 1))
        vw = _exact.matvec(V, w[k])
        acc = [sum((w[k - l][i] / math.factorial(l) for l in range(k + 1)), Fraction(0))
               for i in range(r)]
        ext[k] = max(abs(acc[i] - bc[i] / fk1 - vw[i]) for i in range(r))
    return ResidualReport(pu, pv, stage, ext, t.q)


# -- stability -------------------------------------------------------------------

def stability_matrix(t: GlmTableau, z: complex) -> np.ndarray:
    """M(z) = V + z B (I - zA)^{-1} U."""
    z = complex(z)
    S = np.eye(t.s) - z * t.A
    if np.linalg.cond(S) > 1e14:
        raise SingularResolventError(f"I - zA is singular at z = {z}")
    return t.V + z * (t.B @ np.linalg.solve(S, t.U.astype(complex)))


def stability_matrix_at_infinity(t: GlmTableau) -> np.ndarray:
    """M(inf) = V - B A^{-1} U."""
    eigs = np.linalg.eigvals(t.A)
    small = eigs[np.argmin(np.abs(eigs))]
    if abs(small) <= 1e-12 * max(1.0, float(np.max(np.abs(t.A)))):
        raise SingularResolventError(f"A is singular (eigenvalue {small:.3g})")
    return t.V - t.B @ np.linalg.solve(t.A, t.U)


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def exact_stability_matrix_at_infinity(t: GlmTableau):
    ex = t.exact
    if ex is None:
        raise ValueError("tableau carries no rational coefficients")
    try:
        ainv = _exact.inverse(ex["A"])
    except ZeroDivisionError as exc:
        raise SingularResolventError("A is singular") from exc
    return _exact.sub(ex["V"], _exact.matmul(ex["B"], _exact.matmul(ainv, ex["U"])))


# -- class of interest -------------------------------------------------------------

@dataclass(frozen=True)
class ClassReport:
    internally_consistent: bool
    stage_orders_ok: bool
    implicit_A_eigs: list
    eigs_positive: bool
    rho_M_infinity: float
    rho_lt_one: bool
    q_effective: tuple[int, int] = (0, 0)
    exact: bool = False

    @property
    def overall(self) -> bool:
        return (self.internally_consistent and self.stage_orders_ok
                and self.eigs_positive and self.rho_lt_one)


def _eigs_positive(eigs, imag_tol, real_tol) -> bool:
    return all(abs(e.imag) <= imag_tol * (1 + abs(e.real)) and e.real >= real_tol for e in eigs)


def validate_class_of_interest(pair: ImexGlmPair, *, exact: bool = False,
                               imag_tol: float = 1e-10, real_tol: float = 1e-10,
                               rho_margin: float = 1e-8, q_tol: float = 1e-10) -> ClassReport:
    """Check the four defining properties of the class of interest.

    With ``exact=True`` (requires rational coefficients) every decision is made
    in rational arithmetic; eigenvalues and the spectral radius are still
    reported in floating point.
    """
    e, i = pair.explicit, pair.implicit
    p = pair.p
    eigs = [complex(v) for v in np.linalg.eigvals(i.A)]
    try:
        rho = spectral_radius(stability_matrix_at_infinity(i))
    except SingularResolventError:
        rho = math.inf

    if exact:
        if not pair.rational:
            raise ValueError("exact validation needs a rational tableau")
        consistent = e.exact["c"] == i.exact["c"]
        pre = all(_preconsistent(exact_residuals(t), 0) for t in (e, i))
        qe = _exact_q(e)
        qi = _exact_q(i)
        positive = _exact.all_roots_real_positive(_exact.charpoly(i.exact["A"]))
        try:
            minf = exact_stability_matrix_at_infinity(i)
            rho_ok = _exact.all_roots_in_unit_disk(_exact.charpoly(minf))
        except SingularResolventError:
            rho_ok = False
    else:
        consistent = bool(np.array_equal(e.c, i.c))
        pre = all(_preconsistent(order_condition_residuals(t), PRECONSISTENCY_TOL) for t in (e, i))
        qe = effective_stage_order(e, q_tol)
        qi = effective_stage_order(i, q_tol)
        positive = _eigs_positive(eigs, imag_tol, real_tol)
        rho_ok = rho <= 1.0 - rho_margin
    # the stage order conditions presuppose preconsistency
    orders_ok = pre and all(q in (p - 1, p) for q in (qe, qi)) and qe >= e.q and qi >= i.q
    return ClassReport(consistent, orders_ok, eigs, positive, rho, rho_ok, (qe, qi), exact)


def _preconsistent(rep: ResidualReport, tol) -> bool:
    return rep.preconsistency_U <= tol and rep.preconsistency_V <= tol


def _exact_q(t: GlmTableau) -> int:
    rep = exact_residuals(t)
    q = 0
    for k in range(1, t.p + 1):
        if rep.stage[k] != 0:
            break
        q = k
    return q


# -- shipped methods ---------------------------------------------------------------

METHODS_DIR = Path(__file__).resolve().parent / "methods"


def shipped_methods() -> list[str]:
    return sorted(p.stem for p in METHODS_DIR.glob("*.json"))


def load_method(name_or_path) -> ImexGlmPair:
    """Load a shipped method by name, or any tableau file by path."""
    path = Path(name_or_path)
    if path.suffix != ".json" and not path.exists():
        path = METHODS_DIR / f"{name_or_path}.json"
    return load_tableau(path)
