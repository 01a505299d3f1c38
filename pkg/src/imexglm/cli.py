"""``glm`` command-line interface.

Exit codes: 0 success / pass, 1 numerical failure or failed check, 2 usage,
parse or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import analysis, kernels
from .dae import DaeError
from .problems import CATALOG, AdditiveProblem, builtin
from .starting import StartError, start
from .stepper import IntegrationError, NewtonConfig, StepCountError, integrate
from .tableau import (SingularResolventError, TableauError, exact_residuals, load_method,
                      order_condition_residuals, spectral_radius, stability_matrix_at_infinity,
                      validate_class_of_interest)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _err(msg):
    print(f"glm: {msg}", file=sys.stderr)


def _load(path):
    try:
        return load_method(path)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (TableauError, json.JSONDecodeError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc


def _parse_params(items, eps=None):
    params = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = float(val)
        except ValueError:
            raise UsageError(f"--param {key}: {val!r} is not a number") from None
    if eps is not None:
        params["eps"] = eps
    return params


def _problem(name, params):
    try:
        return builtin(name, **params)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _positive(name, value):
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")
    return value


def _floats(text, what):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{what}: cannot parse {text!r}") from None


def _emit(text, out):
    """Write CSV to ``out`` (a path) or stdout."""
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _config(args) -> NewtonConfig:
    try:
        return NewtonConfig(abs_tol=args.newton_atol, rel_tol=args.newton_rtol,
                            max_iters=args.newton_max_iters)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- validate ---------------------------------------------------------------------------

def _residual_lines(label, rep):
    lines = [f"[{label}]",
             f"  preconsistency U w0 = e       {float(rep.preconsistency_U):.3e}",
             f"  preconsistency V w0 = w0      {float(rep.preconsistency_V):.3e}"]
    for k, v in rep.stage.items():
        tag = "" if k <= rep.q else "  (not required)"
        lines.append(f"  stage order condition k={k}    {float(v):.3e}{tag}")
    for k, v in rep.external.items():
        lines.append(f"  external order condition k={k} {float(v):.3e}")
    return lines


def cmd_validate(args) -> int:
    pair = _load(args.tableau)
    if args.exact and not pair.rational:
        raise UsageError("--exact needs a tableau with rational entries")
    resid = exact_residuals if args.exact else order_condition_residuals
    lines = [f"method {pair.name} ({pair.mode.value}, s={pair.s}, r={pair.r}, p={pair.p})"]
    lines += _residual_lines("explicit", resid(pair.explicit))
    lines += _residual_lines("implicit", resid(pair.implicit))
    rep = validate_class_of_interest(pair, exact=args.exact)

    def flag(ok):
        return "ok" if ok else "FAILED"
    eigs = ", ".join(f"{e.real:.6g}" + (f"{e.imag:+.3g}j" if e.imag else "") for e in rep.implicit_A_eigs)
    lines += [
        f"class of interest ({'exact' if rep.exact else 'floating point'}):",
        f"  internal consistency (c_E = c_I)    {flag(rep.internally_consistent)}",
        f"  preconsistency and stage orders q_E, q_I = {rep.q_effective[0]}, {rep.q_effective[1]}  "
        f"{flag(rep.stage_orders_ok)}",
        f"  eig(A_I) real positive [{eigs}]  {flag(rep.eigs_positive)}",
        f"  rho(M_I(inf)) = {rep.rho_M_infinity:.6g}         {flag(rep.rho_lt_one)}",
        f"overall: {'PASS' if rep.overall else 'FAIL'}",
    ]
    print("\n".join(lines))
    return EXIT_OK if rep.overall else EXIT_FAIL


# -- stability --------------------------------------------------------------------------

def _grid(spec):
    vals = spec.split()
    if len(vals) != 6:
        raise UsageError("--grid expects 're_min re_max im_min im_max n_re n_im'")
    try:
        re0, re1, im0, im1 = (float(v) for v in vals[:4])
        n_re, n_im = int(vals[4]), int(vals[5])
    except ValueError:
        raise UsageError(f"--grid: cannot parse {spec!r}") from None
    if n_re < 1 or n_im < 1:
        raise UsageError("--grid: point counts must be >= 1")
    if re1 < re0 or im1 < im0:
        raise UsageError("--grid: ranges must satisfy min <= max")
    re = np.linspace(re0, re1, n_re)
    im = np.linspace(im0, im1, n_im)
    R, I = np.meshgrid(re, im, indexing="ij")
    return (R + 1j * I).ravel()


def cmd_stability(args) -> int:
    pair = _load(args.tableau)
    zs = _grid(args.grid)
    rho_e = kernels.stability_grid(pair.explicit.A, pair.explicit.U, pair.explicit.B,
                                   pair.explicit.V, zs)
    rho_i = kernels.stability_grid(pair.implicit.A, pair.implicit.U, pair.implicit.B,
                                   pair.implicit.V, zs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re_z", "im_z", "rho_explicit", "rho_implicit"])
    for z, a, b in zip(zs, rho_e, rho_i):
        w.writerow([analysis.csv_number(z.real), analysis.csv_number(z.imag),
                    analysis.csv_number(a), analysis.csv_number(b)])
    _emit(buf.getvalue(), args.out)

    try:
        rho_inf = spectral_radius(stability_matrix_at_infinity(pair.implicit))
    except SingularResolventError:
        rho_inf = float("nan")
    n_nan = int(np.isnan(rho_i).sum())
    _err(f"rho(M_I(inf)) = {rho_inf:.6g}; {n_nan} singular grid point(s)")
    if args.D is None:
        return EXIT_OK
    slab = (zs.real <= -args.D) & ~np.isnan(rho_i)
    if not slab.any():
        _err(f"no grid points with Re z <= {-args.D:g}")
        return EXIT_FAIL
    worst = float(rho_i[slab].max())
    ok = worst <= args.alpha
    _err(f"slab Re z <= {-args.D:g}: max rho_I = {worst:.6g} (alpha = {args.alpha:g}), "
         f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# -- integrate --------------------------------------------------------------------------

def cmd_integrate(args) -> int:
    pair = _load(args.method)
    problem = _problem(args.problem, _parse_params(args.param, args.eps))
    _positive("--h", args.h)
    if args.stride < 1:
        raise UsageError("--stride must be >= 1")
    try:
        state0 = start(pair, problem, args.h)
        traj = integrate(pair, problem, state0, args.tf, _config(args), stride=args.stride)
    except StepCountError as exc:
        raise UsageError(str(exc)) from None
    # report the solution value carried by the first external block
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    num = analysis.csv_number
    if isinstance(problem, AdditiveProblem):
        w.writerow(["t"] + [f"y{j}" for j in range(traj[0].y.shape[1])])
        for st in traj:
            y = analysis.recover_solution(pair, problem, st, st.t)
            w.writerow([num(st.t)] + [num(v) for v in y])
    else:
        mx, mz = traj[0].x.shape[1], traj[0].z.shape[1]
        w.writerow(["t"] + [f"x{j}" for j in range(mx)] + [f"z{j}" for j in range(mz)])
        for st in traj:
            x, z = analysis.recover_solution(pair, problem, st, st.t)
            w.writerow([num(st.t)] + [num(v) for v in np.concatenate([x, z])])
    _emit(buf.getvalue(), args.out)
    last = traj[-1]
    avg = last.newton_iterations / last.stage_solves if last.stage_solves else 0.0
    _err(f"{args.problem}: {last.n} steps of h = {args.h:g} to t = {last.t:.17g}, "
         f"mean Newton iterations per stage {avg:.2f}")
    return EXIT_OK


# -- studies ----------------------------------------------------------------------------

def cmd_converge(args) -> int:
    pair = _load(args.method)
    problem = _problem(args.problem, _parse_params(args.param, args.eps))
    _positive("--h0", args.h0)
    try:
        rep = analysis.run_convergence_study(pair, problem, args.h0, args.rungs, args.tf,
                                             _config(args), reference=args.reference,
                                             tolerance=args.tol)
    except StepCountError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        _emit(rep.to_csv(), args.out)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_sweep_eps(args) -> int:
    pair = _load(args.method)
    params = _parse_params(args.param)
    eps_values = _floats(args.eps_values, "--eps-values")
    _positive("--h0", args.h0)

    def family(eps):
        return _problem(args.problem, dict(params, eps=eps))
    try:
        sweep = analysis.epsilon_sweep(pair, family, eps_values, args.h0, args.rungs, args.D,
                                       args.tf, _config(args), margin=args.margin)
    except (StepCountError, analysis.SweepPreconditionError) as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        _emit(sweep.to_csv(), args.out)
    print(sweep.summary())
    return EXIT_OK if sweep.passed else EXIT_FAIL


_STIFF_PARAM = {"split-dahlquist": "lam_i", "nonlinear-additive": "lam"}


def cmd_sweep_stiff(args) -> int:
    pair = _load(args.method)
    if args.explicit_only:
        pair = analysis.explicit_only(pair)
    key = args.param_name or _STIFF_PARAM.get(args.problem)
    if key is None:
        raise UsageError(f"--param-name is required for problem {args.problem!r}")
    params = _parse_params(args.param)
    values = _floats(args.values, "--values")
    _positive("--h", args.h)

    def family(lam):
        return _problem(args.problem, dict(params, **{key: lam}))
    try:
        table = analysis.stiffness_sweep(pair, family, values, args.h, args.tf, _config(args),
                                         ratio_limit=args.ratio)
    except StepCountError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        _emit(table.to_csv(), args.out)
    print(table.summary())
    return EXIT_OK if table.passed else EXIT_FAIL


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    data = [_floats(r, "--matrix") for r in rows]
    if not data or any(len(r) != len(data) for r in data):
        raise UsageError("--matrix must be square: rows separated by ';', entries by spaces")
    return np.array(data)


def _fmt_exponent(x):
    return format(round(x, 1) + 0.0, "g")


def cmd_recurrence(args) -> int:
    M = _matrix(args.matrix)
    hs = tuple(2.0**-k for k in range(args.kmin, args.kmax + 1))
    try:
        spec = analysis.RecurrenceSpec(M, args.nu, args.noise, T=args.T, hs=hs, seed=args.seed)
        res = analysis.simulate_error_recurrence(spec)
    except (ValueError, StepCountError) as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "max_norm"])
        for h, v in zip(res.hs, res.norms):
            w.writerow([analysis.csv_number(h), analysis.csv_number(v)])
        _emit(buf.getvalue(), args.out)
    ok = res.matches(args.tol)
    rel = ">=" if res.bound_only else "="
    print(f"exponent ≈ {_fmt_exponent(res.exponent)}, case {res.case}")
    print(f"fitted {res.exponent:.4f}, predicted {rel} {res.predicted:g}, {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# -- parser -----------------------------------------------------------------------------

def _newton_flags(p):
    p.add_argument("--newton-atol", type=float, default=1e-12)
    p.add_argument("--newton-rtol", type=float, default=1e-10)
    p.add_argument("--newton-max-iters", type=int, default=25)


def _problem_flags(p, default=None):
    p.add_argument("--method", required=True, help="tableau JSON path or shipped method name")
    p.add_argument("--problem", default=default, required=default is None,
                   choices=sorted(CATALOG))
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="problem parameter, repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="glm", description="IMEX general linear methods toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check order conditions and the class of interest")
    p.add_argument("tableau")
    p.add_argument("--exact", action="store_true", help="decide in rational arithmetic")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stability", help="spectral radius of M(z) over a complex grid")
    p.add_argument("tableau")
    p.add_argument("--grid", required=True, help="'re_min re_max im_min im_max n_re n_im'")
    p.add_argument("--D", type=float, default=None, help="slab Re z <= -D to check")
    p.add_argument("--alpha", type=float, default=0.99)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("integrate", help="fixed-step integration of a catalog problem")
    _problem_flags(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--tf", type=float, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out")
    _newton_flags(p)
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("converge", help="convergence study on h0 2^-k")
    _problem_flags(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--h0", type=float, required=True)
    p.add_argument("--rungs", type=int, default=5)
    p.add_argument("--tf", type=float, default=1.0)
    p.add_argument("--reference", choices=("auto", "exact", "self"), default="auto")
    p.add_argument("--tol", type=float, default=None, help="order tolerance override")
    p.add_argument("--out")
    _newton_flags(p)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("sweep-eps", help="convergence studies across eps")
    _problem_flags(p, default="kaps")
    p.add_argument("--eps-values", default="1e-3 1e-4 1e-5 1e-6")
    p.add_argument("--h0", type=float, default=0.0625)
    p.add_argument("--rungs", type=int, default=6)
    p.add_argument("--D", type=float, default=1.0)
    p.add_argument("--tf", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=0.3)
    p.add_argument("--out")
    _newton_flags(p)
    p.set_defaults(func=cmd_sweep_eps)

    p = sub.add_parser("sweep-stiff", help="errors at fixed h across stiffness")
    _problem_flags(p, default="split-dahlquist")
    p.add_argument("--param-name", help="problem parameter carrying the stiffness")
    p.add_argument("--values", default="-1e2 -1e4 -1e6 -1e8")
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--tf", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=2.0)
    p.add_argument("--explicit-only", action="store_true",
                   help="replace the implicit component by the explicit one")
    p.add_argument("--out")
    _newton_flags(p)
    p.set_defaults(func=cmd_sweep_stiff)

    p = sub.add_parser("recurrence", help="simulate zeta_n = M zeta_{n-1} + delta_n")
    p.add_argument("--matrix", required=True, help="rows separated by ';', e.g. '0.5 1; 0 0.5'")
    p.add_argument("--nu", type=float, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--constant", dest="noise", action="store_const", const="constant")
    g.add_argument("--smooth", dest="noise", action="store_const", const="smooth")
    g.add_argument("--rough", dest="noise", action="store_const", const="rough")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--kmin", type=int, default=4, help="finest ladder uses h = 2^-kmax")
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=0.2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_recurrence, noise="smooth")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (IntegrationError, DaeError, StartError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_FAIL
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
