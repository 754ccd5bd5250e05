"""Command-line front end.

Exit codes: 0 success/pass, 1 usage or input error, 2 verification failed
(or a solve did not converge), 3 infeasible problem.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .abreu import CONVENTION, abreu_operator, in_class_R, residual
from .estimates import verify_bounds
from .legendre import LegendreError, phi_field
from .polytope import PolytopeError, validate_delzant
from .solver import (NonConvexStartError, NonMetricSolutionError, SolveConfig, continuation,
                     solve_1d, solve_nd)

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("abreu_toric")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        io.write_text(out, text)
    else:
        sys.stdout.write(text)


def _status(msg: str) -> None:
    print(msg, file=sys.stderr)


def _polytope(path):
    return io.polytope_from_dict(io.load_json(path, "polytope"), str(path))


def _potential(path, polytope):
    return io.potential_from_dict(io.load_json(path, "potential"), polytope, str(path))


def _curvature(path, dim):
    return io.curvature_from_dict(io.load_json(path, "curvature"), dim, str(path))


# ----------------------------------------------------------------------------
# commands


def cmd_check_delzant(args) -> int:
    rep = validate_delzant(_polytope(args.polytope))
    _emit(io.dumps(rep.to_dict()), args.out)
    _status(f"delzant: {'pass' if rep.passed else 'fail'}")
    for v in rep.violations:
        if v.get("kind") == "non-unimodular vertex":
            _status(f"  vertex {v['vertex']}: |det| = {v['determinant']}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_curvature(args) -> int:
    P = _polytope(args.polytope)
    u = _potential(args.potential, P)
    K = _curvature(args.k, P.dim) if args.k else None
    grid = P.interior_grid(args.h, args.margin)
    mode = args.mode or ("analytic" if u.analytic else "fd")
    if K is not None:
        res = residual(u, K, grid, mode, args.step)
    else:
        res = abreu_operator(u, grid, mode, args.step)
    summary = {"mode": mode, "nodes": len(grid), "flagged": res.n_flagged,
               "max_abs_A": res.max_abs_A()[0], "convention": CONVENTION}
    if K is not None:
        summary["residual"] = res.residual_summary()
    code = EXIT_OK
    if args.b is not None:
        mem = in_class_R(u, args.b, grid, mode)
        summary["class_R"] = {"b": mem.b, "passed": mem.passed, "max_abs_A": mem.max_abs_A,
                              "location": mem.location}
        code = EXIT_OK if mem.passed else EXIT_FAIL
    if args.format == "csv":
        _emit(io.csv_text(res.header(), res.rows()), args.out)
    else:
        _emit(io.dumps({"summary": summary, "header": res.header(), "rows": list(res.rows())}),
              args.out)
    _status(f"max |A| = {io.fmt(summary['max_abs_A'])} over {len(grid)} nodes "
            f"({res.n_flagged} flagged)")
    return code


def cmd_legendre(args) -> int:
    P = _polytope(args.polytope)
    u = _potential(args.potential, P)
    X = io.xgrid_from_dict(io.load_json(args.xbox, "xbox"), P.dim, str(args.xbox))
    pf = phi_field(u, X)
    if args.format == "csv":
        _emit(io.csv_text(pf.header(), pf.rows()), args.out)
    else:
        phi = pf.phi
        _emit(io.dumps({"nodes": len(X), "phi_max": float(phi.max()), "phi_min": float(phi.min()),
                        "header": pf.header(), "rows": list(pf.rows())}), args.out)
    _status(f"legendre: {len(X)} x-nodes, sup |phi| = {io.fmt(np.abs(pf.phi).max())}")
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    P = _polytope(args.polytope)
    u = _potential(args.potential, P)
    X = io.xgrid_from_dict(io.load_json(args.xbox, "xbox"), P.dim, str(args.xbox))
    grid = P.interior_grid(args.h, args.margin)
    rep = verify_bounds(u, grid, X, args.b, args.kappa_method)
    _emit(io.dumps(rep.to_dict()), args.out)
    verdict = "pass" if rep.passed else "fail"
    _status(f"verify-bounds: {verdict} (lemma32={rep.pass_lemma32}, dual_det={rep.pass_dual_det}, "
            f"prop31={rep.pass_prop31})")
    for e in rep.errors:
        _status(f"  error: {e}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _write_solution(res, out) -> None:
    body = res.summary()
    if res.final is not None:
        body["residual"] = res.final.residual_summary()
    if out is None:
        _emit(io.dumps(body), None)
        return
    side = Path(out).with_suffix(".psi.csv")
    body["psi_csv"] = side.name
    _emit(io.dumps(body), out)
    if res.psi is not None:
        io.write_text(side, io.csv_text(res.header(), res.rows()))


def _solve_config(args) -> SolveConfig:
    return SolveConfig(h=args.h, margin=args.margin, tol=args.tol, max_iter=args.max_iter,
                       band=args.band, band_steps=args.band_steps)


def cmd_solve(args, force_steps: bool = False) -> int:
    P = _polytope(args.polytope)
    K = _curvature(args.k, P.dim)
    psi0 = None
    if args.psi0:
        psi0 = _potential(args.psi0, P).psi
    try:
        cfg = _solve_config(args)
    except ValueError as exc:
        raise io.InputError(str(exc)) from exc
    try:
        if args.steps > 1 or force_steps:
            res = continuation(P, K, args.steps, cfg, psi0)
        else:
            res = solve_nd(P, K, cfg, psi0)
    except NonConvexStartError as exc:
        raise io.InputError(str(exc)) from exc
    _write_solution(res, args.out)
    _status(f"solve: {res.message}; max residual {io.fmt(res.max_residual)} "
            f"after {res.iterations} iterations")
    return EXIT_OK if res.converged else EXIT_FAIL


def cmd_solve_1d(args) -> int:
    K = _curvature(args.k, 1)
    P = _polytope(args.polytope) if args.polytope else None
    try:
        res = solve_1d(K, tuple(args.interval), args.h, args.margin, P)
    except NonMetricSolutionError as exc:
        _emit(io.dumps({"converged": False, "message": str(exc), "location": exc.location}), args.out)
        _status(f"solve-1d: {exc}")
        return EXIT_INFEASIBLE
    except ValueError as exc:
        raise io.InputError(str(exc)) from exc
    _write_solution(res, args.out)
    if res.certificate is not None:
        c = res.certificate
        _status(f"solve-1d: infeasible (int K - 2 = {io.fmt(c['integral_K_minus_2'])}, "
                f"moment - length = {io.fmt(c['moment_minus_length'])})")
        return EXIT_INFEASIBLE
    _status(f"solve-1d: {res.message}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def _solve_args(p: argparse.ArgumentParser, steps_default: int) -> None:
    p.add_argument("--polytope", required=True)
    p.add_argument("--k", required=True, help="curvature spec JSON")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--margin", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--steps", type=int, default=steps_default)
    p.add_argument("--psi0", help="potential JSON whose psi is the initial guess")
    p.add_argument("--band", choices=["initial", "zero"], default="initial",
                   help="boundary band values: from the initial guess, or zeros")
    p.add_argument("--band-steps", type=int, default=1)
    p.add_argument("--out", help="SolveResult JSON (psi CSV written next to it)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="abreu-toric", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("check-delzant", help="validate a polytope")
    p.add_argument("polytope")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_delzant)

    p = sub.add_parser("curvature", help="Abreu operator on a grid")
    p.add_argument("--polytope", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--k", help="target curvature JSON (adds the residual column)")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--margin", type=float, required=True)
    p.add_argument("--mode", choices=["analytic", "fd"])
    p.add_argument("--step", type=float, help="FD spacing (default: h)")
    p.add_argument("--b", type=float, help="also test max |A| <= b")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("legendre", help="Legendre duals and phi on an x-box")
    p.add_argument("--polytope", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--xbox", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_legendre)

    p = sub.add_parser("verify-bounds", help="a priori estimate report")
    p.add_argument("--polytope", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--xbox", required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--margin", type=float, required=True)
    p.add_argument("--b", type=float, help="curvature bound (default: max |A| on the grid)")
    p.add_argument("--kappa-method", choices=["chain", "fd4"], default="chain")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("solve", help="prescribed curvature, Gauss-Newton")
    _solve_args(p, 1)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("continuation", help="prescribed curvature by homotopy from Guillemin")
    _solve_args(p, 4)
    p.set_defaults(func=lambda a: cmd_solve(a, force_steps=True))

    p = sub.add_parser("solve-1d", help="closed-form 1D solve")
    p.add_argument("--k", required=True)
    p.add_argument("--interval", type=float, nargs=2, default=[0.0, 1.0], metavar=("A", "B"))
    p.add_argument("--polytope", help="1D polytope JSON (overrides --interval)")
    p.add_argument("--h", type=float, default=1 / 64)
    p.add_argument("--margin", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve_1d)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.InputError, PolytopeError) as exc:
        _status(f"error: {exc}")
        return EXIT_USAGE
    except LegendreError as exc:
        _status(f"error: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
