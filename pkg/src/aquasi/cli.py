"""Command-line entry point: ``aquasi <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure. Errors are
reported as one JSON object on stderr. Reports are written atomically and
contain no timestamps, so identical invocations give identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from typing import Sequence

import numpy as np

from . import envelope, young
from ._io import atomic_write_text, dumps, write_json
from .errors import AquasiError, InputError, NumericalError
from .integrand import IntegrandExpr, resolve_integrand
from .operators import DEFAULT_SEED, load_operator, sample_characteristic_cone, verify_constant_rank
from .torus import (
    PeriodicField,
    afree_residual,
    apply_operator_spectral,
    neg_sobolev_norm,
    project_afree,
    random_field,
    read_afld,
    write_afld,
    write_field_csv,
)

log = logging.getLogger("aquasi")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        raise SystemExit(2)


# ---------------------------------------------------------------- parsing helpers


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated integers, got {text!r}") from exc


def _positive(kind):
    def conv(text):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if val <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return val

    return conv


def _nonneg_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return val


def _seed(text):
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer seed: {text!r}")


def _xi_grid(text: str, n: int):
    """``lo,hi:pts`` (same box on every axis) or ``lo1,..,lon,hi1,..,hin:pts``."""
    box, sep, pts = text.partition(":")
    if not sep:
        raise InputError(f"--xi-grid needs the form lo,hi:pts, got {text!r}")
    vals = _floats(box)
    if len(vals) == 2:
        lo, hi = np.full(n, vals[0]), np.full(n, vals[1])
    elif len(vals) == 2 * n:
        lo, hi = vals[:n], vals[n:]
    else:
        raise InputError(f"--xi-grid box needs 2 or {2 * n} numbers")
    if np.any(hi <= lo):
        raise InputError("--xi-grid box needs lo < hi")
    p = int(pts)
    if p < 2:
        raise InputError("--xi-grid needs at least 2 points per axis")
    return lo, hi, p


def _integrand(args, n: int) -> IntegrandExpr:
    if getattr(args, "integrand_file", None):
        with open(args.integrand_file, encoding="utf-8") as fh:
            return resolve_integrand(fh.read().strip(), n)
    if not args.integrand:
        raise InputError("one of --integrand or --integrand-file is required")
    return resolve_integrand(args.integrand, n)


def _xi(text: str, n: int) -> np.ndarray:
    xi = _floats(text)
    if len(xi) != n:
        raise InputError(f"--xi needs {n} components, got {len(xi)}")
    return xi


def _emit(args, obj) -> None:
    if getattr(args, "out", None):
        write_json(args.out, obj)
    else:
        sys.stdout.write(dumps(obj))


# -------------------------------------------------------------- subcommands


def cmd_rank(args) -> int:
    op = load_operator(args.op)
    cert = verify_constant_rank(op, samples=args.samples, tol=args.tol, seed=args.seed)
    _emit(args, {"operator": op.name, "certificate": cert.to_dict()})
    return 0


def cmd_cone(args) -> int:
    op = load_operator(args.op)
    cone = sample_characteristic_cone(op, samples=args.samples, tol=args.tol, seed=args.seed)
    _emit(args, {"operator": op.name, "cone": cone.to_dict(max_directions=args.max_directions)})
    return 0


def _load_field(args, op) -> PeriodicField:
    if args.input:
        return read_afld(args.input)
    dims = (args.grid,) * op.N
    return random_field(op.n, dims, np.random.default_rng(args.seed))


def cmd_project(args) -> int:
    op = load_operator(args.op)
    v = _load_field(args, op)
    pv = project_afree(op, v)
    ppv = project_afree(op, pv)
    if args.field_out:
        write_afld(args.field_out, pv)
    if args.csv:
        write_field_csv(args.csv, pv)
    _emit(
        args,
        {
            "operator": op.name,
            "dims": list(v.dims),
            "afreeResidual": afree_residual(op, pv),
            "idempotence": float(np.max(np.abs(ppv.values - pv.values))),
            "meanError": float(np.max(np.abs(pv.mean() - v.mean()))),
            "inputNorm": v.l2_norm(),
            "projectedNorm": pv.l2_norm(),
        },
    )
    return 0


def cmd_apply(args) -> int:
    op = load_operator(args.op)
    v = _load_field(args, op)
    av = apply_operator_spectral(op, v)
    if args.field_out:
        write_afld(args.field_out, av)
    if args.csv:
        write_field_csv(args.csv, av)
    _emit(
        args,
        {
            "operator": op.name,
            "dims": list(v.dims),
            "negSobolevOfA": neg_sobolev_norm(av),
            "l2OfA": av.l2_norm(),
            "afreeResidual": afree_residual(op, v),
        },
    )
    return 0


def _opt_params(args) -> dict:
    return {
        "grid": args.grid,
        "restarts": args.restarts,
        "max_iters": args.max_iters,
        "tol": args.tol,
        "seed": args.seed,
    }


def cmd_envelope(args) -> int:
    op = load_operator(args.op)
    g = _integrand(args, op.n)
    params = _opt_params(args)
    if args.xi_grid:
        lo, hi, p = _xi_grid(args.xi_grid, op.n)
        xis = envelope.grid_mesh(lo, hi, (p,) * op.n).reshape(op.n, -1).T
    elif args.xi:
        xis = _xi(args.xi, op.n)[None, :]
    else:
        raise InputError("one of --xi or --xi-grid is required")
    reports = envelope.sweep(op, g, xis, laminate_depth=args.laminate_depth, **params)
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow([f"xi{i + 1}" for i in range(op.n)] + ["qcaValue", "convexLB", "laminateUB", "converged"])
        for r in reports:
            writer.writerow([repr(x) for x in r.xi] + [repr(r.qca_value), repr(r.convex_lb), repr(r.laminate_ub), r.converged])
        atomic_write_text(args.csv, buf.getvalue())
    body = reports[0].to_dict() if len(reports) == 1 and not args.xi_grid else {"reports": [r.to_dict() for r in reports]}
    _emit(args, {"operator": op.name, "integrand": str(g), **body})
    if args.strict and not all(r.converged for r in reports):
        raise NumericalError("optimizer did not reach the gradient tolerance at every ξ")
    return 0


def cmd_idempotence(args) -> int:
    op = load_operator(args.op)
    g = _integrand(args, op.n)
    lo, hi, p = _xi_grid(args.xi_grid, op.n)
    rep = envelope.idempotence_check(op, g, lo, hi, p, violation_tol=args.violation_tol, **_opt_params(args))
    out = {"operator": op.name, "integrand": str(g), **rep.to_dict(), "tolerance": args.violation_tol}
    out["pass"] = rep.max_violation <= args.violation_tol
    _emit(args, out)
    return 0


def cmd_laminate(args) -> int:
    op = load_operator(args.op)
    g = _integrand(args, op.n)
    rep = envelope.laminate_upper_bound(op, g, _xi(args.xi, op.n), depth=args.depth, dir_samples=args.dir_samples)
    if rep.clamped:
        log.info("laminate splits left the table domain and were skipped")
    _emit(args, {"operator": op.name, "integrand": str(g), **rep.to_dict()})
    return 0


def cmd_ym(args) -> int:
    op = load_operator(args.op)
    profile = young.parse_profile(args.profile)
    js = _ints(args.j)
    if not js or min(js) < 1:
        raise InputError("--j needs positive integers")
    js = sorted(set(js))
    measures = []
    for j in js:
        osc = young.oscillate(op, profile, j, args.grid)
        measures.append(young.empirical_measure(osc, max_atoms=args.max_atoms, provenance=f"{profile.describe()} j={j} grid={args.grid}"))
    diags = young.sequence_diagnostics(op, profile, js, args.grid)
    out = {
        "operator": op.name,
        "profile": profile.describe(),
        "measures": [m.to_dict() for m in measures],
        "diagnostics": [d.to_dict() for d in diags],
        "w1Successive": [young.wasserstein1(a, b) for a, b in zip(measures, measures[1:])],
    }
    if args.integrand or args.integrand_file:
        g = _integrand(args, op.n)
        out["jensen"] = [young.jensen_certificate(m, g) for m in measures]
    if args.hist_csv:
        measures[-1].write_histogram_csv(args.hist_csv, bins=args.bins)
    _emit(args, out)
    return 0


def cmd_demo_remark(args) -> int:
    a, b = _floats(args.interval)
    if args.v_file:
        v = np.loadtxt(args.v_file, delimiter=",", ndmin=2)
    else:
        v0 = _floats(args.v)
        if len(v0) != 2:
            raise InputError("--v needs two components")
        v = np.tile(v0, (args.points, 1))
    lhs, rhs, relaxed = envelope.remark_relaxation_demo(v, (a, b))
    _emit(args, {"lhs": lhs, "rhs": rhs, "relaxed": relaxed})
    return 0


# ------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, op: bool = True) -> None:
    if op:
        p.add_argument("--op", required=True, help="operator: preset:NAME, NAME, or a JSON spec file")
    p.add_argument("--out", help="write the JSON report here (atomically) instead of stdout")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="RNG seed (default 0x5EED)")


def _integrand_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--integrand", help="preset name or inline expression in v1..vn")
    p.add_argument("--integrand-file", help="read the integrand expression from a file")


def _optimizer_flags(p: argparse.ArgumentParser, max_iters: int = 2000) -> None:
    p.add_argument("--grid", type=_positive(int), help="grid points per axis (default 64 for N=2, 16 for N=3)")
    p.add_argument("--restarts", type=_nonneg_int, default=8, help="random low-frequency restarts besides the zero field")
    p.add_argument("--max-iters", type=_positive(int), default=max_iters)
    p.add_argument("--tol", type=_positive(float), default=1e-6, help="gradient-norm tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aquasi", description="Numerics for A-free fields, A-quasiconvex envelopes and Young measures.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rank", help="constant-rank certificate of the symbol", description=(
        "Certify the constant-rank condition: sample rank A(w) over unit directions w and report "
        "the rank, or a witness pair of directions where it changes."))
    _common(p)
    p.add_argument("--samples", type=_positive(int), default=4096)
    p.add_argument("--tol", type=_positive(float), default=1e-9, help="relative singular-value cutoff")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("cone", help="sample the characteristic cone", description=(
        "Sample the characteristic cone (union of ker A(w) over unit w) and report the dimension of its span."))
    _common(p)
    p.add_argument("--samples", type=_positive(int), default=256)
    p.add_argument("--tol", type=_positive(float), default=1e-9)
    p.add_argument("--max-directions", type=_nonneg_int, default=16, help="directions listed in the report")
    p.set_defaults(func=cmd_cone)

    for name, func, what in (
        ("project", cmd_project, "Orthogonal projection of a periodic field onto spectrally A-free fields (the Fourier multiplier P(lambda)); the mean is preserved."),
        ("apply", cmd_apply, "Apply the operator A = sum A^i d_i spectrally to a periodic field and report its negative-Sobolev norm."),
    ):
        p = sub.add_parser(name, help=what.split(";")[0].split(" (")[0], description=what)
        _common(p)
        p.add_argument("--in", dest="input", help="AFLD field file (default: seeded random field)")
        p.add_argument("--grid", type=_positive(int), default=64, help="grid for the random field")
        p.add_argument("--field-out", help="write the resulting field as AFLD")
        p.add_argument("--csv", help="write the resulting field as CSV")
        p.set_defaults(func=func)

    p = sub.add_parser("envelope", help="numerical A-quasiconvexification Q_A g", description=(
        "Compute the A-quasiconvexification Q_A g(xi): minimize the torus average of g(xi + w) over mean-zero "
        "A-free periodic fields w, bracketed below by the convex envelope and reported with a lamination upper bound."))
    _common(p)
    _integrand_flags(p)
    p.add_argument("--xi", help="base point x1,...,xn")
    p.add_argument("--xi-grid", help="grid of base points lo,hi:pts")
    _optimizer_flags(p)
    p.add_argument("--laminate-depth", type=_nonneg_int, default=2, help="lamination rounds for the upper bound (0 skips)")
    p.add_argument("--csv", help="CSV table of xi, qcaValue, convexLB, laminateUB, converged")
    p.add_argument("--strict", action="store_true", help="exit 3 when any run misses the gradient tolerance")
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("idempotence", help="two-pass check Q_A(Q_A g) = Q_A g", description=(
        "Check idempotence of A-quasiconvexification: tabulate Q_A g on a grid of base points, "
        "quasiconvexify the interpolated table again and report the largest difference between passes."))
    _common(p)
    _integrand_flags(p)
    p.add_argument("--xi-grid", required=True, help="lo,hi:pts, e.g. -2,2:17")
    _optimizer_flags(p, max_iters=400)
    p.add_argument("--violation-tol", type=_positive(float), default=2e-2)
    p.set_defaults(func=cmd_idempotence)

    p = sub.add_parser("laminate", help="lamination upper bound for the closed envelope", description=(
        "Upper bound for the closed A-quasiconvex envelope from iterated two-point splittings "
        "along directions of the characteristic cone (finite laminates)."))
    _common(p)
    _integrand_flags(p)
    p.add_argument("--xi", required=True)
    p.add_argument("--depth", type=_nonneg_int, default=3)
    p.add_argument("--dir-samples", type=_positive(int), default=16)
    p.set_defaults(func=cmd_laminate)

    p = sub.add_parser("ym", help="Young measures generated by A-free oscillations", description=(
        "Oscillate an A-free profile at scales j (x -> w(jx)), estimate the homogeneous Young measure it generates, "
        "and report weak-convergence diagnostics and optional Jensen gaps."))
    _common(p)
    p.add_argument("--profile", required=True, help="two-atom:y=..;z=..;theta=..;w=.., sine:a=..;w=.., or a shipped name "
                   f"({', '.join(young.shipped_profiles())})")
    p.add_argument("--j", default="1,2,4,8", help="comma-separated scales")
    p.add_argument("--grid", type=_positive(int), default=256)
    p.add_argument("--max-atoms", type=_positive(int), default=young.DEFAULT_MAX_ATOMS)
    _integrand_flags(p)
    p.add_argument("--hist-csv", help="histogram CSV of the largest-j measure")
    p.add_argument("--bins", type=_positive(int), default=64)
    p.set_defaults(func=cmd_ym)

    p = sub.add_parser("demo-remark", help="relaxed value of the two-branch example", description=(
        "Evaluate the relaxed functional of the two-well example on an interval: the minimum of the integrals "
        "of (v1-1)^2+v2^2 and (v1+1)^2+v2^2 (trapezoid rule)."))
    _common(p, op=False)
    p.add_argument("--v", default="0,0", help="constant field value v1,v2")
    p.add_argument("--v-file", help="CSV of (v1, v2) samples at equispaced points")
    p.add_argument("--interval", default="0,1")
    p.add_argument("--points", type=_positive(int), default=2, help="samples for a constant --v (>= 2)")
    p.set_defaults(func=cmd_demo_remark)
    return parser


# flags whose values may legitimately start with '-' (e.g. --xi-grid -2,2:17)
_SIGNED_VALUE_FLAGS = {"--xi", "--xi-grid", "--v", "--interval"}


def _glue_signed_values(argv: list[str]) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else ""
        if tok in _SIGNED_VALUE_FLAGS and nxt[:1] == "-" and nxt[1:2] in set("0123456789."):
            out.append(f"{tok}={nxt}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_signed_values(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 2
    except NumericalError as exc:
        sys.stderr.write(dumps(exc.to_dict()))
        return 3
    except AquasiError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 3
    except (OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
