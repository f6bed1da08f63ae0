"""Command line entry point.

Exit codes: 0 all checks pass, 1 a verification check failed (the report is
still written), 2 input or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, acceptance, cubes, kernels, maximal, spectral
from .errors import HierarchyError, InputError, NumericalError
from .report import VerificationReport, dumps, fnv1a64, jsonable
from .space import (annuli_constant, binary_tree, connected_sum, cover_properties, doubling_profile,
                    exp_doubling_constant, grid, path, product_space, separated_cover, space_from_dict,
                    space_to_dict)


class Run:
    """Collects input digests and parameters for the run manifest."""

    def __init__(self, argv, args):
        self.argv = list(argv)
        self.args = args
        self.digests = {}
        self.start = time.perf_counter()

    def read(self, path_: str) -> bytes:
        try:
            data = sys.stdin.buffer.read() if path_ == "-" else open(path_, "rb").read()
        except OSError as exc:
            raise InputError(f"cannot read {path_}: {exc}") from None
        self.digests[path_] = fnv1a64(data)
        return data

    def space(self, path_: str):
        try:
            return space_from_dict(json.loads(self.read(path_)))
        except json.JSONDecodeError as exc:
            raise InputError(f"space file {path_} is not JSON: {exc}") from None

    def function(self, path_: str, n: int) -> np.ndarray:
        self.read(path_)  # digest
        if path_ == "-":
            raise InputError("functions cannot be read from stdin")
        return maximal.load_function(path_, n)

    def manifest(self) -> dict:
        params = {k: v for k, v in vars(self.args).items() if k not in ("func",)}
        return jsonable({"command": self.argv, "parameters": params, "seed": self.args.seed,
                         "inputs": self.digests, "version": __version__,
                         "wall_time": time.perf_counter() - self.start})


def _emit(run: Run, payload, out: str | None, csv_path: str | None = None) -> None:
    text = dumps(payload)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        with open(out + ".manifest.json", "w") as fh:
            fh.write(dumps(run.manifest()))
    else:
        sys.stdout.write(text)
    if csv_path:
        _write_csv(payload, csv_path)


def _write_csv(payload, path_: str) -> None:
    rows = []

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        elif isinstance(obj, (int, float, str, bool)) or obj is None:
            rows.append((prefix, obj))
    walk("", jsonable(payload))
    with open(path_, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        w.writerows(rows)


def _plot(path_: str, xs, ys, xlabel: str, ylabel: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path_, format="svg", metadata={"Date": None})
    plt.close(fig)


def _radius(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a radius: {text}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("radius must be positive")
    return v


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text}") from None


def _operator(run: Run, args, space):
    dom = args.domain
    if dom not in (None, "all", "interior"):
        dom = np.asarray(json.loads(run.read(dom)), dtype=np.int64)
    return spectral.DirichletOperator(space, domain=dom, mode=args.mode)


def _report_exit(rep_ok: bool) -> int:
    return 0 if rep_ok else 1


# -- handlers -------------------------------------------------------------------------
def cmd_gen(run: Run, args) -> int:
    kind = args.kind
    if kind == "path":
        sp = path(args.n, args.h)
    elif kind == "grid":
        sp = grid(args.dim, args.side, args.h)
    elif kind == "tree":
        sp = binary_tree(args.depth, args.h)
    elif kind == "connected-sum":
        try:
            parts = [tuple(int(v) for v in g.split("x")) for g in args.grids.split(",")]
        except ValueError:
            raise InputError("--grids takes DIMxSIDE,DIMxSIDE,...") from None
        sp = connected_sum(parts, args.neck, args.h)
    else:
        if not args.space:
            raise InputError("product needs --space")
        sp = product_space(run.space(args.space), args.n_line, args.h)
    _emit(run, space_to_dict(sp), args.out)
    return 0


def cmd_analyze(run: Run, args) -> int:
    sp = run.space(args.space)
    if args.what == "doubling":
        radii = args.radii or [args.radius]
        profs = [doubling_profile(sp, R) for R in radii]
        exp_d = exp_doubling_constant(sp, radii[-1])
        payload = {"profiles": [p.as_dict() for p in profs],
                   "exp_doubling": {"D_emp": exp_d.D_emp, "D_apriori": exp_d.D_apriori,
                                    "witness": exp_d.witness}}
        if args.plot:
            _plot(args.plot, radii, [p.A for p in profs], "R", "doubling constant A(R)")
        _emit(run, payload, args.out, args.csv)
        return 0
    if args.what == "annuli":
        _emit(run, {"R": args.radius, "annuli_constant": annuli_constant(sp, args.radius),
                    "A_squared": doubling_profile(sp, args.radius).A ** 2}, args.out, args.csv)
        return 0
    # cover
    delta = args.delta if args.delta else args.radius / 4.0
    ball = sp.ball(args.center, args.radius)
    centers = separated_cover(sp, ball, delta)
    props = cover_properties(sp, ball, delta, centers)
    rep = VerificationReport("cover", {"center": args.center, "radius": args.radius, "delta": delta,
                                       "centers": centers, **props})
    for key in ("separated", "covers", "disjoint_halves", "inside", "cardinality_ok"):
        rep.add(key, props[key])
    _emit(run, rep.to_dict(), args.out, args.csv)
    return _report_exit(rep.passed)


def cmd_cubes(run: Run, args) -> int:
    sp = run.space(args.space)
    if args.action == "build":
        try:
            H = cubes.build_hierarchy(sp, args.level_min, args.rho)
        except HierarchyError as exc:
            rep = VerificationReport("cube-hierarchy", {"rho": args.rho, "error": str(exc)})
            rep.add("construction", False, exc.witness)
            _emit(run, rep.to_dict(), args.out)
            return 1
        _emit(run, H.to_dict(), args.out)
        return 0
    if not args.hierarchy:
        raise InputError("verify needs --hierarchy")
    try:
        data = json.loads(run.read(args.hierarchy))
    except json.JSONDecodeError as exc:
        raise InputError(f"hierarchy file is not JSON: {exc}") from None
    H = cubes.hierarchy_from_dict(data, sp)
    rep = cubes.verify_hierarchy(sp, H)
    _emit(run, rep.to_dict(), args.out)
    return _report_exit(rep.passed)


def cmd_maximal(run: Run, args) -> int:
    sp = run.space(args.space)
    f = run.function(args.fn, sp.n)
    op = args.operator
    if op == "centered":
        res = maximal.centered_maximal(sp, f, args.delta)
    elif op == "uncentered":
        if math.isinf(args.delta):
            raise InputError("uncentered needs a finite --delta (radius bound)")
        res = maximal.uncentered_maximal(sp, f, args.delta)
    elif op == "fractional":
        res = maximal.fractional_maximal(sp, f, args.s, args.delta)
    else:
        if args.hierarchy:
            H = cubes.hierarchy_from_dict(json.loads(run.read(args.hierarchy)), sp)
        else:
            H = cubes.build_hierarchy(sp, rho=args.rho)
        res = maximal.MaximalResult(cubes.dyadic_maximal(H, f, args.delta, sp), "dyadic", {"rho": H.rho})
    if args.out and args.out.endswith(".csv"):
        res.to_csv(args.out)
        with open(args.out + ".manifest.json", "w") as fh:
            fh.write(dumps(run.manifest()))
    else:
        _emit(run, {"operator": res.operator, "values": res.values,
                    "params": {k: v for k, v in res.params.items() if k != "radius"}}, args.out)
    return 0


def cmd_morrey(run: Run, args) -> int:
    sp = run.space(args.space)
    V = run.function(args.potential, sp.n)
    N, (x, r) = maximal.morrey_norm(sp, V, args.p, args.radius, witness=True)
    _emit(run, {"N": N, "p": args.p, "R": args.radius, "witness": {"center": x, "radius": r}},
          args.out, args.csv)
    return 0


def cmd_spectral(run: Run, args) -> int:
    sp = run.space(args.space)
    op = _operator(run, args, sp)
    what = args.what
    if what == "lambda1":
        val = spectral.lambda1(op)
        if args.out:
            _emit(run, {"lambda1": val, "domain_size": op.n}, args.out)
        else:
            print(repr(float(val)))
        return 0
    if what == "fk-fit":
        radii = args.radii or [args.radius]
        fits = []
        for R in radii:
            b, rep = spectral.faber_krahn_fit(sp, op, R, args.eta, args.samples, args.seed)
            fits.append(rep.to_dict())
        if args.plot:
            _plot(args.plot, radii, [f["b"] for f in fits], "R", "fitted b")
        _emit(run, {"fits": fits}, args.out, args.csv)
        return 0
    if what == "heat":
        hk = spectral.heat_kernel(op, args.times)
        payload = {"times": hk.times, "n": hk.n, "domain": op.ids}
        if args.export:
            files = []
            for i, t in enumerate(hk.times):
                fn = args.export if len(hk.times) == 1 else f"{args.export}.{i}"
                hk.export(t, fn)
                files.append(fn)
            payload["files"] = files
        if args.fit_radius:
            payload["gaussian_fit"] = spectral.gaussian_bound_fit(sp, hk, args.fit_radius, args.c,
                                                                  args.lam, args.gamma)
        _emit(run, payload, args.out, args.csv)
        return 0
    if what == "riesz":
        if args.fit:
            _emit(run, spectral.riesz_bound_fit(sp, op, args.s), args.out, args.csv)
            return 0
        k = spectral.riesz_kernel(op, args.s)
        _emit(run, {"kind": k.kind, "params": k.params, "domain": k.ids, "values": k.values}, args.out)
        return 0
    # bessel
    if args.lam is None:
        raise InputError("bessel needs --lambda")
    k = spectral.bessel_kernel(op, args.s, args.lam)
    if args.gammas:
        rep = spectral.bessel_separation_check(sp, k, args.s, args.lam, args.gammas)
        _emit(run, rep.to_dict(), args.out, args.csv)
        return _report_exit(rep.passed)
    _emit(run, {"kind": k.kind, "params": k.params, "domain": k.ids, "values": k.values}, args.out)
    return 0


def cmd_verify(run: Run, args) -> int:
    sp = run.space(args.space)
    what = args.what
    if what == "domination":
        K = kernels.kernel_from_spec(sp, {"type": args.kernel, "s": args.s, "lambda": args.lam or 1.0,
                                          "exponent": -args.s})
        _, rep = kernels.domination_check(sp, K, args.delta, args.p, args.trials, args.seed)
        _emit(run, rep.to_dict(), args.out, args.csv)
        return _report_exit(rep.passed)
    op = _operator(run, args, sp)
    if what == "hardy":
        o = sp.with_coords_center() if args.center is None else args.center
        rep = spectral.hardy_check(sp, op, o, args.p, args.radius, seed=args.seed)
        _emit(run, rep.to_dict(), args.out, args.csv)
        return _report_exit(rep.passed)
    if not args.potential:
        raise InputError(f"{what} needs --potential")
    V = run.function(args.potential, sp.n)
    if what == "fefferman-phong":
        C = spectral.fefferman_phong_constant(op, V, args.p, args.radius, args.seed)
        rep = VerificationReport("fefferman-phong", {"C_emp": C, "p": args.p, "R": args.radius})
        rep.add("routes_agree", True, None)  # a disagreement raises NumericalError (exit 3)
        _emit(run, rep.to_dict(), args.out, args.csv)
        return 0
    if what == "weak-positivity":
        if math.isinf(args.radius):
            raise InputError("weak-positivity needs a finite --radius")
        rep = spectral.positivity_checks(op, V, args.p, args.radius, Cp=args.cp, seed=args.seed)
        _emit(run, rep.to_dict(), args.out, args.csv)
        return _report_exit(rep.passed)
    if what == "spectrum-bounds":
        res = spectral.spectrum_bounds(sp, op, V, args.p, args.c1, args.cp, seed=args.seed)
        rep = VerificationReport("spectrum-bounds", res.to_dict())
        rep.add("lower_bound", res.lower <= -res.exact, res.witnesses.get("lower"))
        rep.add("upper_bound", -res.exact <= res.upper, res.witnesses.get("upper"))
        _emit(run, rep.to_dict(), args.out, args.csv)
        return _report_exit(rep.passed)
    # product-identity
    rep = spectral.product_identity_check(sp, op, V, args.n_line, args.h)
    _emit(run, rep.to_dict(), args.out, args.csv)
    return _report_exit(rep.passed)


def cmd_suite(run: Run, args) -> int:
    res = acceptance.run_suite(args.scale, args.seed)
    for r in res["criteria"]:
        print(acceptance.summary_line(r), file=sys.stderr)
    _emit(run, res, args.out, args.csv)
    return 0 if res["passed"] else 1


# -- parser ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    common.add_argument("--out", default=None, help="report path (default: stdout)")
    common.add_argument("--csv", default=None, help="also write scalar results as key,value CSV")
    common.add_argument("--plot", default=None, help="SVG file for sweeps")

    p = argparse.ArgumentParser(prog="mmlab", description="Metric measure space analysis toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a space")
    g.add_argument("kind", choices=["grid", "path", "tree", "connected-sum", "product"])
    g.add_argument("--n", type=int, default=11)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--side", type=int, default=11)
    g.add_argument("--depth", type=int, default=5)
    g.add_argument("--h", type=float, default=1.0)
    g.add_argument("--grids", default="2x11,2x11")
    g.add_argument("--neck", type=int, default=5)
    g.add_argument("--space", default=None)
    g.add_argument("--n-line", type=int, default=11)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze", parents=[common], help="doubling, annuli and cover constants")
    a.add_argument("what", choices=["doubling", "annuli", "cover"])
    a.add_argument("--space", required=True)
    a.add_argument("--radius", type=_radius, default=math.inf)
    a.add_argument("--radii", type=_floats, default=None)
    a.add_argument("--center", type=int, default=0)
    a.add_argument("--delta", type=float, default=None)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("cubes", parents=[common], help="build or verify dyadic cubes")
    c.add_argument("action", choices=["build", "verify"])
    c.add_argument("--space", required=True)
    c.add_argument("--rho", type=float, default=8.0)
    c.add_argument("--level-min", type=int, default=None)
    c.add_argument("--hierarchy", default=None)
    c.set_defaults(func=cmd_cubes)

    m = sub.add_parser("maximal", parents=[common], help="maximal functions")
    m.add_argument("operator", choices=["centered", "uncentered", "fractional", "dyadic"])
    m.add_argument("--space", required=True)
    m.add_argument("--fn", required=True)
    m.add_argument("-s", type=float, default=0.0)
    m.add_argument("--delta", type=_radius, default=math.inf)
    m.add_argument("--rho", type=float, default=8.0)
    m.add_argument("--hierarchy", default=None)
    m.set_defaults(func=cmd_maximal)

    mo = sub.add_parser("morrey", parents=[common], help="Morrey norm of a potential")
    mo.add_argument("--space", required=True)
    mo.add_argument("--potential", required=True)
    mo.add_argument("--p", type=float, default=2.0)
    mo.add_argument("--radius", type=_radius, default=math.inf)
    mo.set_defaults(func=cmd_morrey)

    op_args = argparse.ArgumentParser(add_help=False)
    op_args.add_argument("--space", default="-")
    op_args.add_argument("--domain", default=None, help="all, interior or a JSON list of point ids")
    op_args.add_argument("--mode", choices=["free", "dirichlet"], default="free")

    s = sub.add_parser("spectral", parents=[common, op_args], help="eigenvalues and kernels")
    s.add_argument("what", choices=["lambda1", "fk-fit", "heat", "riesz", "bessel"])
    s.add_argument("--radius", type=_radius, default=4.0)
    s.add_argument("--radii", type=_floats, default=None)
    s.add_argument("--eta", type=float, default=None)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--times", type=_floats, default=[1.0])
    s.add_argument("--export", default=None)
    s.add_argument("--fit-radius", type=float, default=None)
    s.add_argument("--c", type=float, default=5.0)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("-s", type=float, default=1.0)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--gammas", type=_floats, default=None)
    s.add_argument("--fit", action="store_true", help="riesz: fit the pointwise bound instead of dumping")
    s.set_defaults(func=cmd_spectral)

    v = sub.add_parser("verify", parents=[common, op_args], help="verification harnesses")
    v.add_argument("what", choices=["fefferman-phong", "weak-positivity", "hardy", "spectrum-bounds",
                                    "product-identity", "domination"])
    v.add_argument("--potential", default=None)
    v.add_argument("--p", type=float, default=2.0)
    v.add_argument("--radius", type=_radius, default=math.inf)
    v.add_argument("--center", type=int, default=None)
    v.add_argument("--c1", type=float, default=None)
    v.add_argument("--cp", type=float, default=None)
    v.add_argument("--n-line", type=int, default=11)
    v.add_argument("--h", type=float, default=1.0)
    v.add_argument("--kernel", choices=["riesz", "bessel", "power", "constant"], default="riesz")
    v.add_argument("-s", type=float, default=1.0)
    v.add_argument("--lambda", dest="lam", type=float, default=None)
    v.add_argument("--delta", type=float, default=8.0)
    v.add_argument("--trials", type=int, default=30)
    v.set_defaults(func=cmd_verify)

    su = sub.add_parser("suite", parents=[common], help="acceptance battery")
    su.add_argument("which", choices=["acceptance"])
    su.add_argument("--scale", choices=["small", "full"], default="small")
    su.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    env_seed = os.environ.get("MMLAB_SEED")
    if env_seed is not None:
        try:
            args.seed = int(env_seed)
        except ValueError:
            print("error: MMLAB_SEED must be an integer", file=sys.stderr)
            return 2
    run = Run(argv, args)
    limiter = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    try:
        with limiter:
            return args.func(run, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except HierarchyError as exc:
        print(f"hierarchy error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
