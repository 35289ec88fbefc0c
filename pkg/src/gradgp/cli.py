"""Command-line experiment runner.

    gradgp lin      quadratic objective: CG vs GP-X vs GP-H
    gradgp nonlin   relaxed Rosenbrock: BFGS vs GP-H vs GP-X
    gradgp contour  function reconstruction from gradients on a 2-D slice
    gradgp hmc      plain HMC vs GP-gradient HMC on the banana target
    gradgp bench    wall time of the exact structured solve against D
    gradgp selftest structured paths against the dense oracles

Every subcommand writes CSV files (and SVG figures unless ``--no-plot``) to
``--out``. Wall-clock columns are only filled with ``--timing`` so that reruns
with the same flags are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import GradGPError
from .gram import DENSE_CAP, GradientDataset, build_gram, materialize_dense, mvm
from .hmc import write_samples_csv
from .kernels import make_kernel, parse_config_text
from .posterior import infer_gradient, infer_hessian
from .reference import (OracleReport, compare, dense_solve_oracle, fd_dense_gram, hessian_by_contraction)
from .solvers import (REPORT_HEADER, quadratic_identity_residual, solve_cg,
                      solve_quadratic_analytic, solve_woodbury, SolverConfig)


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _plotting():
    from . import plotting
    return plotting


# ---------------------------------------------------------------------------
# subcommands


def cmd_lin(args) -> int:
    res = ex.run_lin(args.dim, args.seed, args.tol)
    out = args.out
    rows = [(m, i, float(v)) for m, c in res.curves.items() for i, v in enumerate(c)]
    _write_rows(out / "lin_trace.csv", ["method", "iter", "rel_grad_norm"], rows)
    its = res.iterations(args.tol)
    _write_rows(out / "lin_summary.csv", ["method", "iterations_to_tol"],
                [(m, "" if n is None else n) for m, n in its.items()])
    if args.plot:
        _plotting().convergence_plot(res.curves, out / "lin.svg", tol=args.tol)
    for m, n in its.items():
        print(f"{m:5s} iterations to {args.tol:g}: {n if n is not None else 'not reached'}")
    return 0


def cmd_nonlin(args) -> int:
    traces = ex.run_nonlin(args.dim, args.seed, args.tol, args.window, args.max_iters)
    out = args.out
    rows = []
    for m, tr in traces.items():
        rel = tr.rel_grad_norms()
        for rec, r in zip(tr.records, rel):
            rows.append((m, rec["iter"], rec["f"], rec["grad_norm"], float(r)))
        tr.write_csv(out / f"nonlin_{m.lower().replace('-', '')}.csv", timing=args.timing)
    _write_rows(out / "nonlin_trace.csv",
                ["method", "iter", "f", "grad_norm", "rel_grad_norm"], rows)
    if args.plot:
        _plotting().convergence_plot({m: t.rel_grad_norms() for m, t in traces.items()},
                                     out / "nonlin.svg", tol=args.tol)
    for m, tr in traces.items():
        print(f"{m:5s} {tr.message}: {tr.iterations} iterations, "
              f"{tr.evaluations} evaluations, {tr.fallbacks} fallbacks")
    return 0


def cmd_contour(args) -> int:
    if args.dense and args.n * args.dim > DENSE_CAP:
        raise GradGPError(f"dense mode needs N*D <= {DENSE_CAP}, got {args.n * args.dim}")
    res = ex.run_contour(args.dim, args.n, args.seed, args.grid, args.lengthscale, args.tol)
    out = args.out
    xx, yy = np.meshgrid(res.axis, res.axis)
    for name, vals in (("true", res.true), ("inferred", res.inferred)):
        _write_rows(out / f"contour_{name}.csv", ["x1", "x2", "value"],
                    zip(xx.ravel(), yy.ravel(), vals.ravel()))
    rep = res.report
    bound = 3 * args.n * args.dim + 3 * args.n ** 2
    _write_rows(out / "contour_solver.csv", REPORT_HEADER.split(",") + ["storage", "bound_3nd_3n2"],
                [rep.csv_row(args.timing).split(",") + [rep.storage, bound]])
    if args.plot:
        p = _plotting()
        p.heatmap_plot(res.axis, res.axis, res.true, out / "contour_true.svg", "true", (0, 0))
        p.heatmap_plot(res.axis, res.axis, res.inferred, out / "contour_inferred.svg",
                       "inferred", tuple(res.argmin))
    print(f"CG: {rep.iterations} iterations (limit N*D = {args.n * args.dim}), "
          f"residual {rep.residual:.2e}, converged {rep.converged}")
    print(f"storage {rep.storage} numbers, 3ND+3N^2 = {bound}")
    print(f"inferred argmin on the slice: ({res.argmin[0]:.3g}, {res.argmin[1]:.3g})")
    return 0


def cmd_hmc(args) -> int:
    seeds = [args.seed + k for k in range(args.chains)]
    runs = ex.run_hmc(args.dim, seeds, args.samples, args.rotated, args.eps)
    out = args.out
    with open(out / "hmc_summary.jsonl", "w", encoding="utf-8") as fh:
        for s, run in zip(seeds, runs):
            write_samples_csv(out / f"hmc_plain_s{s}.csv", run.plain, run.target)
            write_samples_csv(out / f"hmc_gpg_s{s}.csv", run.gpg, run.target)
            rec = {"seed": s, "dim": args.dim, "rotated": args.rotated,
                   "acceptance_hmc": run.plain.acceptance,
                   "acceptance_gpg": run.gpg.acceptance,
                   "training_iterations": run.log.iterations,
                   "phase1_iterations": run.log.phase1_iterations,
                   "surrogate_gradient_obs": run.log.true_grad_obs,
                   "gpg_sampling_true_grad_calls": run.gpg.true_grad_calls,
                   "divergences_hmc": run.plain.divergences,
                   "divergences_gpg": run.gpg.divergences}
            fh.write(json.dumps(rec) + "\n")
            print(f"seed {s}: acceptance HMC {run.plain.acceptance:.3f}, "
                  f"GPG-HMC {run.gpg.acceptance:.3f} "
                  f"({run.log.true_grad_obs} gradient observations, "
                  f"{run.log.iterations} training iterations)")
    if args.plot:
        run = runs[0]
        panels = {}
        for name, ch in (("HMC", run.plain), ("GPG-HMC", run.gpg)):
            Y = np.array([run.target.to_aligned(x)[:2] for x in ch.samples])
            panels[name] = (Y[:, 0], Y[:, 1])
        _plotting().scatter_plot(panels, out / "hmc.svg")
    return 0


def cmd_bench(args) -> int:
    dims = [int(d) for d in args.dims.split(",") if d.strip()]
    res = ex.run_bench(dims, args.n, args.reps, args.seed)
    ratios = [""] + res.ratios
    _write_rows(args.out / "bench.csv", ["dim", "n", "median_s", "ratio"],
                [(d, args.n, t, r) for d, t, r in zip(res.dims, res.times, ratios)])
    if args.plot:
        _plotting().scaling_plot(res.dims, res.times, args.out / "bench.svg")
    for d, t, r in zip(res.dims, res.times, ratios):
        print(f"D={d:6d}  median {t * 1e3:8.3f} ms  ratio {r if r == '' else f'{r:.2f}'}")
    return 0


SELFTEST_KERNELS = [
    ("polynomial", {"p": 3}),
    ("exponential", {}),
    ("squared_exponential", {}),
    ("matern", {"nu": Fraction(3, 2)}),
    ("matern", {"nu": Fraction(5, 2)}),
    ("rational_quadratic", {"alpha": 1.5}),
]


def _selftest_kernel(rng, D, family, params):
    if family in ("polynomial", "exponential"):
        lam = rng.uniform(0.2, 1.0, D) / D
        return make_kernel(family, "dot", lam, 0.3 * rng.standard_normal(D), **params)
    return make_kernel(family, "stationary", rng.uniform(0.2, 1.0, D), **params)


def selftest_reports(seed: int = 0) -> list:
    """Compact oracle suite over every kernel family."""
    rng = np.random.default_rng(seed)
    reports = []
    for family, params in SELFTEST_KERNELS:
        name = family if not params else f"{family}{list(params.values())[0]}"
        D, N = 5, 2
        spec = _selftest_kernel(rng, D, family, params)
        X = rng.standard_normal((D, N))
        G = rng.standard_normal((D, N))
        gram = build_gram(GradientDataset(X, G), spec)
        A = materialize_dense(gram)
        reports.append(compare(f"{name}: gram vs finite differences",
                               A, fd_dense_gram(spec, X, h=1e-6), 1e-5))
        V = rng.standard_normal((D, N))
        reports.append(compare(f"{name}: mvm vs dense", mvm(gram, V).ravel(order="F"),
                               A @ V.ravel(order="F"), 1e-12))
        Z_dense = dense_solve_oracle(A, G)
        reports.append(compare(f"{name}: woodbury vs dense", solve_woodbury(gram, G).Z,
                               Z_dense, 1e-8))
        cg = solve_cg(gram, G, SolverConfig(rel_tolerance=1e-10, max_iterations=50 * D * N))
        reports.append(compare(f"{name}: cg vs dense", cg.Z, Z_dense, 1e-6))
        xq = rng.standard_normal(D)
        reports.append(compare(f"{name}: hessian vs tensor contraction",
                               infer_hessian(xq, gram, Z_dense).dense(),
                               hessian_by_contraction(spec, xq, X, Z_dense), 1e-8))
    D, N = 20, 4
    Q = np.linalg.qr(rng.standard_normal((D, D)))[0]
    Amat = Q @ np.diag(rng.uniform(0.5, 10, D)) @ Q.T
    X = rng.standard_normal((D, N))
    gc = rng.standard_normal(D)
    data = GradientDataset(X, Amat @ X + gc[:, None], gc)
    spec = make_kernel("polynomial", "dot", 1.0, np.zeros(D), p=2)
    quad = solve_quadratic_analytic(data, spec)
    wood = solve_woodbury(build_gram(data, spec), data.rhs())
    # the quadratic-kernel Gram is singular (antisymmetric inner null space), so
    # the representers are compared through what they predict
    Xq = rng.standard_normal((D, 3))
    reports.append(compare("quadratic: analytic vs woodbury, gradients",
                           infer_gradient(Xq, quad.gram, quad.Z),
                           infer_gradient(Xq, wood.gram, wood.Z), 1e-8))
    reports.append(compare("quadratic: analytic vs woodbury, hessian",
                           infer_hessian(Xq[:, 0], quad.gram, quad.Z).dense(),
                           infer_hessian(Xq[:, 0], wood.gram, wood.Z).dense(), 1e-8))
    res = quadratic_identity_residual(quad, data)
    reports.append(OracleReport("quadratic: verification identity", res, 0.0, res, 1e-10))
    return reports


def cmd_selftest(args) -> int:
    if args.dump_gram:
        rng = np.random.default_rng(args.seed)
        D, N = 4, 3
        X = rng.standard_normal((D, N))
        spec = make_kernel("squared_exponential", "stationary", 1.0)
        A = materialize_dense(build_gram(GradientDataset(X, np.zeros((D, N))), spec))
        with open(args.dump_gram, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for row in A:
                w.writerow([f"{v:.17g}" for v in row])
    reports = selftest_reports(args.seed)
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} oracle checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# argument handling


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--dim", type=int, default=100, help="problem dimension D")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads")
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True,
                   help="write SVG figures")
    p.add_argument("--timing", action="store_true",
                   help="fill wall-clock columns (breaks byte-identical reruns)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="gradgp", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lin", parents=[common], help="quadratic objective")
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_lin)

    p = sub.add_parser("nonlin", parents=[common], help="relaxed Rosenbrock")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=1000)
    p.set_defaults(func=cmd_nonlin)

    p = sub.add_parser("contour", parents=[common], help="reconstruction from gradients")
    p.add_argument("--n", type=int, default=200, help="number of gradient observations")
    p.add_argument("--grid", type=int, default=41, help="grid points per slice axis")
    p.add_argument("--lengthscale", type=float, default=1e-3,
                   help="isotropic metric Lambda (inverse squared lengthscale)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--dense", action="store_true",
                   help="refuse runs whose dense Gram would exceed the size cap")
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("hmc", parents=[common], help="banana target sampling")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--chains", type=int, default=1, help="independent seeds from --seed")
    p.add_argument("--rotated", action="store_true")
    p.add_argument("--eps", type=float, default=None, help="override the leapfrog step")
    p.set_defaults(func=cmd_hmc)

    p = sub.add_parser("bench", parents=[common], help="linear-in-D timing")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--dims", default="1000,2000,4000,8000")
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", parents=[common], help="oracle checks")
    p.add_argument("--dump-gram", type=Path, default=None,
                   help="write a small dense Gram matrix as CSV")
    p.set_defaults(func=cmd_selftest)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None:
        values = parse_config_text(known.config.read_text(encoding="utf-8"))
        # string defaults go through each option's type conversion
        subparsers = parser._subparsers._group_actions[0].choices.values()
        known_keys = set()
        for sp in subparsers:
            dests = {a.dest for a in sp._actions} - {"help", "func", "config"}
            mine = {k: _config_value(sp, k, v) for k, v in values.items() if k in dests}
            known_keys |= set(mine)
            sp.set_defaults(**mine)
        unknown = set(values) - known_keys
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
    return parser.parse_args(argv)


def _config_value(sp: argparse.ArgumentParser, key: str, value: str):
    for a in sp._actions:
        if a.dest == key and isinstance(a, argparse.BooleanOptionalAction):
            return value.lower() in ("1", "true", "yes", "on")
        if a.dest == key and a.type is None and a.const is True:
            return value.lower() in ("1", "true", "yes", "on")
    return value


def main(argv=None) -> int:
    args = parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=args.threads):
        try:
            return args.func(args)
        except GradGPError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
