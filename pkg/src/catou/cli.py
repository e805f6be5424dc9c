"""Command-line interface: simulation, solving, sampling, verification.

Every subcommand is seeded explicitly and writes static artifacts (CSV,
JSON, SVG); rerunning a command with the same arguments reproduces the
output files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dual_pde, gaussian_field, harness, moments, superprocess
from .kernels import HeatKernelParams, padded_grid
from .plotting import emit_plot


def _add_common(p):
    p.add_argument("--seed", type=int, required=True,
                   help="master seed (mandatory; no wall-clock seeding)")
    p.add_argument("--out", type=str, default="out",
                   help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catou",
        description="catalytic Ornstein-Uhlenbeck laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-sbm",
                       help="simulate one branching-particle catalyst path")
    _add_common(p)
    p.add_argument("--n-scale", type=int, default=200,
                   help="particle mass scale N (mass 1/N per particle)")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=None,
                   help="step size (default 1/(2N))")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=1)

    p = sub.add_parser("solve-dual",
                       help="solve the dual evolution equation")
    _add_common(p)
    p.add_argument("--lam", type=float, default=1.0,
                   help="constant initial data")
    p.add_argument("--forcing", type=float, default=0.0,
                   help="constant forcing level")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.002)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--stable-index", type=float, default=2.0)
    p.add_argument("--grid-points", type=int, default=1024)

    p = sub.add_parser("sample-field",
                       help="simulate a catalyst and sample the quenched "
                            "field at points")
    _add_common(p)
    p.add_argument("--n-scale", type=int, default=300)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--kappa-field", type=float, default=0.5)
    p.add_argument("--points", type=float, nargs="+",
                   default=[-1.0, -0.5, 0.0, 0.5, 1.0])
    p.add_argument("--replicas", type=int, default=100)

    p = sub.add_parser("moments", help="tabulate analytic moment values")
    _add_common(p)
    p.add_argument("--t", type=float, default=1.0)

    p = sub.add_parser("verify", help="run one named check")
    _add_common(p)
    p.add_argument("check", choices=sorted(harness.CHECKS))
    p.add_argument("--config", type=str, default=None,
                   help="JSON file with per-check parameter overrides")
    p.add_argument("--replicas", type=int, default=None,
                   help="override the replica count")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("verify-all", help="run every named check")
    _add_common(p)
    p.add_argument("--config", type=str, default=None,
                   help="JSON file mapping check names to overrides")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("plot", help="plot columns of a CSV file to SVG")
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--x-col", type=str, required=True)
    p.add_argument("--y-col", type=str, required=True)
    p.add_argument("--loglog", action="store_true")
    return parser


def _cmd_simulate_sbm(args) -> int:
    params = HeatKernelParams(kappa=args.kappa, d=args.dim)
    dt = args.dt if args.dt is not None else 1.0 / (2.0 * args.n_scale)
    initial = superprocess.delta_measure(
        0.0 if args.dim == 1 else np.zeros(args.dim), 1.0, args.n_scale,
        d=args.dim)
    path = superprocess.simulate_sbm(
        initial, args.n_scale, args.horizon, dt, params, seed=args.seed,
        coarse_step_threshold=None)
    os.makedirs(args.out, exist_ok=True)
    superprocess.write_path(path, os.path.join(args.out, "catalyst.csv"),
                            os.path.join(args.out, "catalyst.json"))
    print(f"wrote {args.out}/catalyst.csv "
          f"({len(path.times)} slices, final mass "
          f"{path.states[-1].total_mass:.4f})")
    return 0


def _cmd_solve_dual(args) -> int:
    params = HeatKernelParams(kappa=args.kappa, d=1,
                              stable_index=args.stable_index)
    grid = padded_grid(-2.0, 2.0, args.t, params, n=args.grid_points)
    forcing = None
    if args.forcing != 0.0:
        level = float(args.forcing)
        forcing = lambda s: np.full(grid.shape, level)
    problem = dual_pde.DualProblem(
        grid=grid, psi=np.full(grid.shape, args.lam), forcing=forcing,
        beta=args.beta, params=params, t1=args.t)
    sol = dual_pde.solve_dual(problem, dt=args.dt)
    os.makedirs(args.out, exist_ok=True)
    dual_pde.write_solution(sol, os.path.join(args.out, "dual.csv"),
                            os.path.join(args.out, "dual.json"))
    print(f"wrote {args.out}/dual.csv (final sup {float(sol.final.max()):.6f})")
    return 0


def _cmd_sample_field(args) -> int:
    cat_params = HeatKernelParams(kappa=1.0, d=1)
    n = args.n_scale
    path = superprocess.simulate_sbm(
        superprocess.delta_measure(0.0, 1.0, n), n, args.t,
        1.0 / (2.0 * n), cat_params, seed=args.seed,
        coarse_step_threshold=None)
    cov = gaussian_field.quenched_covariance(
        path, np.asarray(args.points), args.t, args.kappa_field)
    samples = gaussian_field.sample_quenched_field(
        cov, args.replicas, seed=args.seed + 1)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "field_samples.csv")
    with open(out_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["replica", "time", "point", "value"])
        for r in range(samples.shape[0]):
            for j, x in enumerate(cov.points):
                w.writerow([r, repr(float(args.t)), repr(float(x)),
                            repr(float(samples[r, j]))])
    meta = {"kind": path.kind, "n_scale": n, "t": args.t,
            "kappa_field": args.kappa_field, "seed": args.seed,
            "replicas": args.replicas}
    harness.write_json(meta, os.path.join(args.out, "field_samples.json"))
    print(f"wrote {out_csv} ({args.replicas} replicas x "
          f"{len(args.points)} points)")
    return 0


def _cmd_moments(args) -> int:
    t = args.t
    rows = [
        ("atom_variance_origin", moments.annealed_atom_variance(t, 0.0, 1)),
        ("atom_variance_offset", moments.annealed_atom_variance(t, 1.0, 1)),
        ("first_moment_origin", moments.first_moment_density(t, 0.0)),
        ("pair_kernel_lebesgue", moments.second_moment_density(
            moments.MomentQuery(t, t, 0.0, 0.0, "lebesgue"))),
        ("pair_kernel_delta0", moments.second_moment_density(
            moments.MomentQuery(t, t, 0.0, 0.0, "delta0"))),
        ("integrated_pair_mass", moments.integrated_second_moment(t, t)),
        ("l2_fourth_moment", moments.fourth_moment_l2(t).value),
    ]
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "moments.csv")
    with open(out_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["quantity", "t", "value"])
        for name, value in rows:
            w.writerow([name, repr(float(t)), repr(float(value))])
    for name, value in rows:
        print(f"{name}: {value:.8f}")
    print(f"wrote {out_csv}")
    return 0


def _load_overrides(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _cmd_verify(args) -> int:
    params = _load_overrides(args.config).get(args.check, {}) \
        if args.config else {}
    if args.replicas is not None:
        key = "samples" if "samples" in harness.CHECKS[args.check].defaults \
            else "replicas"
        if key in harness.CHECKS[args.check].defaults:
            params[key] = args.replicas
    report = harness.run_check(args.check, params=params, seed=args.seed,
                               out_dir=args.out, threads=args.threads)
    n_pass = sum(r.passed for r in report.rows)
    print(f"{'PASS' if report.passed else 'FAIL'} {args.check} "
          f"({n_pass}/{len(report.rows)} rows)")
    return 0 if report.passed else 1


def _cmd_verify_all(args) -> int:
    overrides = _load_overrides(args.config)
    if args.replicas is not None:
        for name, spec in harness.CHECKS.items():
            key = "samples" if "samples" in spec.defaults else "replicas"
            if key in spec.defaults:
                overrides.setdefault(name, {})[key] = args.replicas
    combined = harness.verify_all(seed=args.seed, out_dir=args.out,
                                  threads=args.threads,
                                  params_by_check=overrides)
    print("all checks passed" if combined["all_passed"]
          else "some checks FAILED")
    return 0 if combined["all_passed"] else 1


def _cmd_plot(args) -> int:
    xs, ys = [], []
    with open(args.input, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            xs.append(float(row[args.x_col]))
            ys.append(float(row[args.y_col]))
    emit_plot([(xs, ys, args.y_col)], args.out, title=args.input,
              xlabel=args.x_col, ylabel=args.y_col, loglog=args.loglog)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate-sbm": _cmd_simulate_sbm,
        "solve-dual": _cmd_solve_dual,
        "sample-field": _cmd_sample_field,
        "moments": _cmd_moments,
        "verify": _cmd_verify,
        "verify-all": _cmd_verify_all,
        "plot": _cmd_plot,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
