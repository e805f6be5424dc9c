"""Named verification checks, experiment configs, reports and artifacts.

Each registered check verifies exactly one analytic claim by comparing a
Monte Carlo estimate against a deterministic evaluation (or by running a
purely deterministic property suite). Pass criteria are pre-registered:
statistical rows pass iff |z| <= 3 (unless the row carries its own
threshold), deterministic rows iff the error is within tolerance, bound
rows iff the estimate lies in its stated interval.

Determinism contract: for a fixed (config, seed) the report and all CSV
artifacts are byte-identical across runs and across thread counts. Wall
times are therefore written to a separate timings file, never into the
report. Replica-level parallelism uses one derived stream per replica and
an index-ordered reduction, so scheduling cannot reorder arithmetic.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy
from scipy.special import exp1

from . import affine, dual_pde, gaussian_field, moments, stats, superprocess
from .kernels import (GaussianBump, HeatKernelParams, dirichlet_eigensystem,
                      heat_kernel, padded_grid, periodic_grid)
from .rngs import stream

Z_THRESHOLD = 3.0


# ---------------------------------------------------------------------------
# Report structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    quantity: str
    mode: str                      # statistical | deterministic | bound
    estimate: float
    analytic: float | None = None
    se: float | None = None
    tol: float | None = None
    lo: float | None = None
    hi: float | None = None
    z_threshold: float = Z_THRESHOLD

    @property
    def z(self) -> float | None:
        if self.mode != "statistical":
            return None
        return stats.z_score(self.estimate, self.analytic, self.se)

    @property
    def passed(self) -> bool:
        if self.mode == "statistical":
            return abs(self.z) <= self.z_threshold
        if self.mode == "deterministic":
            return abs(self.estimate - self.analytic) <= self.tol
        if self.mode == "bound":
            lo = -math.inf if self.lo is None else self.lo
            hi = math.inf if self.hi is None else self.hi
            return lo <= self.estimate <= hi
        raise ValueError(f"unknown row mode {self.mode}")

    def as_dict(self) -> dict:
        d = {"quantity": self.quantity, "mode": self.mode,
             "estimate": self.estimate, "analytic": self.analytic,
             "se": self.se, "z": self.z, "tol": self.tol,
             "lo": self.lo, "hi": self.hi, "pass": self.passed}
        if self.mode == "statistical" and self.z_threshold != Z_THRESHOLD:
            d["z_threshold"] = self.z_threshold
        return d


@dataclass(frozen=True)
class Report:
    check: str
    claim: str
    seed: int
    config: dict
    environment: dict
    rows: tuple

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def as_dict(self) -> dict:
        return {"check": self.check, "claim": self.claim, "seed": self.seed,
                "config": self.config, "environment": self.environment,
                "rows": [r.as_dict() for r in self.rows],
                "passed": self.passed}


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one check run."""

    check: str
    seed: int
    params: dict = field(default_factory=dict)
    out_dir: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.check not in CHECKS:
            raise ValueError(f"unknown check {self.check!r}; known: "
                             + ", ".join(sorted(CHECKS)))
        if self.seed is None:
            raise ValueError("a seed is mandatory; wall-clock seeding is not "
                             "supported")
        defaults = CHECKS[self.check].defaults
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys for {self.check}: "
                             f"{sorted(unknown)}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def merged(self) -> dict:
        cfg = dict(CHECKS[self.check].defaults)
        cfg.update(self.params)
        return cfg


def environment_fingerprint() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def indexed_map(fn, n: int, threads: int = 1) -> list:
    """results[i] = fn(i), reduced in index order regardless of scheduling."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _se_of_variance(x: np.ndarray) -> float:
    """Standard error of the unbiased sample variance."""
    n = x.size
    m = x.mean()
    m2 = np.mean((x - m) ** 2)
    m4 = np.mean((x - m) ** 4)
    var_of_var = (m4 - (n - 3) / (n - 1) * m2 ** 2) / n
    return math.sqrt(max(var_of_var, 0.0))


def _mean_row(quantity, samples, analytic, z_threshold=Z_THRESHOLD) -> CheckRow:
    x = np.asarray(samples, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    return CheckRow(quantity, "statistical", float(x.mean()), analytic, se,
                    z_threshold=z_threshold)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def _atom_quadrature_grid(t: float, n_uniform: int, ratio: float,
                          eps: float) -> np.ndarray:
    """Uniform grid plus geometric refinement of the last decade before t."""
    pts = list(np.linspace(0.0, 0.9 * t, n_uniform + 1))
    tau = 0.1 * t
    while tau > eps:
        tau *= ratio
        pts.append(t - tau)
    return np.array(pts)


def check_atom_variance_quarter(cfg, seed, threads):
    """Annealed variance of the moving-atom field at the origin (d = 1)."""
    t, x = cfg["t"], cfg["x"]
    grid = _atom_quadrature_grid(t, cfg["n_uniform"], cfg["ratio"], cfg["eps"])
    tau = t - grid
    rng = stream(seed, 101)
    estimates = np.empty(cfg["replicas"])
    chunk = cfg["chunk"]
    done = 0
    while done < cfg["replicas"]:
        m = min(chunk, cfg["replicas"] - done)
        incr = rng.standard_normal((m, len(grid) - 1)) * np.sqrt(np.diff(grid))
        b = np.concatenate([np.zeros((m, 1)), np.cumsum(incr, axis=1)], axis=1)
        # quenched variance integrand for the half-Laplacian field kernel
        vals = np.exp(-((b - x) ** 2) / tau) / (2.0 * np.pi * tau)
        est = np.trapezoid(vals, grid, axis=1)
        # frozen-endpoint closed form on the dropped final interval
        z = (b[:, -1] - x) ** 2 / tau[-1]
        est += np.where(z < 45.0, exp1(np.maximum(z, 1e-300)), 0.0) \
            / (2.0 * np.pi)
        estimates[done:done + m] = est
        done += m
    analytic = moments.annealed_atom_variance(t, x, d=1)
    mean = float(estimates.mean())
    rows = [
        _mean_row("annealed_variance", estimates, analytic),
        CheckRow("absolute_error", "deterministic", mean, analytic,
                 tol=cfg["abs_tolerance"]),
    ]
    series = [{"replica_batches": cfg["replicas"], "mean": mean,
               "analytic": analytic}]
    return rows, {"series": series}


def check_sbm_total_mass_laplace(cfg, seed, threads):
    """Total-mass Laplace functional and variance of the catalyst mass."""
    N = cfg["N"]
    dt = 1.0 / (2.0 * N)
    ts = list(cfg["times"])
    masses = superprocess.total_mass_ensemble(
        N, max(ts), dt, ts, cfg["replicas"], seed=_spawned(seed, 211))
    rows = []
    for j, t in enumerate(ts):
        for lam in cfg["lambdas"]:
            target = math.exp(-lam / (1.0 + lam * t))
            rows.append(_mean_row(f"laplace_t{t}_lam{lam}",
                                  np.exp(-lam * masses[:, j]), target))
    m1 = masses[:, ts.index(1.0)] if 1.0 in ts else masses[:, -1]
    var = float(m1.var(ddof=1))
    rows.append(CheckRow("mass_variance_t1", "statistical", var, 2.0,
                         _se_of_variance(m1)))
    return rows, {}


def check_sbm_mass_martingale(cfg, seed, threads):
    """Critical branching preserves mass in conditional mean."""
    N = cfg["N"]
    dt = 1.0 / (2.0 * N)
    ts = [cfg["t_mid"], cfg["t_end"]]
    masses = superprocess.total_mass_ensemble(
        N, cfg["t_end"], dt, ts, cfg["replicas"], seed=_spawned(seed, 223))
    increments = masses[:, 1] - masses[:, 0]
    rows = [
        _mean_row("mean_mass_mid", masses[:, 0], 1.0),
        _mean_row("mean_mass_end", masses[:, 1], 1.0),
        # martingale increment t-test at the 1 percent level
        _mean_row("increment_mean", increments, 0.0, z_threshold=2.576),
    ]
    return rows, {}


def check_first_moment(cfg, seed, threads):
    """First moment of the catalyst: heat flow of the initial measure."""
    N, t = cfg["N"], cfg["t"]
    dt = 1.0 / (2.0 * N)
    params = HeatKernelParams(kappa=1.0, d=1)
    phi = GaussianBump(cfg["bump_center"], cfg["bump_sigma"])
    out = superprocess.sbm_functional_ensemble(
        N, t, dt, params, cfg["replicas"], seed=_spawned(seed, 307),
        snapshot_times=[t], snapshot_fns=[phi])
    analytic = float(phi.heat_smoothed(t, 0.0, 1.0))
    rows = [_mean_row("pairing_mean", out["snapshots"][0, 0], analytic)]

    from scipy import integrate as _int
    mass, _ = _int.quad(
        lambda x: moments.first_moment_density(t, x, "delta0"), -40, 40,
        epsabs=1e-10, epsrel=1e-9, limit=200)
    rows.append(CheckRow("density_mass", "deterministic", mass, 1.0,
                         tol=1e-8))
    return rows, {}


def check_second_moment(cfg, seed, threads):
    """Two-time product moments of the catalyst against pair-correlation
    quadrature, with analytic kernel smoothing on both sides."""
    N = cfg["N"]
    dt = 1.0 / (2.0 * N)
    params = HeatKernelParams(kappa=1.0, d=1)
    cases = []
    for (t1, t2) in [(1.0, 1.0), (0.5, 1.0)]:
        theta = t1 / 100.0          # bandwidth h = sqrt(t1)/10, theta = h^2
        for (x1, x2) in cfg["x_pairs"]:
            cases.append((t1, t2, x1, x2, theta))

    fn_index = {}
    snapshot_fns = []
    for (t1, t2, x1, x2, theta) in cases:
        for (tt, xx) in [(t1, x1), (t2, x2)]:
            key = (theta, xx)
            if key not in fn_index:
                fn_index[key] = len(snapshot_fns)
                snapshot_fns.append(
                    lambda x, th=theta, x0=xx:
                        heat_kernel(th, x, x0, params))
    snap_times = sorted({t for c in cases for t in (c[0], c[1])})
    out = superprocess.sbm_functional_ensemble(
        N, max(snap_times), dt, params, cfg["replicas"],
        seed=_spawned(seed, 311), snapshot_times=snap_times,
        snapshot_fns=snapshot_fns)

    rows = []
    for (t1, t2, x1, x2, theta) in cases:
        i1, i2 = snap_times.index(t1), snap_times.index(t2)
        j1, j2 = fn_index[(theta, x1)], fn_index[(theta, x2)]
        prod = out["snapshots"][i1, j1] * out["snapshots"][i2, j2]
        q = moments.MomentQuery(t1, t2, x1, x2, "delta0")
        analytic = moments.raw_product_moment_density(q, smoothing_time=theta)
        rows.append(_mean_row(f"product_t{t1}_{t2}_x{x1}_{x2}", prod, analytic))

    leb = moments.second_moment_density(
        moments.MomentQuery(1.0, 1.0, 0.0, 0.0, "lebesgue"))
    rows.append(CheckRow("lebesgue_coincident_kernel", "deterministic",
                         leb, 1.0 / math.sqrt(2.0 * math.pi), tol=1e-6))
    return rows, {}


def check_occupation_laplace(cfg, seed, threads):
    """Joint mass/occupation Laplace functional against the dual solver."""
    N, T = cfg["N"], cfg["T"]
    dt = 1.0 / (2.0 * N)
    params = HeatKernelParams(kappa=1.0, d=1)
    grid = periodic_grid(0.0, 1.0, 16)

    pairs = [
        ("const", cfg["psi_a"], lambda s: cfg["phi_a"]),
        ("step", cfg["psi_b"],
         lambda s: cfg["phi_b"] if s < T / 2.0 else 0.0),
    ]
    rows = []
    for i, (tag, psi, weight) in enumerate(pairs):
        mass_T, occ = superprocess.mass_functional_ensemble(
            N, T, dt, weight, cfg["replicas"], seed=_spawned(seed, 401 + i))
        samples = np.exp(-psi * mass_T - occ)
        sol = dual_pde.occupation_dual_solution(
            float(psi), lambda s: np.full(grid.shape, float(weight(s))),
            T, cfg["solver_dt"], grid, params)
        analytic = math.exp(-float(sol.final[0]))
        rows.append(_mean_row(f"functional_{tag}", samples, analytic))

    # propagator construction: step-function forcings converging to a
    # continuous one reproduce its propagator
    c0 = cfg["phi_a"]
    smooth = lambda s: c0 * (1.0 + math.cos(math.pi * s / T)) / 2.0
    ref = dual_pde.occupation_dual_solution(
        cfg["psi_a"], lambda s: np.full(grid.shape, smooth(s)),
        T, cfg["solver_dt"], grid, params)
    errs = []
    for n_pieces in (4, 16, 64):
        stepf = dual_pde.discretize_forcing(smooth, 0.0, T, n_pieces)
        sol = dual_pde.occupation_dual_solution(
            cfg["psi_a"], lambda s: np.full(grid.shape, float(stepf(s))),
            T, cfg["solver_dt"], grid, params)
        errs.append(float(np.max(np.abs(sol.final - ref.final))))
    rows.append(CheckRow("step_forcing_ratio_16_over_4", "bound",
                         errs[1] / errs[0], hi=0.6))
    rows.append(CheckRow("step_forcing_ratio_64_over_16", "bound",
                         errs[2] / errs[1], hi=0.6))
    rows.append(CheckRow("step_forcing_final_error", "deterministic",
                         errs[2], 0.0, tol=1e-2))
    series = [{"n_pieces": n, "sup_error": e}
              for n, e in zip((4, 16, 64), errs)]
    return rows, {"series": series}


def check_char_laplace(cfg, seed, threads):
    """Joint characteristic-Laplace functional of (field, catalyst)."""
    N, t = cfg["N"], cfg["t"]
    dt = 1.0 / (2.0 * N)
    cat_params = HeatKernelParams(kappa=1.0, d=1)
    field_kappa = 0.5
    phi = GaussianBump(cfg["bump_center"], cfg["bump_sigma"],
                       cfg["bump_amplitude"])

    out = superprocess.sbm_functional_ensemble(
        N, t, dt, cat_params, cfg["replicas"], seed=_spawned(seed, 503),
        snapshot_times=[t],
        integrand_fns=[lambda s, x: phi.heat_smoothed(t - s, x, field_kappa)
                       ** 2])
    sigma2 = out["integrals"][0]
    mass_t = out["masses"][0]
    xi = stream(seed, 509).standard_normal(cfg["replicas"])
    field_pairing = np.sqrt(sigma2) * xi

    grid = padded_grid(-3.0, 3.0, t, cat_params, n=cfg["solver_points"])
    mu = superprocess.delta_measure(0.0, 1.0, 1)
    rows = []
    forcing = dual_pde.smoothed_square_forcing(phi, t, grid, field_kappa)
    for lam in cfg["lambdas"]:
        sol = dual_pde.occupation_dual_solution(
            float(lam), forcing, t, cfg["solver_dt"], grid, cat_params)
        pairing = dual_pde.pair_with_measure(sol.final, mu, grid)
        analytic = math.exp(-pairing)
        samples = np.cos(field_pairing) * np.exp(-lam * mass_t)
        rows.append(_mean_row(f"joint_functional_lam{lam}", samples, analytic))
        if lam == max(cfg["lambdas"]):
            mu2 = superprocess.delta_measure(0.0, 1.0, 1)
            mu2 = superprocess.ParticleMeasure(mu2.positions, 2.0, 0.0)
            pairing2 = dual_pde.pair_with_measure(sol.final, mu2, grid)
            rows.append(CheckRow("log_affinity_ratio", "deterministic",
                                 pairing2 / pairing, 2.0, tol=1e-8))
    return rows, {}


def check_fourth_moment_growth(cfg, seed, threads):
    """Quartic L2 moment of the annealed field: value and growth in t."""
    kappa = 1.0
    ts = list(cfg["times"])
    quad_values = [moments.fourth_moment_l2(t, kappa=kappa).value for t in ts]
    slope, intercept = stats.fit_loglog_slope(ts, quad_values)
    c_fit = max(v / t ** 2 for v, t in zip(quad_values, ts))

    t_mc = cfg["t_mc"]
    N = cfg["N"]
    dt = 1.0 / (2.0 * N)
    cat_params = HeatKernelParams(kappa=1.0, d=1)
    L, G = cfg["domain_half_width"], cfg["grid_points"]
    pts = np.linspace(-L, L, G, endpoint=False) + L / G
    dx = pts[1] - pts[0]
    analytic_mc = moments.fourth_moment_l2(t_mc, kappa=kappa).value

    def one_replica(r):
        path = superprocess.simulate_sbm(
            superprocess.delta_measure(0.0, 1.0, N), N, t_mc, dt, cat_params,
            rng=stream(seed, 601, r, 0), coarse_step_threshold=None)
        cov = gaussian_field.quenched_covariance(path, pts, t_mc, kappa)
        draws = gaussian_field.sample_quenched_field(
            cov, cfg["draws_per_path"], rng=stream(seed, 601, r, 1))
        norms_sq = np.sum(draws ** 2, axis=1) * dx
        return float(np.mean(norms_sq ** 2))

    values = indexed_map(one_replica, cfg["replicas"], threads)
    rows = [
        _mean_row("l2_fourth_moment_mc", values, analytic_mc),
        CheckRow("loglog_slope", "bound", slope, hi=2.1),
        CheckRow("quadratic_bound_constant", "bound", c_fit, lo=0.0),
    ]
    series = [{"t": t, "quadrature": v, "bound": c_fit * t ** 2}
              for t, v in zip(ts, quad_values)]
    extras = {"series": series,
              "plot": {"x": ts, "ys": [quad_values,
                                       [c_fit * t ** 2 for t in ts]],
                       "labels": ["quadrature", "fitted t^2 bound"],
                       "loglog": True,
                       "annotation": f"slope = {slope:.3f}"}}
    return rows, extras


def check_quenched_holder(cfg, seed, threads):
    """Holder exponent of the quenched field path in the dual Sobolev norm."""
    N = cfg["N"]
    T = cfg["T"]
    n_sample = cfg["sample_steps"]
    substeps = cfg["path_substeps"]
    dt = T / (n_sample * substeps)
    if 2.0 * N * dt > 1.0:
        raise ValueError("path grid too coarse for the branching step")
    cat_params = HeatKernelParams(kappa=1.0, d=1)
    eig = dirichlet_eigensystem(1, 0.5, cfg["modes"])
    sample_times = np.linspace(0.0, T, n_sample + 1)
    lags = [1, 2, 4, 8]
    weights = eig.sobolev_weights(cfg["order"])

    def one_replica(r):
        path = superprocess.simulate_sbm(
            superprocess.delta_measure(0.5, 1.0, N), N, T, dt, cat_params,
            rng=stream(seed, 701, r, 0), coarse_step_threshold=None)
        fld = gaussian_field.sample_eigen_path(
            path, eig, sample_times, rng=stream(seed, 701, r, 1))
        per_lag = {}
        for lag in lags:
            diff = fld.coeffs[lag:] - fld.coeffs[:-lag]
            per_lag[lag] = np.sqrt((diff ** 2 @ weights))
        return per_lag

    results = indexed_map(one_replica, cfg["replicas"], threads)
    lag_samples, clusters = {}, {}
    for lag in lags:
        h = lag * T / n_sample
        lag_samples[h] = np.concatenate([res[lag] for res in results])
        clusters[h] = np.concatenate([
            np.full(len(res[lag]), i) for i, res in enumerate(results)])
    est = gaussian_field.holder_estimate(lag_samples, seed=_spawned(seed, 703),
                                         clusters=clusters)
    rows = [CheckRow("holder_slope", "bound", est.slope,
                     lo=cfg["slope_lo"], hi=cfg["slope_hi"])]

    # calibration: Lipschitz signal recovers 1, Brownian modulus recovers 1/2
    base_lags = [lag * T / n_sample for lag in lags]
    lip = {h: np.full(cfg["calibration_samples"], h) for h in base_lags}
    est_lip = gaussian_field.holder_estimate(lip, seed=_spawned(seed, 707))
    rows.append(CheckRow("lipschitz_calibration", "bound", est_lip.slope,
                         lo=0.97, hi=1.03))
    rng = stream(seed, 709)
    n_paths = cfg["calibration_samples"]
    bm = np.concatenate(
        [np.zeros((n_paths, 1)),
         np.cumsum(rng.standard_normal((n_paths, n_sample))
                   * math.sqrt(T / n_sample), axis=1)], axis=1)
    bro, bro_cl = {}, {}
    for lag in lags:
        h = lag * T / n_sample
        inc = np.abs(bm[:, lag:] - bm[:, :-lag])
        bro[h] = inc.ravel()
        bro_cl[h] = np.repeat(np.arange(n_paths), inc.shape[1])
    est_bm = gaussian_field.holder_estimate(bro, seed=_spawned(seed, 711),
                                            clusters=bro_cl)
    rows.append(CheckRow("brownian_calibration", "bound", est_bm.slope,
                         lo=0.47, hi=0.53))
    series = [{"lag": h, "mean_norm_increment": est.lag_means[h]}
              for h in sorted(est.lag_means)]
    extras = {"series": series,
              "plot": {"x": sorted(est.lag_means),
                       "ys": [[est.lag_means[h]
                               for h in sorted(est.lag_means)]],
                       "labels": ["quenched field"], "loglog": True,
                       "annotation": f"slope = {est.slope:.3f}"}}
    return rows, extras


def check_leptokurtosis(cfg, seed, threads):
    """Annealed field pairings are leptokurtic; Gaussian calibration is not."""
    N, t = cfg["N"], cfg["t"]
    dt = 1.0 / (2.0 * N)
    cat_params = HeatKernelParams(kappa=1.0, d=1)
    field_kappa = 0.5
    phi = GaussianBump(0.0, cfg["bump_sigma"], 1.0)
    out = superprocess.sbm_functional_ensemble(
        N, t, dt, cat_params, cfg["samples"], seed=_spawned(seed, 801),
        integrand_fns=[lambda s, x: phi.heat_smoothed(t - s, x, field_kappa)
                       ** 2])
    sigma = np.sqrt(out["integrals"][0])
    xi = stream(seed, 803).standard_normal(cfg["samples"])
    annealed = sigma * xi
    cert = moments.leptokurtosis_certificate(
        annealed, seed=_spawned(seed, 805), n_boot=cfg["bootstrap"])
    rows = [
        CheckRow("annealed_kurtosis_ci_lo", "bound", cert.ci_lo, lo=1e-12),
        CheckRow("annealed_kurtosis", "bound", cert.excess_kurtosis, lo=0.0),
    ]
    gauss = stream(seed, 807).standard_normal(cfg["samples"])
    cal = moments.leptokurtosis_certificate(
        gauss, seed=_spawned(seed, 809), n_boot=cfg["bootstrap"])
    rows.append(CheckRow("gaussian_calibration_ci_contains_0", "bound", 0.0,
                         lo=cal.ci_lo, hi=cal.ci_hi))
    return rows, {}


def check_dual_convergence(cfg, seed, threads):
    """Dual solver quality: order, oracle agreement, kernel identities."""
    params = HeatKernelParams(kappa=1.0, d=1)
    grid = periodic_grid(-6.0, 6.0, cfg["grid_points"])
    lam, t = cfg["lam"], cfg["t"]
    exact = lam / (1.0 + lam * t)
    errs = []
    for dt in (0.04, 0.02, 0.01):
        prob = dual_pde.DualProblem(grid=grid,
                                    psi=np.full(grid.shape, lam),
                                    params=params, t1=t)
        sol = dual_pde.solve_dual(prob, dt=dt, reaction="midpoint")
        errs.append(float(np.max(np.abs(sol.final - exact))))
    rows = [
        CheckRow("order_ratio_1", "bound", errs[0] / errs[1], lo=3.2, hi=4.8),
        CheckRow("order_ratio_2", "bound", errs[1] / errs[2], lo=3.2, hi=4.8),
    ]

    bump = GaussianBump(0.0, 0.4, 1.0)
    psi = bump(grid.x)
    problems = [
        ("bump", dual_pde.DualProblem(grid=grid, psi=psi, params=params,
                                      t1=0.5)),
        ("bump_forced", dual_pde.DualProblem(
            grid=grid, psi=psi,
            forcing=lambda s: 0.4 * bump(grid.x), params=params, t1=0.5)),
    ]
    for tag, prob in problems:
        split = dual_pde.solve_dual(prob, dt=cfg["oracle_dt"])
        pic = dual_pde.picard_volterra_oracle(prob, dt=cfg["oracle_dt"],
                                              iterations=60, tol=1e-12)
        err = float(np.max(np.abs(split.values - pic.values)))
        rows.append(CheckRow(f"picard_agreement_{tag}", "deterministic",
                             err, 0.0, tol=1e-4))

    # kernel identities at quadrature tolerance
    from scipy import integrate as _int
    hk = HeatKernelParams(kappa=0.5, d=1)
    for (s, u, x, z) in [(0.3, 0.7, 0.0, 1.0), (0.45, 0.8, -0.4, 0.9),
                         (0.2, 1.3, 0.7, -0.3)]:
        conv, _ = _int.quad(
            lambda y: float(heat_kernel(s, x, y, hk))
            * float(heat_kernel(u, y, z, hk)), -30, 30,
            epsabs=1e-12, epsrel=1e-10, limit=300)
        direct = float(heat_kernel(s + u, x, z, hk))
        rows.append(CheckRow(f"chapman_kolmogorov_{s}_{u}", "deterministic",
                             conv, direct, tol=1e-8))
    norm, _ = _int.quad(lambda y: float(heat_kernel(0.7, 0.2, y, hk)),
                        -30, 30, epsabs=1e-12, epsrel=1e-10, limit=300)
    rows.append(CheckRow("kernel_normalization", "deterministic", norm, 1.0,
                         tol=1e-8))

    eig = dirichlet_eigensystem(1, 0.5, 8)
    xs = np.linspace(0.0, 1.0, 4097)
    modes = eig.evaluate(xs)
    gram = np.trapezoid(modes[:, None, :] * modes[None, :, :], xs, axis=2)
    err = float(np.max(np.abs(gram - np.eye(8))))
    rows.append(CheckRow("eigen_orthonormality", "deterministic", err, 0.0,
                         tol=1e-10))
    series = [{"dt": d, "sup_error": e}
              for d, e in zip((0.04, 0.02, 0.01), errs)]
    return rows, {"series": series}


def check_propagator_compose(cfg, seed, threads):
    """Two-parameter propagator property and continuity in the forcing."""
    params = HeatKernelParams(kappa=1.0, d=1)
    grid = periodic_grid(-6.0, 6.0, cfg["grid_points"])
    bump = GaussianBump(0.0, 0.5, 1.5)
    psi = bump(grid.x)
    forcing = lambda s: 0.5 * bump(grid.x) * (1.0 + math.sin(2.0 * s))
    T, r = cfg["T"], cfg["split_time"]
    dt = cfg["dt"]

    one_shot = dual_pde.solve_dual(dual_pde.DualProblem(
        grid=grid, psi=psi, forcing=forcing, params=params, t1=T), dt)
    # the legs run at different steps, so agreement is the two-parameter
    # flow property rather than a bitwise identity of step sequences
    first = dual_pde.solve_dual(dual_pde.DualProblem(
        grid=grid, psi=psi, forcing=forcing, params=params, t1=r), dt / 2.0)
    second = dual_pde.solve_dual(dual_pde.DualProblem(
        grid=grid, psi=first.final, forcing=forcing, params=params,
        t0=r, t1=T), dt / 2.0)
    compose_err = float(np.max(np.abs(second.final - one_shot.final)))

    fine = dual_pde.solve_dual(dual_pde.DualProblem(
        grid=grid, psi=psi, forcing=forcing, params=params, t1=T), dt / 2.0)
    one_shot_tol = max(float(np.max(np.abs(one_shot.final - fine.final))),
                       1e-14)
    rows = [CheckRow("propagator_composition", "deterministic", compose_err,
                     0.0, tol=2.0 * one_shot_tol)]

    eps = cfg["forcing_perturbation"]
    pert = dual_pde.solve_dual(dual_pde.DualProblem(
        grid=grid, psi=psi, forcing=lambda s: forcing(s) + eps,
        params=params, t1=T), dt)
    change = float(np.max(np.abs(pert.final - one_shot.final)))
    rows.append(CheckRow("forcing_continuity", "bound", change / eps,
                         lo=0.0, hi=2.0 * T))
    return rows, {}


def check_affine_ou(cfg, seed, threads):
    """Exact affine structure of the OU transform plus a simulation oracle."""
    b, beta, sigma = cfg["b"], cfg["beta"], cfg["sigma"]
    t = cfg["t"]
    u = 1j * cfg["u_imag"]
    values = [affine.ou_transform(
        affine.AffineModel("ou", b, beta, sigma, z0), t, u)
        for z0 in (1.0, 2.0, 3.0)]
    resid = affine.collinearity_residual(values, [1.0, 2.0, 3.0])
    rows = [CheckRow("collinearity_residual", "deterministic", resid, 0.0,
                     tol=1e-10)]

    model = affine.AffineModel("ou", b, beta, sigma, 1.5)
    s_c, t_c = 0.4, 0.9
    psi_t, phi_t = affine.ou_psi_phi(model, t_c, u)
    psi_s, phi_s = affine.ou_psi_phi(model, s_c, psi_t)
    psi_f, phi_f = affine.ou_psi_phi(model, s_c + t_c, u)
    flow_err = max(abs(psi_s - psi_f), abs(phi_t + phi_s - phi_f))
    rows.append(CheckRow("flow_composition", "deterministic", flow_err, 0.0,
                         tol=1e-12))

    stat = affine.AffineModel("ou", 0.0, beta, sigma, 0.0)
    mod_inf = abs(affine.ou_transform(stat, 40.0, 1j))
    rows.append(CheckRow("stationary_modulus", "deterministic", mod_inf,
                         math.exp(-sigma ** 2 / (2.0 * beta)), tol=1e-10))

    samples = affine.euler_maruyama(model, cfg["dt"], t, cfg["replicas"],
                                    seed=_spawned(seed, 901))
    target = affine.ou_transform(model, t, u)
    a = cfg["u_imag"]
    rows.append(_mean_row("char_real", np.cos(a * samples), target.real))
    rows.append(_mean_row("char_imag", np.sin(a * samples), target.imag))
    return rows, {}


def check_affine_cir(cfg, seed, threads):
    """Riccati pair of the CIR transform: closed form, flow, simulation."""
    b, beta, sigma = cfg["b"], cfg["beta"], cfg["sigma"]
    t, u = cfg["t"], cfg["u"]
    values = [affine.cir_transform(
        affine.AffineModel("cir", b, beta, sigma, y0), t, u)
        for y0 in (1.0, 2.0, 3.0)]
    resid = affine.collinearity_residual(values, [1.0, 2.0, 3.0])
    rows = [CheckRow("collinearity_residual", "deterministic", resid, 0.0,
                     tol=1e-10)]

    model = affine.AffineModel("cir", b, beta, sigma, 1.2)
    psi_n, phi_n = affine.cir_psi_phi(model, t, u)
    psi_c, phi_c = affine.cir_psi_phi_closed(model, t, u)
    rows.append(CheckRow("riccati_closed_form_psi", "deterministic", psi_n,
                         psi_c, tol=1e-9))
    rows.append(CheckRow("riccati_closed_form_phi", "deterministic", phi_n,
                         phi_c, tol=1e-9))

    s_c, t_c = 0.5, 0.8
    psi_t, phi_t = affine.cir_psi_phi(model, t_c, u)
    psi_s, phi_s = affine.cir_psi_phi(model, s_c, psi_t)
    psi_f, phi_f = affine.cir_psi_phi(model, s_c + t_c, u)
    flow_err = max(abs(psi_s - psi_f), abs(phi_t + phi_s - phi_f))
    rows.append(CheckRow("flow_composition", "deterministic", flow_err, 0.0,
                         tol=1e-8))

    samples = affine.euler_maruyama(model, cfg["dt"], t, cfg["replicas"],
                                    seed=_spawned(seed, 907))
    target = affine.cir_transform(model, t, u)
    rows.append(_mean_row("laplace_transform", np.exp(u * samples), target))
    mean_target = model.initial * math.exp(-beta * t) \
        + (b / beta) * (1.0 - math.exp(-beta * t))
    rows.append(_mean_row("terminal_mean", samples, mean_target))
    return rows, {}


# ---------------------------------------------------------------------------
# Registry / runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckSpec:
    fn: object
    claim: str
    defaults: dict


CHECKS = {
    "atom-variance-quarter": CheckSpec(
        check_atom_variance_quarter,
        "annealed variance of the moving-atom field at the origin equals 1/4 "
        "in d = 1",
        {"replicas": 50_000, "t": 1.0, "x": 0.0, "n_uniform": 512,
         "ratio": 0.85, "eps": 1e-9, "chunk": 10_000, "abs_tolerance": 0.005}),
    "sbm-total-mass-laplace": CheckSpec(
        check_sbm_total_mass_laplace,
        "total catalyst mass has Laplace transform exp(-lam/(1+lam t)) and "
        "variance 2t",
        {"N": 2000, "replicas": 6000, "times": [0.5, 1.0],
         "lambdas": [0.5, 1.0, 2.0]}),
    "sbm-mass-martingale": CheckSpec(
        check_sbm_mass_martingale,
        "total catalyst mass is a martingale under critical branching",
        {"N": 500, "replicas": 12_000, "t_mid": 0.5, "t_end": 1.0}),
    "first-moment": CheckSpec(
        check_first_moment,
        "the mean catalyst measure evolves by the heat flow of the initial "
        "measure",
        {"N": 800, "replicas": 1000, "t": 1.0, "bump_center": 0.3,
         "bump_sigma": 0.4}),
    "second-moment": CheckSpec(
        check_second_moment,
        "two-time catalyst product moments equal first-moment products plus "
        "twice the pair-correlation kernel",
        {"N": 800, "replicas": 1000,
         "x_pairs": [[0.0, 0.0], [-0.2, 0.3]]}),
    "occupation-laplace": CheckSpec(
        check_occupation_laplace,
        "the joint mass/occupation Laplace functional equals the exponent "
        "of the inhomogeneous dual propagator",
        {"N": 1500, "replicas": 6000, "T": 1.0, "psi_a": 1.0, "phi_a": 0.8,
         "psi_b": 0.5, "phi_b": 1.2, "solver_dt": 0.002}),
    "char-laplace": CheckSpec(
        check_char_laplace,
        "the joint characteristic-Laplace functional of field and catalyst "
        "is exp(-<u(t), mu>) with forcing half the squared smoothed test "
        "function",
        {"N": 600, "replicas": 2000, "t": 0.5, "lambdas": [0.0, 0.5],
         "bump_center": 0.0, "bump_sigma": 0.3, "bump_amplitude": 2.0,
         "solver_points": 1024, "solver_dt": 0.001}),
    "fourth-moment-growth": CheckSpec(
        check_fourth_moment_growth,
        "the quartic L2 moment of the annealed field is finite, matches its "
        "moment-integral value, and grows no faster than t^2 on the window",
        {"times": [0.25, 0.5, 1.0, 2.0], "t_mc": 0.5, "N": 256,
         "replicas": 256, "draws_per_path": 2, "domain_half_width": 5.0,
         "grid_points": 96}),
    "quenched-holder": CheckSpec(
        check_quenched_holder,
        "quenched field paths are Holder continuous in the dual Sobolev "
        "norm with exponent close to 1/2",
        {"N": 300, "T": 1.0, "sample_steps": 256, "path_substeps": 5,
         "modes": 64, "order": 1, "replicas": 48, "calibration_samples": 150,
         "slope_lo": 0.40, "slope_hi": 0.55}),
    "leptokurtosis": CheckSpec(
        check_leptokurtosis,
        "annealed field pairings have strictly positive excess kurtosis",
        {"N": 100, "t": 0.5, "samples": 12_000, "bump_sigma": 0.3,
         "bootstrap": 1000}),
    "dual-convergence": CheckSpec(
        check_dual_convergence,
        "the dual solver is second order, agrees with the Volterra oracle, "
        "and its kernels satisfy the semigroup identities",
        {"grid_points": 256, "lam": 1.0, "t": 1.0, "oracle_dt": 0.005}),
    "propagator-compose": CheckSpec(
        check_propagator_compose,
        "the dual flow is a two-parameter propagator and depends "
        "continuously on the forcing",
        {"grid_points": 256, "T": 1.0, "split_time": 0.4, "dt": 0.005,
         "forcing_perturbation": 1e-3}),
    "affine-ou": CheckSpec(
        check_affine_ou,
        "the OU transform is exactly affine in the initial state with the "
        "exact exponent pair",
        {"b": 0.4, "beta": 1.3, "sigma": 0.8, "t": 1.0, "u_imag": 1.0,
         "dt": 1e-3, "replicas": 40_000}),
    "affine-cir": CheckSpec(
        check_affine_cir,
        "the CIR transform is exactly affine in the initial state with the "
        "Riccati exponent pair",
        {"b": 0.5, "beta": 1.1, "sigma": 0.7, "t": 1.0, "u": -0.8,
         "dt": 5e-4, "replicas": 40_000}),
}

_CHECK_IDS = {name: i for i, name in enumerate(sorted(CHECKS))}


def _spawned(seed: int, tag: int) -> int:
    """Derive a child seed; keeps ensemble streams distinct across checks."""
    return int(np.random.SeedSequence(seed, spawn_key=(tag,))
               .generate_state(1)[0])


def run_check(name: str, params: dict | None = None, seed: int = 0,
              out_dir: str | None = None, threads: int = 1) -> Report:
    config = ExperimentConfig(check=name, seed=seed, params=params or {},
                              out_dir=out_dir, threads=threads)
    cfg = config.merged()
    spec = CHECKS[name]
    start = time.perf_counter()
    rows, extras = spec.fn(cfg, _mixed_seed(seed, name), threads)
    wall = time.perf_counter() - start
    report = Report(check=name, claim=spec.claim, seed=seed, config=cfg,
                    environment=environment_fingerprint(), rows=tuple(rows))
    if out_dir is not None:
        write_artifacts(report, extras, out_dir, wall)
    return report


def _mixed_seed(seed: int, name: str) -> int:
    # stable per-check offset so distinct checks never share streams
    return int(np.random.SeedSequence(seed,
                                      spawn_key=(_CHECK_IDS[name],)
                                      ).generate_state(1)[0])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, allow_nan=False,
                  default=_json_default)
        f.write("\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows_csv(report: Report, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["check", "quantity", "mode", "analytic", "estimate",
                    "se", "z", "lo", "hi", "tol", "pass"])
        for r in report.rows:
            w.writerow([report.check, r.quantity, r.mode, _fmt(r.analytic),
                        _fmt(r.estimate), _fmt(r.se), _fmt(r.z), _fmt(r.lo),
                        _fmt(r.hi), _fmt(r.tol), _fmt(r.passed)])


def write_series_csv(series: list, path) -> None:
    if not series:
        return
    keys = list(series[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(keys)
        for row in series:
            w.writerow([_fmt(row[k]) for k in keys])


def write_artifacts(report: Report, extras: dict, out_dir: str,
                    wall: float) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_json(report.as_dict(), os.path.join(out_dir,
                                              f"{report.check}.report.json"))
    write_rows_csv(report, os.path.join(out_dir, f"{report.check}.csv"))
    if "series" in extras:
        write_series_csv(extras["series"],
                         os.path.join(out_dir, f"{report.check}.series.csv"))
    if "plot" in extras:
        from .plotting import emit_plot
        p = extras["plot"]
        emit_plot([(p["x"], y, lab) for y, lab in zip(p["ys"], p["labels"])],
                  os.path.join(out_dir, f"{report.check}.svg"),
                  title=report.check, xlabel="t", ylabel="value",
                  loglog=p.get("loglog", False),
                  annotation=p.get("annotation"))
    timings_path = os.path.join(out_dir, "timings.json")
    timings = {}
    if os.path.exists(timings_path):
        with open(timings_path) as f:
            timings = json.load(f)
    timings[report.check] = wall
    write_json(timings, timings_path)


def verify_all(seed: int = 0, out_dir: str | None = None, threads: int = 1,
               params_by_check: dict | None = None,
               checks: list | None = None, echo=print) -> dict:
    """Run every registered check; returns the combined report dictionary."""
    names = checks if checks is not None else sorted(CHECKS)
    combined = {"seed": seed, "environment": environment_fingerprint(),
                "checks": [], "all_passed": True}
    for name in names:
        params = (params_by_check or {}).get(name, {})
        report = run_check(name, params=params, seed=seed, out_dir=out_dir,
                           threads=threads)
        combined["checks"].append(report.as_dict())
        combined["all_passed"] = combined["all_passed"] and report.passed
        if echo:
            n_pass = sum(r.passed for r in report.rows)
            echo(f"{'PASS' if report.passed else 'FAIL'} {name} "
                 f"({n_pass}/{len(report.rows)} rows)")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_json(combined, os.path.join(out_dir, "report.json"))
    return combined
