"""Nonlinear dual evolution equation and its exponent functionals.

Solves, in mild form on a padded periodic grid,

    du/ds = L_a u - u^(1+beta) + Phi(s),   u(t0) = psi >= 0,

where L_a is the (possibly fractional) diffusion generator realized by the
Fourier multiplier of :func:`catou.kernels.apply_semigroup`. The solution
operator is the nonlinear propagator whose pairing exponent
exp(-<u(t), mu>) gives the joint Laplace / characteristic-Laplace
functionals of the catalyst and of the catalytic field.

Scheme: Strang splitting. Each step runs a half-step of the exact linear
flow, a full reaction step with the forcing held at its midstep value, and
another linear half-step. For beta = 1 the reaction step du/ds = c - u^2
is solved exactly (Riccati flow); for general beta it is an implicit
midpoint step with an explicit Euler predictor and a single Newton
correction, which preserves second order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .kernels import HeatKernelParams, PeriodicGrid, apply_semigroup
from .superprocess import ParticleMeasure

NEGATIVITY_TOLERANCE = -1e-12


class InstabilityError(RuntimeError):
    pass


class PicardDivergenceError(RuntimeError):
    def __init__(self, distances):
        super().__init__(
            "Picard iteration is not contracting; successive sup distances: "
            + ", ".join(f"{d:.3e}" for d in distances)
        )
        self.distances = list(distances)


@dataclass(frozen=True)
class DualProblem:
    """Data of one dual solve: initial condition, forcing, interval."""

    grid: PeriodicGrid
    psi: np.ndarray
    forcing: object = None          # callable s -> array on grid, or None
    beta: float = 1.0
    params: HeatKernelParams = HeatKernelParams(kappa=1.0)
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "psi", psi)
        if psi.shape != self.grid.shape:
            raise ValueError("psi must be sampled on the grid")
        if np.any(psi < 0):
            raise ValueError("psi must be nonnegative")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.t1 < self.t0:
            raise ValueError("need t0 <= t1")

    def forcing_at(self, s: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.grid.shape)
        out = np.asarray(self.forcing(s), dtype=float)
        if out.shape != self.grid.shape:
            out = np.broadcast_to(out, self.grid.shape).astype(float)
        if np.any(out < 0):
            raise ValueError(f"forcing must be nonnegative (s = {s})")
        return out


@dataclass(frozen=True)
class DualSolution:
    """Grid samples u(s, .) on the step grid, plus scheme metadata."""

    times: np.ndarray
    values: np.ndarray              # shape (n_steps + 1, *grid.shape)
    grid: PeriodicGrid
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def at_time(self, s: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - s)))
        if abs(self.times[i] - s) > 1e-9 * max(1.0, abs(s)):
            raise ValueError(f"s={s} is not on the solution grid")
        return self.values[i]

    def final_interpolant(self):
        """Periodic cubic interpolant of the terminal slice (d = 1)."""
        if self.grid.d != 1:
            raise NotImplementedError("interpolant implemented for d = 1")
        x = self.grid.axis(0)
        xs = np.append(x, self.grid.hi[0])
        ys = np.append(self.final, self.final[0])
        return CubicSpline(xs, ys, bc_type="periodic")


def _riccati_step(u: np.ndarray, c: np.ndarray, dt: float) -> np.ndarray:
    """Exact flow of du/ds = c - u^2 over dt, for c >= 0, u >= 0."""
    g = np.sqrt(c)
    gd = g * dt
    # tanh(g dt)/g, continuous through g = 0
    small = gd < 1e-6
    thg = np.where(small, dt * (1.0 - gd * gd / 3.0),
                   np.tanh(gd) / np.where(g > 0, g, 1.0))
    return (u + c * thg) / (1.0 + u * thg)


def _midpoint_step(u: np.ndarray, c: np.ndarray, dt: float,
                   beta: float) -> np.ndarray:
    """Implicit midpoint for du/ds = c - u|u|^beta, Euler predictor + Newton."""
    def f(v):
        return c - v * np.abs(v) ** beta

    v = u + dt * f(u)
    m = 0.5 * (u + v)
    resid = v - u - dt * f(m)
    slope = 1.0 + 0.5 * dt * (1.0 + beta) * np.abs(m) ** beta
    return v - resid / slope


def solve_dual(problem: DualProblem, dt: float,
               reaction: str = "auto") -> DualSolution:
    """Integrate the dual equation by Strang splitting; second order in dt.

    ``reaction`` selects the substep: "exact" (beta = 1 Riccati flow),
    "midpoint", or "auto" (exact when beta = 1).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    horizon = problem.t1 - problem.t0
    n_steps = max(1, int(round(horizon / dt)))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("dt must divide the interval length")
    if reaction == "auto":
        reaction = "exact" if problem.beta == 1.0 else "midpoint"
    if reaction == "exact" and problem.beta != 1.0:
        raise ValueError("exact reaction step requires beta = 1")

    u = problem.psi.copy()
    rate = (1.0 + problem.beta) * np.max(np.abs(u)) ** problem.beta
    if dt * rate > 2.0:
        import warnings
        warnings.warn(
            f"reaction rate {rate:.3g} is stiff for dt={dt:.3g}; "
            f"consider a smaller step", RuntimeWarning, stacklevel=2,
        )

    times = problem.t0 + dt * np.arange(n_steps + 1)
    values = np.empty((n_steps + 1,) + problem.grid.shape)
    values[0] = u
    for k in range(n_steps):
        s_mid = times[k] + 0.5 * dt
        c = problem.forcing_at(s_mid)
        u = apply_semigroup(u, 0.5 * dt, problem.params, problem.grid)
        if reaction == "exact":
            u = _riccati_step(u, c, dt)
        else:
            u = _midpoint_step(u, c, dt, problem.beta)
        u = apply_semigroup(u, 0.5 * dt, problem.params, problem.grid)
        low = float(np.min(u))
        if low < NEGATIVITY_TOLERANCE:
            raise InstabilityError(
                f"negative value {low:.3e} at step {k + 1}; "
                f"the scheme has destabilized"
            )
        u = np.maximum(u, 0.0)
        values[k + 1] = u
    meta = {"scheme": f"strang/{reaction}", "dt": dt,
            "beta": problem.beta, "stable_index": problem.params.stable_index,
            "kappa": problem.params.kappa, "n_steps": n_steps}
    return DualSolution(times, values, problem.grid, meta)


def picard_volterra_oracle(problem: DualProblem, dt: float,
                           iterations: int = 40, tol: float = 1e-10,
                           ) -> DualSolution:
    """Picard iteration on the mild (Volterra) form of the dual equation.

        u_{m+1}(t) = V_t psi + int_0^t V_{t-s} (Phi(s) - u_m^{1+beta}(s)) ds

    with the trapezoid rule in s and the spectral semigroup for V. The
    route is independent of the splitting scheme and serves as its oracle.
    Raises :class:`PicardDivergenceError` when successive sup distances stop
    decreasing after five iterations.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    horizon = problem.t1 - problem.t0
    n_steps = max(1, int(round(horizon / dt)))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("dt must divide the interval length")
    times = problem.t0 + dt * np.arange(n_steps + 1)
    grid = problem.grid

    psi_hat = np.fft.fftn(problem.psi)
    from .kernels import semigroup_multiplier
    mults = [semigroup_multiplier(k * dt, problem.params, grid)
             for k in range(n_steps + 1)]
    free = np.array([
        np.real(np.fft.ifftn(psi_hat * mults[k])) for k in range(n_steps + 1)
    ])
    forcing = np.array([problem.forcing_at(s) for s in times])

    u = free.copy()
    distances = []
    for it in range(iterations):
        integrand = forcing - u * np.abs(u) ** problem.beta
        integrand_hat = np.fft.fftn(integrand, axes=tuple(range(1, u.ndim)))
        new = free.copy()
        for i in range(1, n_steps + 1):
            w = np.full(i + 1, dt)
            w[0] = w[-1] = 0.5 * dt
            acc = sum(w[j] * integrand_hat[j] * mults[i - j]
                      for j in range(i + 1))
            new[i] += np.real(np.fft.ifftn(acc))
        dist = float(np.max(np.abs(new - u)))
        distances.append(dist)
        u = new
        if dist < tol:
            break
        if len(distances) >= 5 and distances[-1] > distances[-2] > tol:
            raise PicardDivergenceError(distances)
    meta = {"scheme": "picard-volterra", "dt": dt, "beta": problem.beta,
            "iterations": len(distances), "distances": distances}
    return DualSolution(times, np.maximum(u, 0.0), grid, meta)


def pair_with_measure(u: np.ndarray, mu, grid: PeriodicGrid) -> float:
    """<u, mu> for a particle measure, a grid density, or a callable density."""
    if isinstance(mu, ParticleMeasure):
        if mu.n == 0:
            return 0.0
        if grid.d != 1:
            raise NotImplementedError("particle pairing implemented for d = 1")
        x = grid.axis(0)
        xs = np.append(x, grid.hi[0])
        ys = np.append(u, u[0])
        spline = CubicSpline(xs, ys, bc_type="periodic")
        return float(mu.mass_per_particle * np.sum(spline(mu.positions)))
    if callable(mu):
        dens = grid.sample(mu)
    else:
        dens = np.asarray(mu, dtype=float)
        if dens.shape != grid.shape:
            raise ValueError("density must be sampled on the grid")
    cell = float(np.prod(grid.dx))
    return float(np.sum(u * dens) * cell)


def occupation_dual_solution(psi, forcing, t: float, dt: float,
                             grid: PeriodicGrid, params: HeatKernelParams,
                             beta: float = 1.0) -> DualSolution:
    """Dual solution whose terminal slice is the occupation-functional
    exponent: E exp(-<psi, Z_t> - int_0^t <forcing(r), Z_r> dr)
    = exp(-<u(t), mu>).

    ``forcing(r)`` is indexed by physical catalyst time. Conditioning on
    the catalyst filtration absorbs the last physical interval into the
    terminal data first, so the solver integrates from psi with the
    forcing reversed in time: at solver time s it sees forcing(t - s).
    """
    psi_arr = grid.sample(psi) if callable(psi) else \
        np.broadcast_to(np.asarray(psi, dtype=float), grid.shape).copy()
    solver_forcing = None if forcing is None else (lambda s: forcing(t - s))
    problem = DualProblem(grid=grid, psi=psi_arr, forcing=solver_forcing,
                          beta=beta, params=params, t0=0.0, t1=t)
    return solve_dual(problem, dt)


def laplace_functional(mu, psi, forcing, t: float, dt: float,
                       grid: PeriodicGrid, params: HeatKernelParams,
                       beta: float = 1.0) -> float:
    """exp(-<u(t), mu>) for the occupation functional with physical-time
    forcing; see :func:`occupation_dual_solution`."""
    sol = occupation_dual_solution(psi, forcing, t, dt, grid, params, beta)
    return math.exp(-pair_with_measure(sol.final, mu, grid))


def smoothed_square_forcing(phi, t: float, grid: PeriodicGrid,
                            field_kappa: float, prefactor: float = 0.5):
    """Forcing s -> prefactor * G_phi(t - s, .)^2 on the grid.

    G_phi is the heat smoothing of phi under the field kernel. Test
    functions exposing ``heat_smoothed`` are evaluated in closed form;
    bare callables fall back to the spectral semigroup."""
    if hasattr(phi, "heat_smoothed"):
        def forcing(s):
            g = phi.heat_smoothed(t - s, grid.axis(0), field_kappa)
            return prefactor * g * g
        return forcing
    field_params = HeatKernelParams(kappa=field_kappa, d=grid.d)
    sampled = grid.sample(phi)

    def forcing(s):
        g = apply_semigroup(sampled, t - s, field_params, grid)
        return prefactor * g * g
    return forcing


def char_laplace_exponent(mu, phi, lam: float, t: float, dt: float,
                          grid: PeriodicGrid, params: HeatKernelParams,
                          field_kappa: float = 0.5, beta: float = 1.0,
                          ) -> float:
    """Joint characteristic-Laplace functional E[exp(i<phi,X_t> - lam<1,Z_t>)].

    Conditioned on the catalyst the field pairing <phi, X_t> is a centered
    Gaussian, so the cosine transform averages to exp(-Var/2); the half
    factor therefore enters the forcing, which is (1/2) G_phi(t-s, .)^2.
    The returned value is real and lies in (0, 1].

    ``params`` drives the catalyst generator (kappa = 1 matches the
    branching mechanism convention); ``field_kappa`` drives the smoothing
    kernel of the field equation (1/2 for the half-Laplacian field).
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    forcing = smoothed_square_forcing(phi, t, grid, field_kappa)
    return laplace_functional(mu, float(lam), forcing, t, dt, grid, params,
                              beta=beta)


def step_function_forcing(breaks, plateau_values):
    """Piecewise-constant forcing: value plateau_values[k] on [breaks[k], breaks[k+1])."""
    breaks = np.asarray(breaks, dtype=float)
    if len(plateau_values) != len(breaks) - 1:
        raise ValueError("need one plateau per interval")

    def forcing(s):
        k = int(np.clip(np.searchsorted(breaks, s, side="right") - 1,
                        0, len(plateau_values) - 1))
        return plateau_values[k]
    return forcing


def discretize_forcing(forcing, t0: float, t1: float, n_pieces: int):
    """Left-point piecewise-constant discretization of a forcing in time.

    Mirrors the Riemann-sum construction of the inhomogeneous propagator:
    the continuous forcing is replaced by its value at the left endpoint of
    each of ``n_pieces`` equal subintervals.
    """
    breaks = np.linspace(t0, t1, n_pieces + 1)
    plateaus = [forcing(b) for b in breaks[:-1]]
    return step_function_forcing(breaks, plateaus)


def solution_to_csv(sol: DualSolution, csv_file) -> None:
    writer = csv.writer(csv_file)
    writer.writerow(["time", "grid_index", "x", "u"])
    if sol.grid.d != 1:
        raise NotImplementedError("CSV export implemented for d = 1")
    x = sol.grid.axis(0)
    for ti, t in enumerate(sol.times):
        for gi in range(len(x)):
            writer.writerow([repr(float(t)), gi, repr(float(x[gi])),
                             repr(float(sol.values[ti, gi]))])


def write_solution(sol: DualSolution, csv_path, sidecar_path) -> None:
    with open(csv_path, "w", newline="") as f:
        solution_to_csv(sol, f)
    meta = dict(sol.meta)
    meta["grid"] = {"lo": sol.grid.lo, "hi": sol.grid.hi, "shape": sol.grid.shape}
    with open(sidecar_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
