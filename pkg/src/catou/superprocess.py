"""Branching-particle approximation of super-Brownian motion and catalysts.

The catalyst Z is approximated by a system of particles of mass 1/N that
move as independent Brownian motions with generator ``kappa * Laplace``
(per-coordinate increment variance ``2 kappa dt`` per step) and undergo
critical binary branching at rate ``2 N``: within a step each particle
branches with probability ``2 N dt`` and, if it branches, leaves 0 or 2
offspring with probability 1/2 each. This matches the quadratic branching
mechanism of the limiting superprocess; the per-step offspring law then has
exact first and second moments for any step size with ``2 N dt <= 1``, so
the total-mass law satisfies Var<1, Z_t> = 2 t (unit initial mass) without
a step-size bias.

Only the finite-variance Gaussian regime is simulated (beta = 1, stable
index 2); other regimes raise ``UnsupportedRegimeError``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import HeatKernelParams
from .rngs import stream

#: default ceiling on simultaneously live particle slots
POPULATION_CAP = 10_000_000

#: 2*N*dt above this triggers a coarse-step warning for spatial paths
COARSE_STEP_THRESHOLD = 0.1


class UnsupportedRegimeError(ValueError):
    pass


class PopulationCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParticleMeasure:
    """Weighted particle cloud standing in for a finite measure.

    ``positions`` has shape (n,) in d = 1 and (n, d) otherwise. Total mass
    is ``n * mass_per_particle``.
    """

    positions: np.ndarray
    mass_per_particle: float
    time_stamp: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if self.mass_per_particle < 0:
            raise ValueError("mass_per_particle must be >= 0")
        if pos.size and not np.all(np.isfinite(pos)):
            raise ValueError("particle positions must be finite")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return 1 if self.positions.ndim == 1 else self.positions.shape[1]

    @property
    def total_mass(self) -> float:
        return self.n * self.mass_per_particle


@dataclass(frozen=True)
class CatalystPath:
    """Time-indexed particle measures approximating the catalyst path."""

    times: np.ndarray
    states: tuple
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) != len(times):
            raise ValueError("one state per time point required")
        if len(times) and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.kind not in ("sbm", "atom", "frozen"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.kind == "atom":
            for st in self.states:
                if st.n != 1 or st.mass_per_particle != 1.0:
                    raise ValueError("atom paths carry a single unit atom")
        for t, st in zip(times, self.states):
            if st.time_stamp != t:
                raise ValueError("state time stamps must match the grid")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def d(self) -> int:
        return self.states[0].d

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the path grid")
        return i

    def state_at(self, t: float) -> ParticleMeasure:
        return self.states[self.index_of(t)]

    def total_mass(self) -> np.ndarray:
        return np.array([st.total_mass for st in self.states])


def delta_measure(point=0.0, mass: float = 1.0, N: int = 1,
                  d: int = 1, time_stamp: float = 0.0) -> ParticleMeasure:
    """Particle approximation of mass * delta_point with round(mass*N) atoms."""
    n = int(round(mass * N))
    if d == 1:
        pos = np.full(n, float(np.asarray(point).reshape(())))
    else:
        pos = np.tile(np.asarray(point, dtype=float).reshape(1, d), (n, 1))
    return ParticleMeasure(pos, 1.0 / N, time_stamp)


def lattice_cloud(lo: float, hi: float, n: int,
                  time_stamp: float = 0.0) -> ParticleMeasure:
    """Midpoint lattice approximating Lebesgue measure on [lo, hi] (d = 1)."""
    width = hi - lo
    pos = lo + width * (np.arange(n) + 0.5) / n
    return ParticleMeasure(pos, width / n, time_stamp)


def frozen_path(measure: ParticleMeasure, times) -> CatalystPath:
    """Path that holds a fixed measure at every grid time."""
    times = np.asarray(times, dtype=float)
    states = tuple(
        ParticleMeasure(measure.positions, measure.mass_per_particle, t)
        for t in times
    )
    return CatalystPath(times, states, kind="frozen", meta={})


def _branch_probability(N: int, dt: float) -> float:
    q = 2.0 * N * dt
    if q > 1.0 + 1e-12:
        raise ValueError(
            f"step too coarse: 2*N*dt = {q:.3g} > 1; reduce dt below 1/(2N)"
        )
    return min(q, 1.0)


def simulate_sbm(initial: ParticleMeasure, N: int, T: float, dt: float,
                 params: HeatKernelParams, seed: int | None = None,
                 rng: np.random.Generator | None = None, beta: float = 1.0,
                 population_cap: int = POPULATION_CAP,
                 coarse_step_threshold: float = COARSE_STEP_THRESHOLD,
                 ) -> CatalystPath:
    """Simulate one branching-particle path approximating the superprocess.

    Moves first (Gaussian increments of variance 2*kappa*dt per coordinate),
    then branches. Identical (seed, N, dt, T) yield bit-identical paths.
    """
    if beta != 1.0 or params.stable_index != 2.0:
        raise UnsupportedRegimeError(
            "particle simulation covers beta = 1, stable index 2 only"
        )
    if dt <= 0:
        raise ValueError("dt must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    q = _branch_probability(N, dt)
    if coarse_step_threshold is not None and q > coarse_step_threshold:
        warnings.warn(
            f"2*N*dt = {q:.3g}: offspring placement is resolved only to "
            f"sqrt(2*kappa*dt); spatial correlations below that scale are "
            f"not trustworthy",
            RuntimeWarning, stacklevel=2,
        )
    if rng is None:
        rng = stream(0 if seed is None else seed)
    n_steps = int(round(T / dt))
    times = dt * np.arange(n_steps + 1)
    sigma = math.sqrt(2.0 * params.kappa * dt)
    d = params.d

    pos = np.array(initial.positions, dtype=float, copy=True)
    mass = initial.mass_per_particle
    states = [ParticleMeasure(pos.copy(), mass, 0.0)]
    for k in range(1, n_steps + 1):
        n = pos.shape[0]
        if n:
            pos = pos + sigma * rng.standard_normal(pos.shape)
            if q >= 1.0:
                doubled = rng.integers(0, 2, size=n)
                counts = 2 * doubled
            else:
                branching = rng.random(n) < q
                doubled = rng.integers(0, 2, size=n)
                counts = np.where(branching, 2 * doubled, 1)
            pos = np.repeat(pos, counts, axis=0)
            if pos.shape[0] > population_cap:
                raise PopulationCapError(
                    f"population {pos.shape[0]} exceeds cap {population_cap} "
                    f"at step {k}"
                )
        states.append(ParticleMeasure(pos.copy(), mass, times[k]))
    meta = {"N": N, "dt": dt, "seed": seed, "kappa": params.kappa, "d": d,
            "beta": beta}
    return CatalystPath(times, tuple(states), kind="sbm", meta=meta)


def simulate_atom_catalyst(T: float, dt: float, d: int = 1,
                           seed: int | None = None,
                           rng: np.random.Generator | None = None,
                           ) -> CatalystPath:
    """Single unit atom following a standard Brownian motion from the origin."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if rng is None:
        rng = stream(0 if seed is None else seed)
    n_steps = int(round(T / dt))
    times = dt * np.arange(n_steps + 1)
    shape = (n_steps,) if d == 1 else (n_steps, d)
    incr = math.sqrt(dt) * rng.standard_normal(shape)
    traj = np.concatenate(
        [np.zeros((1,) if d == 1 else (1, d)), np.cumsum(incr, axis=0)]
    )
    states = tuple(
        ParticleMeasure(traj[k:k + 1].reshape((1,) if d == 1 else (1, d)),
                        1.0, times[k])
        for k in range(n_steps + 1)
    )
    meta = {"dt": dt, "seed": seed, "d": d}
    return CatalystPath(times, states, kind="atom", meta=meta)


def measure_pairing(state: ParticleMeasure, phi) -> float:
    """<phi, Z> = mass_per_particle * sum_i phi(x_i)."""
    if state.n == 0:
        return 0.0
    return float(state.mass_per_particle * np.sum(phi(state.positions)))


def occupation_integral(path: CatalystPath, forcing) -> float:
    """Trapezoidal approximation of int_0^T <forcing(s), Z_s> ds.

    ``forcing(s, x)`` must be evaluable, vectorized over positions, at
    every grid time of the path.
    """
    if len(path.states) == 0:
        raise ValueError("empty path")
    vals = np.array([
        measure_pairing(st, lambda x, s=s: forcing(s, x))
        for s, st in zip(path.times, path.states)
    ])
    return float(np.trapezoid(vals, path.times))


# ---------------------------------------------------------------------------
# Vectorized replica ensembles.
#
# These run all replicas in lockstep off a single counter-based stream.
# Results are deterministic functions of (seed, parameters) and never depend
# on thread scheduling; they are the fast path for mass-functional and
# pairing statistics over thousands of replicas.
# ---------------------------------------------------------------------------


def total_mass_ensemble(N: int, T: float, dt: float, record_times,
                        n_replicas: int, seed: int, initial_mass: float = 1.0,
                        ) -> np.ndarray:
    """Total-mass paths of the branching system, recorded at given times.

    Returns an array of shape (n_replicas, len(record_times)). The mass
    marginal does not depend on particle positions, so no spatial state is
    carried.
    """
    q = _branch_probability(N, dt)
    rng = stream(seed)
    n_steps = int(round(T / dt))
    record_idx = _grid_indices(record_times, dt, n_steps)
    counts = np.full(n_replicas, int(round(initial_mass * N)), dtype=np.int64)
    out = np.empty((n_replicas, len(record_idx)))
    slot = {idx: j for j, idx in enumerate(record_idx)}
    if 0 in slot:
        out[:, slot[0]] = counts / N
    for k in range(1, n_steps + 1):
        branchers = counts if q >= 1.0 else rng.binomial(counts, q)
        doubled = rng.binomial(branchers, 0.5)
        counts = counts + 2 * doubled - branchers
        if k in slot:
            out[:, slot[k]] = counts / N
    return out


def mass_functional_ensemble(N: int, T: float, dt: float, weight_fn,
                             n_replicas: int, seed: int,
                             initial_mass: float = 1.0):
    """Terminal masses and weighted occupation integrals, per replica.

    Returns (mass_T, occupation) where occupation[r] approximates
    int_0^T weight_fn(s) * M_s ds by the trapezoid rule on the step grid.
    """
    q = _branch_probability(N, dt)
    rng = stream(seed)
    n_steps = int(round(T / dt))
    counts = np.full(n_replicas, int(round(initial_mass * N)), dtype=np.int64)
    occ = np.zeros(n_replicas)
    occ += 0.5 * dt * weight_fn(0.0) * counts / N
    for k in range(1, n_steps + 1):
        branchers = counts if q >= 1.0 else rng.binomial(counts, q)
        doubled = rng.binomial(branchers, 0.5)
        counts = counts + 2 * doubled - branchers
        w = 1.0 if k < n_steps else 0.5
        occ += w * dt * weight_fn(k * dt) * counts / N
    return counts / N, occ


def sbm_functional_ensemble(N: int, T: float, dt: float,
                            params: HeatKernelParams, n_replicas: int,
                            seed: int, snapshot_times=(), snapshot_fns=(),
                            integrand_fns=(), initial_point=0.0,
                            initial_mass: float = 1.0,
                            population_cap: int = POPULATION_CAP):
    """Spatial replica ensemble reduced on the fly (d = 1).

    All replicas start from round(initial_mass*N) particles at
    ``initial_point`` and evolve in lockstep. Reductions:

    - snapshots[i, j, r] = <snapshot_fns[j], Z^{(r)}_{snapshot_times[i]}>
    - integrals[j, r]    = trapz of <integrand_fns[j](s, .), Z^{(r)}_s> ds
    - mass[i, r]         = total mass of replica r at snapshot_times[i]
    """
    if params.d != 1 or params.stable_index != 2.0:
        raise UnsupportedRegimeError("ensemble driver covers d = 1, a = 2")
    q = _branch_probability(N, dt)
    rng = stream(seed)
    n_steps = int(round(T / dt))
    snap_idx = _grid_indices(snapshot_times, dt, n_steps)
    slot = {idx: j for j, idx in enumerate(snap_idx)}
    sigma = math.sqrt(2.0 * params.kappa * dt)

    n0 = int(round(initial_mass * N))
    pos = np.full(n_replicas * n0, float(initial_point))
    rep = np.repeat(np.arange(n_replicas), n0)
    mass = 1.0 / N

    snapshots = np.zeros((len(snap_idx), len(snapshot_fns), n_replicas))
    integrals = np.zeros((len(integrand_fns), n_replicas))
    masses = np.zeros((len(snap_idx), n_replicas))

    def reduce_at(k):
        t = k * dt
        if k in slot:
            i = slot[k]
            masses[i] = np.bincount(rep, minlength=n_replicas) * mass
            for j, fn in enumerate(snapshot_fns):
                snapshots[i, j] = mass * np.bincount(
                    rep, weights=fn(pos), minlength=n_replicas)
        w = dt * (0.5 if k in (0, n_steps) else 1.0)
        for j, fn in enumerate(integrand_fns):
            integrals[j] += w * mass * np.bincount(
                rep, weights=fn(t, pos), minlength=n_replicas)

    reduce_at(0)
    for k in range(1, n_steps + 1):
        n = pos.shape[0]
        if n:
            pos = pos + sigma * rng.standard_normal(n)
            if q >= 1.0:
                counts = 2 * rng.integers(0, 2, size=n)
            else:
                branching = rng.random(n) < q
                counts = np.where(branching, 2 * rng.integers(0, 2, size=n), 1)
            pos = np.repeat(pos, counts)
            rep = np.repeat(rep, counts)
            if pos.shape[0] > population_cap:
                raise PopulationCapError(
                    f"ensemble population {pos.shape[0]} exceeds cap "
                    f"{population_cap} at step {k}"
                )
        reduce_at(k)
    return {"snapshots": snapshots, "integrals": integrals, "masses": masses}


def _grid_indices(times, dt: float, n_steps: int):
    idx = []
    for t in times:
        k = int(round(t / dt))
        if k < 0 or k > n_steps or abs(k * dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not on the step grid")
        idx.append(k)
    return idx


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def path_to_csv(path: CatalystPath, csv_file, replica: int = 0) -> None:
    """Write (replica, time_index, time, particle_index, x1..xd) rows."""
    d = path.d
    writer = csv.writer(csv_file)
    writer.writerow(["replica", "time_index", "time", "particle_index"]
                    + [f"x{i + 1}" for i in range(d)])
    for ti, (t, st) in enumerate(zip(path.times, path.states)):
        pos = st.positions.reshape(st.n, d)
        for pi in range(st.n):
            writer.writerow([replica, ti, repr(float(t)), pi]
                            + [repr(float(c)) for c in pos[pi]])


def path_sidecar(path: CatalystPath) -> dict:
    meta = {k: v for k, v in path.meta.items()}
    meta["kind"] = path.kind
    meta["n_times"] = len(path.times)
    meta["horizon"] = path.horizon
    return meta


def write_path(path: CatalystPath, csv_path, sidecar_path,
               replica: int = 0) -> None:
    with open(csv_path, "w", newline="") as f:
        path_to_csv(path, f, replica=replica)
    with open(sidecar_path, "w") as f:
        json.dump(path_sidecar(path), f, indent=2, sort_keys=True)
        f.write("\n")
