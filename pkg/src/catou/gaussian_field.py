"""Quenched Gaussian field conditional on a catalyst path.

Given one realization of the catalyst, the field X driven by catalytic
noise is a centered Gaussian process. Two complementary representations
are implemented:

- free space: the covariance of point evaluations,
      Gamma(x, y) = int_0^t sum_i m_i p(t-s, x, xi_i) p(t-s, y, xi_i) ds,
  assembled by the trapezoid rule on the path grid, with the final
  subinterval integrated in closed form (exponential integral) against the
  frozen last interior slice so the integrable s -> t singularity on the
  diagonal is captured without mesh refinement;

- unit box with absorbing boundary: coefficients A_k(t) on the Dirichlet
  eigenbasis, sampled exactly in distribution by the recursive update
      A_k(t+h) = exp(-lambda_k h) A_k(t) + increment,
  whose increment covariance is the exponentially weighted time integral
  of the mode Gram matrices of the catalyst. The weights are integrated
  exactly against a piecewise-linear-in-time Gram matrix, which stays
  accurate even when lambda_j + lambda_k is far stiffer than the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import exp1

from .kernels import EigenSystem, heat_kernel, HeatKernelParams
from .rngs import stream
from .superprocess import CatalystPath

#: relative (to trace) diagonal jitter allowed when factorizing covariances
JITTER_BUDGET = 1e-10

#: exp1(z) below ~1e-21 for z > this; contributions are dropped
_EXP1_CUTOFF = 45.0


class DivergentVarianceError(RuntimeError):
    pass


class ConditioningError(RuntimeError):
    pass


class DegenerateIncrementsError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuenchedCovariance:
    """Covariance matrix of field evaluations, conditional on one path."""

    points: np.ndarray
    matrix: np.ndarray
    t: float
    kappa: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def quenched_covariance(path: CatalystPath, points, t: float, kappa: float,
                        ) -> QuenchedCovariance:
    """Assemble Gamma over evaluation points for the field kernel ``kappa``.

    Requires t on the path grid and distinct points. A frozen or atom
    catalyst sitting exactly on an evaluation point makes the diagonal
    integral divergent (the integrand is 1/(t-s) there); this is detected
    and reported rather than silently truncated.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.ndim != 1:
        raise NotImplementedError("covariance assembly implemented for d = 1")
    if len(np.unique(pts)) != len(pts):
        raise ValueError("evaluation points must be distinct")
    m = path.index_of(t)
    if m == 0:
        return QuenchedCovariance(pts, np.zeros((len(pts), len(pts))), t,
                                  kappa, {"kind": path.kind})
    params = HeatKernelParams(kappa=kappa, d=1)
    npts = len(pts)
    gamma = np.zeros((npts, npts))

    # trapezoid over [s_0, s_{m-1}]; the integrand is finite there
    sub_times = path.times[: m + 1]
    weights = np.diff(sub_times[:-1])  # spacing up to s_{m-1}
    integrands = []
    for j in range(m):
        st = path.states[j]
        if st.n == 0:
            integrands.append(np.zeros((npts, npts)))
            continue
        P = heat_kernel(t - path.times[j], pts[:, None],
                        st.positions[None, :], params)
        integrands.append(st.mass_per_particle * (P @ P.T))
    for j in range(m - 1):
        gamma += 0.5 * weights[j] * (integrands[j] + integrands[j + 1])

    # closed form over the last interval [s_{m-1}, t] with Z frozen there:
    # int_0^h p(tau,a,xi) p(tau,b,xi) dtau = exp1(c/h) / (4 pi kappa),
    # c = ((a-xi)^2 + (b-xi)^2) / (4 kappa)
    last = path.states[m - 1]
    h = float(path.times[m] - path.times[m - 1])
    if last.n:
        c = ((pts[:, None] - last.positions[None, :]) ** 2)
        csum = (c[:, None, :] + c[None, :, :]) / (4.0 * kappa)
        if np.any(csum == 0.0):
            raise DivergentVarianceError(
                "catalyst atom coincides with an evaluation point; the "
                "quenched variance integral int (t-s)^(-1) ds diverges"
            )
        z = csum / h
        tail = np.zeros_like(z)
        mask = z < _EXP1_CUTOFF
        tail[mask] = exp1(z[mask])
        gamma += last.mass_per_particle * tail.sum(axis=2) / (4 * math.pi * kappa)

    gamma = 0.5 * (gamma + gamma.T)
    return QuenchedCovariance(pts, gamma, t, kappa,
                              {"kind": path.kind, "grid_points": m + 1})


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """Cholesky factor with diagonal jitter up to JITTER_BUDGET * trace."""
    n = matrix.shape[0]
    trace = float(np.trace(matrix))
    if trace == 0.0 and not matrix.any():
        return np.zeros_like(matrix)
    jitter = 0.0
    scale = max(trace, np.abs(matrix).max())
    for _ in range(4):
        try:
            return np.linalg.cholesky(matrix + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-13 * scale)
            if jitter > JITTER_BUDGET * scale:
                break
    raise ConditioningError(
        f"covariance not positive semidefinite within jitter budget "
        f"{JITTER_BUDGET:.0e} * trace (needed > {jitter:.3e})"
    )


def sample_quenched_field(cov: QuenchedCovariance, replicas: int,
                          seed: int | None = None,
                          rng: np.random.Generator | None = None,
                          ) -> np.ndarray:
    """Centered Gaussian samples with covariance ``cov.matrix``."""
    if rng is None:
        rng = stream(0 if seed is None else seed)
    L = psd_factor(cov.matrix)
    xi = rng.standard_normal((replicas, cov.n))
    return xi @ L.T


def exp_weighted_integral(lam_sum: np.ndarray, times: np.ndarray,
                          grams: np.ndarray) -> np.ndarray:
    """int_{times[0]}^{times[-1]} exp(-lam_sum (times[-1]-s)) G(s) ds.

    ``grams[j]`` are samples of G at ``times[j]``; G is treated as
    piecewise linear and each cell is integrated exactly, so stiff decay
    rates (lam_sum * cell >> 1) are handled without refinement.
    """
    end = times[-1]
    out = np.zeros_like(grams[0])
    for j in range(len(times) - 1):
        delta = times[j + 1] - times[j]
        tau1 = end - times[j + 1]
        x = lam_sum * delta
        small = x < 1e-4
        safe = np.where(small, 1.0, lam_sum)
        a = np.where(small,
                     delta * (1.0 - x / 2.0 + x * x / 6.0),
                     -np.expm1(-x) / safe)
        b = np.where(small,
                     delta * delta * (0.5 - x / 3.0 + x * x / 8.0),
                     (a - delta * np.exp(-x)) / safe)
        cell = grams[j + 1] * a + (grams[j] - grams[j + 1]) * b / delta
        out += np.exp(-lam_sum * tau1) * cell
    return out


def _mode_grams(path: CatalystPath, eig: EigenSystem, i0: int, i1: int):
    grams = []
    for j in range(i0, i1 + 1):
        st = path.states[j]
        if st.n == 0:
            grams.append(np.zeros((eig.K, eig.K)))
        else:
            modes = eig.evaluate(st.positions)
            grams.append(st.mass_per_particle * (modes @ modes.T))
    return np.array(grams)


def eigen_step_covariance(path: CatalystPath, eig: EigenSystem, t: float,
                          h: float) -> np.ndarray:
    """Covariance of the eigenmode increment over [t, t + h].

    C_{jk} = int_t^{t+h} exp(-(lambda_j + lambda_k)(t+h-s)) <phi_j phi_k, Z_s> ds
    """
    i0, i1 = path.index_of(t), path.index_of(t + h)
    if i1 <= i0:
        raise ValueError("step [t, t+h] must span at least one grid cell")
    lam_sum = eig.lambdas[:, None] + eig.lambdas[None, :]
    grams = _mode_grams(path, eig, i0, i1)
    return exp_weighted_integral(lam_sum, path.times[i0:i1 + 1], grams)


@dataclass(frozen=True)
class EigenField:
    """Eigenmode coefficients A_k(t_i) of the quenched field on [0, 1]^d."""

    times: np.ndarray
    coeffs: np.ndarray              # shape (n_times, K)
    eig: EigenSystem
    meta: dict = field(default_factory=dict)

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the field grid")
        return i

    def reconstruct(self, x, t: float) -> np.ndarray:
        """X(t, x) = sum_k A_k(t) phi_k(x)."""
        modes = self.eig.evaluate(x)
        return self.coeffs[self.index_of(t)] @ modes


def sample_eigen_path(path: CatalystPath, eig: EigenSystem, sample_times,
                      seed: int | None = None,
                      rng: np.random.Generator | None = None) -> EigenField:
    """Exact-in-distribution recursive sampling of the mode coefficients.

    Per step the deterministic decay exp(-lambda_k h) acts on the previous
    coefficients and a jointly Gaussian increment with covariance
    :func:`eigen_step_covariance` is added; A_k(0) = 0.
    """
    if rng is None:
        rng = stream(0 if seed is None else seed)
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times[0] != 0.0:
        raise ValueError("sample grid must start at 0 (X(0) = 0)")
    coeffs = np.zeros((len(sample_times), eig.K))
    a = np.zeros(eig.K)
    for i in range(1, len(sample_times)):
        t0, t1 = sample_times[i - 1], sample_times[i]
        cov = eigen_step_covariance(path, eig, t0, t1 - t0)
        L = psd_factor(cov)
        a = np.exp(-eig.lambdas * (t1 - t0)) * a + L @ rng.standard_normal(eig.K)
        coeffs[i] = a
    mass_scale = float(np.max(path.total_mass())) if len(path.states) else 0.0
    meta = {"horizon": float(sample_times[-1]), "mass_scale": mass_scale,
            "path_kind": path.kind}
    return EigenField(sample_times, coeffs, eig, meta)


class SobolevNorm(NamedTuple):
    value: float
    tail_bound: float


def sobolev_norm(fld: EigenField, t: float, n: float) -> SobolevNorm:
    """H_{-n} norm sqrt(sum_k A_k(t)^2 (1+lambda_k)^(-n)), truncated at K.

    The reported tail bound combines the mode-sum tail with the uniform
    coefficient bound E sup A_k^2 <= 16 T <1, Z>-scale (Doob), so it is a
    bound on the expected squared truncation error, not on this sample.
    Rejected for n <= d/2, where the mode sum itself diverges.
    """
    if n <= fld.eig.d / 2:
        raise ValueError(
            f"n = {n} <= d/2 = {fld.eig.d / 2}: the weight sum "
            f"sum_k (1+lambda_k)^(-n) diverges and the norm is undefined"
        )
    a = fld.coeffs[fld.index_of(t)]
    value = math.sqrt(float(np.sum(a * a * fld.eig.sobolev_weights(n))))
    horizon = fld.meta.get("horizon", float(fld.times[-1]))
    mass_scale = fld.meta.get("mass_scale", 1.0)
    coeff_scale = 16.0 * horizon * max(mass_scale, 1e-300) * 2.0
    tail = coeff_scale * fld.eig.tail_weight(n)
    return SobolevNorm(value, tail)


class HolderEstimate(NamedTuple):
    slope: float
    ci_lo: float
    ci_hi: float
    lag_means: dict


def holder_estimate(lag_samples: dict, seed: int = 0, n_boot: int = 500,
                    confidence: float = 0.95, clusters: dict | None = None,
                    ) -> HolderEstimate:
    """Least-squares slope of log E|increment| against log lag.

    ``lag_samples[h]`` holds increment-norm samples at lag h (>= 4 lags,
    >= 100 samples each). ``clusters[h]``, when given, assigns a cluster
    label per sample and the bootstrap resamples whole clusters, which
    keeps the interval honest when increments share a replica.
    """
    lags = np.array(sorted(lag_samples))
    if len(lags) < 4:
        raise ValueError("need at least 4 lag levels")
    samples = {h: np.asarray(lag_samples[h], dtype=float) for h in lags}
    for h, v in samples.items():
        if len(v) < 100:
            raise ValueError(f"need >= 100 samples per lag, got {len(v)} at {h}")
    if all(np.all(v == 0.0) for v in samples.values()):
        raise DegenerateIncrementsError(
            "all increments vanish; the exponent is undefined"
        )

    def slope_of(means):
        x = np.log(lags)
        y = np.log(means)
        return float(np.polyfit(x, y, 1)[0])

    lag_means = {float(h): float(samples[h].mean()) for h in lags}
    slope = slope_of(np.array([lag_means[float(h)] for h in lags]))

    rng = stream(seed, 917)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        means = []
        for h in lags:
            v = samples[h]
            if clusters is not None:
                labels = np.asarray(clusters[h])
                uniq = np.unique(labels)
                pick = rng.choice(uniq, size=len(uniq), replace=True)
                resampled = np.concatenate([v[labels == c] for c in pick])
            else:
                resampled = v[rng.integers(0, len(v), size=len(v))]
            means.append(resampled.mean())
        boots[b] = slope_of(np.array(means))
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(boots, [alpha, 1.0 - alpha])
    return HolderEstimate(slope, float(lo), float(hi), lag_means)


def quenched_pairing_variance(path: CatalystPath, phi, t: float,
                              field_kappa: float) -> float:
    """Var(<phi, X_t> | Z) = int_0^t <G_phi(t-s, .)^2, Z_s> ds (trapezoid).

    G_phi stays bounded as s -> t (it tends to phi), so the plain
    trapezoid rule on the path grid is adequate. ``phi`` must expose the
    exact ``heat_smoothed`` convolution.
    """
    m = path.index_of(t)
    vals = np.empty(m + 1)
    for j in range(m + 1):
        st = path.states[j]
        if st.n == 0:
            vals[j] = 0.0
            continue
        g = phi.heat_smoothed(t - path.times[j], st.positions, field_kappa)
        vals[j] = st.mass_per_particle * float(np.sum(g * g))
    return float(np.trapezoid(vals, path.times[: m + 1]))


def absorbing_heat_smoothed(phi, tau: float, z, kappa: float,
                            n_images: int = 4):
    """G_phi under the absorbing-boundary kernel on [0, 1], via images.

    p_abs(tau, x, y) = sum_m [p(tau, x - y - 2m) - p(tau, x + y - 2m)],
    so the smoothing of phi is an alternating sum of free smoothings at
    reflected points. phi must be supported inside [0, 1] for the image
    expansion to be exact up to its truncation.
    """
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for m in range(-n_images, n_images + 1):
        out += phi.heat_smoothed(tau, z + 2.0 * m, kappa)
        out -= phi.heat_smoothed(tau, 2.0 * m - z, kappa)
    return out


def quenched_pairing_variance_absorbing(path: CatalystPath, phi, t: float,
                                        kappa: float, n_images: int = 4,
                                        ) -> float:
    """Absorbing-boundary analogue of :func:`quenched_pairing_variance`."""
    m = path.index_of(t)
    vals = np.empty(m + 1)
    for j in range(m + 1):
        st = path.states[j]
        if st.n == 0:
            vals[j] = 0.0
            continue
        g = absorbing_heat_smoothed(phi, t - path.times[j], st.positions,
                                    kappa, n_images)
        vals[j] = st.mass_per_particle * float(np.sum(g * g))
    return float(np.trapezoid(vals, path.times[: m + 1]))
