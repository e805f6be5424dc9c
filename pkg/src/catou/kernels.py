"""Transition kernels, spectral data, and heat-smoothed test functions.

Kernel convention used throughout the package: a single diffusion
coefficient ``kappa`` parameterizes the generator ``kappa * Laplace``, so the
Gaussian transition density is

    p(t, x, y) = (4 pi kappa t)^(-d/2) exp(-|x - y|^2 / (4 kappa t))

i.e. one-dimensional variance ``2 kappa t``. Callers choose ``kappa`` per
context; the two values that occur in practice are ``kappa = 1/2`` (the
field equation driven by half the Laplacian) and ``kappa = 1`` (the catalyst
generator and the moment formulas). Each consumer documents which one it
expects.

The fractional generator (stable index ``a < 2``) is realized spectrally
only, as the Fourier multiplier ``-kappa * |xi|^a`` on a periodic grid;
no pointwise singular-integral form is provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate


#: default absolute / relative tolerances for adaptive quadrature
QUAD_ABS_TOL = 1e-9
QUAD_REL_TOL = 1e-7


@dataclass(frozen=True)
class HeatKernelParams:
    """Diffusion coefficient, dimension and stable index of the generator."""

    kappa: float
    d: int = 1
    stable_index: float = 2.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.d < 1 or int(self.d) != self.d:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if not 0 < self.stable_index <= 2:
            raise ValueError(
                f"stable index must lie in (0, 2], got {self.stable_index}"
            )

    @property
    def is_gaussian(self) -> bool:
        return self.stable_index == 2.0


def heat_kernel(t, x, y, params: HeatKernelParams):
    """Gaussian transition density p(t, x, y) for the generator kappa*Laplace.

    ``x`` and ``y`` broadcast; for d >= 2 the last axis holds coordinates.
    Only the Gaussian case (stable index 2) has a pointwise kernel.
    """
    if not params.is_gaussian:
        raise NotImplementedError(
            "pointwise kernel is only available for stable index 2"
        )
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat_kernel requires t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if params.d == 1:
        sq = (x - y) ** 2
    else:
        sq = np.sum((x - y) ** 2, axis=-1)
    var = 4.0 * params.kappa * t
    return (np.pi * var) ** (-params.d / 2.0) * np.exp(-sq / var)


def squared_kernel_mass(tau: float, params: HeatKernelParams,
                        half_width: float | None = None) -> float:
    """integral of p(tau, x, y)^2 dx, computed by quadrature (d = 1).

    Used where a closed-form normalization would otherwise be assumed.
    """
    if params.d != 1:
        raise NotImplementedError("squared kernel mass implemented for d = 1")
    if half_width is None:
        half_width = 12.0 * math.sqrt(2.0 * params.kappa * tau)
    val, _ = integrate.quad(
        lambda x: heat_kernel(tau, x, 0.0, params) ** 2,
        -half_width, half_width, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL,
    )
    return val


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on a box, FFT-ready.

    ``lo``/``hi`` are per-axis bounds, ``shape`` the per-axis point counts.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or len(self.lo) != len(self.shape):
            raise ValueError("lo, hi and shape must have equal length")
        for a, b, n in zip(self.lo, self.hi, self.shape):
            if not b > a:
                raise ValueError("grid needs hi > lo on every axis")
            if n < 4:
                raise ValueError("grid needs at least 4 points per axis")

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    def axis(self, i: int = 0) -> np.ndarray:
        n = self.shape[i]
        return self.lo[i] + self.lengths[i] * np.arange(n) / n

    @property
    def x(self) -> np.ndarray:
        """1-d coordinate array (d = 1 convenience accessor)."""
        if self.d != 1:
            raise ValueError("x is a d = 1 accessor; use axis(i)")
        return self.axis(0)

    def meshgrid(self):
        return np.meshgrid(*(self.axis(i) for i in range(self.d)),
                           indexing="ij")

    def angular_frequencies(self):
        """Per-axis angular frequencies xi for the FFT layout."""
        return [
            2.0 * np.pi * np.fft.fftfreq(n, d=dx)
            for n, dx in zip(self.shape, self.dx)
        ]

    def sample(self, f: Callable) -> np.ndarray:
        if self.d == 1:
            return np.asarray(f(self.axis(0)), dtype=float)
        pts = np.stack(self.meshgrid(), axis=-1)
        return np.asarray(f(pts), dtype=float)


def periodic_grid(lo, hi, n) -> PeriodicGrid:
    """Build a PeriodicGrid; scalars describe a 1-d grid."""
    if np.isscalar(lo):
        return PeriodicGrid((float(lo),), (float(hi),), (int(n),))
    return PeriodicGrid(tuple(map(float, lo)), tuple(map(float, hi)),
                        tuple(map(int, n)))


def padded_grid(core_lo, core_hi, t_max, params: HeatKernelParams,
                n=1024, pad_factor=6.0) -> PeriodicGrid:
    """Periodic grid padding the core interval by >= pad_factor*sqrt(kappa*t).

    The padding suppresses wrap-around of the heat flow below ~1e-8 for
    Gaussian kernels over horizons up to ``t_max``.
    """
    pad = pad_factor * math.sqrt(params.kappa * max(t_max, 1e-12))
    if params.d == 1:
        return periodic_grid(core_lo - pad, core_hi + pad, n)
    lo = tuple(c - pad for c in core_lo)
    hi = tuple(c + pad for c in core_hi)
    shape = (n,) * params.d if np.isscalar(n) else tuple(n)
    return PeriodicGrid(lo, hi, shape)


def semigroup_multiplier(t: float, params: HeatKernelParams,
                         grid: PeriodicGrid) -> np.ndarray:
    freqs = grid.angular_frequencies()
    a = params.stable_index
    if grid.d == 1:
        mag = np.abs(freqs[0]) ** a
    else:
        mesh = np.meshgrid(*freqs, indexing="ij")
        if a == 2.0:
            mag = sum(f ** 2 for f in mesh)
        else:
            mag = sum(f ** 2 for f in mesh) ** (a / 2.0)
    return np.exp(-t * params.kappa * mag)


def apply_semigroup(values: np.ndarray, t: float, params: HeatKernelParams,
                    grid: PeriodicGrid) -> np.ndarray:
    """Action of exp(t * generator) via the Fourier multiplier.

    For stable index 2 this is Gaussian convolution with ``heat_kernel``;
    for a < 2 it defines the fractional flow spectrally. Mass on constants
    is preserved exactly (zero mode multiplier is 1).
    """
    if t < 0:
        raise ValueError("apply_semigroup requires t >= 0")
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} != grid shape {grid.shape}")
    if t == 0.0:
        return values.copy()
    mult = semigroup_multiplier(t, params, grid)
    return np.real(np.fft.ifftn(np.fft.fftn(values) * mult))


@dataclass(frozen=True)
class GaussianBump:
    """Scaled Gaussian density test function.

    phi(x) = amplitude * N(x; center, sigma^2) componentwise in d = 1;
    heat smoothing has the exact closed form
    G_phi(tau, z) = amplitude * N(z; center, sigma^2 + 2 kappa tau).
    """

    center: float = 0.0
    sigma: float = 0.5
    amplitude: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        v = self.sigma ** 2
        return self.amplitude * np.exp(-((x - self.center) ** 2) / (2 * v)) \
            / math.sqrt(2 * math.pi * v)

    def heat_smoothed(self, tau: float, z, kappa: float):
        """Exact value of the heat convolution int p(tau, x, z) phi(x) dx."""
        z = np.asarray(z, dtype=float)
        v = self.sigma ** 2 + 2.0 * kappa * tau
        return self.amplitude * np.exp(-((z - self.center) ** 2) / (2 * v)) \
            / math.sqrt(2 * math.pi * v)

    def support(self, n_sigma: float = 10.0) -> tuple[float, float]:
        return (self.center - n_sigma * self.sigma,
                self.center + n_sigma * self.sigma)

    @property
    def integral(self) -> float:
        return self.amplitude


@dataclass(frozen=True)
class IndicatorBox:
    """Indicator of a box, for pairing and counting tests."""

    lo: float
    hi: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return ((x >= self.lo) & (x <= self.hi)).astype(float)

    def support(self, n_sigma: float = 0.0) -> tuple[float, float]:
        return (self.lo, self.hi)


def g_phi(phi, t: float, s: float, z, params: HeatKernelParams,
          support: tuple[float, float] | None = None) -> float:
    """Heat-smoothed test function G_phi(t, s, z) = int p(t-s, x, z) phi(x) dx.

    Evaluated by adaptive quadrature over the effective support of phi;
    at s = t it degenerates to phi(z). Requires 0 <= s < t (or s = t).
    """
    if s > t:
        raise ValueError(f"g_phi requires s <= t, got s={s} > t={t}")
    tau = t - s
    if tau == 0.0:
        return float(phi(z))
    if support is None:
        if hasattr(phi, "support"):
            support = phi.support()
        else:
            raise ValueError("g_phi needs an explicit support for bare callables")
    lo, hi = support
    reach = 10.0 * math.sqrt(2.0 * params.kappa * tau)
    lo = min(lo, float(z) - reach)
    hi = max(hi, float(z) + reach)
    # the kernel degenerates to a spike at z as tau -> 0; anchor it
    anchors = [p for p in (float(z) - reach, float(z), float(z) + reach)
               if lo < p < hi]
    val, _ = integrate.quad(
        lambda x: heat_kernel(tau, x, float(z), params) * float(phi(x)),
        lo, hi, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=200,
        points=anchors or None,
    )
    return val


class UnsupportedDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    """Dirichlet eigensystem of kappa*Laplace on the unit box [0, 1]^d.

    Eigenfunctions are L2-normalized, vanish on the boundary, and are
    extended by zero outside the box so they can be paired against free
    measures. ``modes`` holds the integer index tuples in eigenvalue order.
    """

    d: int
    kappa: float
    lambdas: np.ndarray = field(repr=False)
    modes: tuple = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.lambdas)

    def evaluate(self, x) -> np.ndarray:
        """Mode matrix Phi[k, i] = phi_k(x_i); zero outside [0, 1]^d."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.d == 1:
            pts = x.reshape(-1, 1)
        else:
            pts = x.reshape(-1, self.d)
        inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
        out = np.zeros((self.K, pts.shape[0]))
        for k, mode in enumerate(self.modes):
            vals = np.ones(pts.shape[0])
            for axis, j in enumerate(mode):
                vals *= math.sqrt(2.0) * np.sin(j * math.pi * pts[:, axis])
            out[k] = np.where(inside, vals, 0.0)
        return out

    def sobolev_weights(self, n: float) -> np.ndarray:
        """(1 + lambda_k)^(-n), the H_{-n} norm weights."""
        return (1.0 + self.lambdas) ** (-n)

    def tail_weight(self, n: float) -> float:
        """Upper bound for sum_{k > K} (1 + lambda_k)^(-n) (d = 1 only).

        Integral comparison: the summand is decreasing in the mode index.
        """
        if self.d != 1:
            raise NotImplementedError("tail bound implemented for d = 1")
        if n <= self.d / 2:
            raise ValueError("tail diverges for n <= d/2")
        val, _ = integrate.quad(
            lambda u: (1.0 + self.kappa * (math.pi * u) ** 2) ** (-n),
            self.K, np.inf,
        )
        return val


def dirichlet_eigensystem(d: int, kappa: float, K: int) -> EigenSystem:
    """Eigensystem of kappa*Laplace on [0,1]^d with Dirichlet boundary.

    d = 1: lambda_k = kappa (k pi)^2, phi_k = sqrt(2) sin(k pi x).
    d = 2: tensor modes, ordered by eigenvalue with lexicographic tie-break.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if d == 1:
        ks = np.arange(1, K + 1)
        lambdas = kappa * (ks * math.pi) ** 2
        modes = tuple((int(k),) for k in ks)
    elif d == 2:
        side = int(math.ceil(math.sqrt(K))) + 2
        pairs = sorted(
            ((j, k) for j in range(1, side + 1) for k in range(1, side + 1)),
            key=lambda jk: (jk[0] ** 2 + jk[1] ** 2, jk),
        )[:K]
        lambdas = np.array(
            [kappa * math.pi ** 2 * (j ** 2 + k ** 2) for j, k in pairs]
        )
        modes = tuple(pairs)
    else:
        raise UnsupportedDimensionError(
            f"dirichlet_eigensystem supports d in {{1, 2}}, got {d}"
        )
    return EigenSystem(d=d, kappa=kappa, lambdas=lambdas, modes=modes)
