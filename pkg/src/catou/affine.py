"""Finite-dimensional affine reference processes.

Two scalar models whose transition transforms are exactly affine in the
initial state, log E[exp(u * state_t)] = state_0 * psi(t, u) + phi(t, u):

- ou:  dz = (b - beta z) dt + sqrt(2) sigma dB   (closed-form psi, phi)
- cir: dy = (b - beta y) dt + sigma sqrt(2 y) dB (Riccati psi, phi)

The CIR pair is integrated numerically with dense output; the logistic
closed form of the same Riccati equation is kept alongside as the test
oracle. An Euler-Maruyama simulator provides the Monte Carlo route.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .rngs import stream


@dataclass(frozen=True)
class AffineModel:
    """kind "ou" or "cir"; reversion rate beta, level b, noise scale sigma."""

    kind: str
    b: float
    beta: float
    sigma: float
    initial: float

    def __post_init__(self):
        if self.kind not in ("ou", "cir"):
            raise ValueError(f"unknown affine model kind {self.kind!r}")
        if self.beta <= 0:
            raise ValueError("reversion rate beta must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "cir" and self.initial < 0:
            raise ValueError("cir requires a nonnegative initial state")


def ou_psi_phi(model: AffineModel, t: float, u: complex):
    """Exact exponent pair of the OU transform under the sqrt(2) sigma noise."""
    if model.kind != "ou":
        raise ValueError("ou_psi_phi needs an ou model")
    b, beta, sigma = model.b, model.beta, model.sigma
    decay = math.exp(-beta * t)
    psi = u * decay
    phi = u * (b / beta) * (1.0 - decay) \
        + u * u * (sigma ** 2 / (2.0 * beta)) * (1.0 - decay ** 2)
    return psi, phi


def ou_transform(model: AffineModel, t: float, u: complex) -> complex:
    """E[exp(u z_t)] = exp(z_0 psi + phi); exact for the Gaussian OU."""
    psi, phi = ou_psi_phi(model, t, u)
    return cmath.exp(model.initial * psi + phi)


def cir_psi_phi(model: AffineModel, t: float, u: float,
                rtol: float = 1e-11, atol: float = 1e-13):
    """Riccati exponent pair for CIR, by adaptive explicit integration.

        psi' = -beta psi + sigma^2 psi^2,  psi(0) = u <= 0
        phi' = b psi,                      phi(0) = 0

    u <= 0 keeps psi in (-inf, 0], where the flow cannot blow up.
    """
    if model.kind != "cir":
        raise ValueError("cir_psi_phi needs a cir model")
    if u > 0:
        raise ValueError("cir transform is defined on the Laplace domain u <= 0")
    if u == 0.0:
        return 0.0, 0.0
    b, beta, sigma = model.b, model.beta, model.sigma

    def rhs(_, y):
        psi, _phi = y
        return [-beta * psi + sigma ** 2 * psi * psi, b * psi]

    sol = solve_ivp(rhs, (0.0, t), [u, 0.0], method="RK45",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"Riccati integration failed: {sol.message}")
    psi, phi = sol.sol(t)
    return float(psi), float(phi)


def cir_psi_phi_closed(model: AffineModel, t: float, u: float):
    """Logistic closed form of the CIR Riccati pair (the oracle route)."""
    if u > 0:
        raise ValueError("cir transform is defined on the Laplace domain u <= 0")
    if u == 0.0:
        return 0.0, 0.0
    b, beta, sigma = model.b, model.beta, model.sigma
    em = math.exp(-beta * t)
    denom = 1.0 - u * sigma ** 2 * (1.0 - em) / beta
    psi = u * em / denom
    phi = -(b / sigma ** 2) * math.log(denom)
    return psi, phi


def cir_transform(model: AffineModel, t: float, u: float) -> float:
    """E[exp(u y_t)] in (0, 1] for u <= 0; log-value affine in y_0."""
    psi, phi = cir_psi_phi(model, t, u)
    return math.exp(model.initial * psi + phi)


def euler_maruyama(model: AffineModel, dt: float, T: float, replicas: int,
                   seed: int | None = None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Terminal samples of the model under the explicit scheme.

    CIR uses full truncation: the negative part of the state is zeroed
    inside the square root only.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if rng is None:
        rng = stream(0 if seed is None else seed)
    n_steps = int(round(T / dt))
    x = np.full(replicas, model.initial, dtype=float)
    root_dt = math.sqrt(dt)
    for _ in range(n_steps):
        noise = rng.standard_normal(replicas)
        drift = (model.b - model.beta * x) * dt
        if model.kind == "ou":
            x = x + drift + math.sqrt(2.0) * model.sigma * root_dt * noise
        else:
            diff = model.sigma * np.sqrt(2.0 * np.maximum(x, 0.0))
            x = x + drift + diff * root_dt * noise
    return x


def collinearity_residual(transform_values, initial_states) -> float:
    """Max deviation of log-transform values from affinity in the state.

    Fits log-values against the initial states by least squares and
    returns the maximum absolute residual; exact affinity gives zero up
    to rounding.
    """
    logs = np.array([cmath.log(v) for v in transform_values])
    x = np.asarray(initial_states, dtype=float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef_re, *_ = np.linalg.lstsq(A, logs.real, rcond=None)
    coef_im, *_ = np.linalg.lstsq(A, logs.imag, rcond=None)
    resid = (A @ coef_re - logs.real) + 1j * (A @ coef_im - logs.imag)
    return float(np.max(np.abs(resid)))
