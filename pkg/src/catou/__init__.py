"""Catalytic Ornstein-Uhlenbeck laboratory.

Simulates super-Brownian catalysts and the Gaussian fields they drive,
solves the nonlinear dual evolution equations whose exponents give the
joint transform functionals, and cross-checks Monte Carlo estimates
against deterministic quadrature through a seeded verification harness.
"""

from .affine import AffineModel, cir_transform, euler_maruyama, ou_transform
from .dual_pde import (DualProblem, DualSolution, char_laplace_exponent,
                       laplace_functional, picard_volterra_oracle, solve_dual)
from .gaussian_field import (EigenField, QuenchedCovariance,
                             eigen_step_covariance, holder_estimate,
                             quenched_covariance, sample_eigen_path,
                             sample_quenched_field, sobolev_norm)
from .harness import CHECKS, ExperimentConfig, Report, run_check, verify_all
from .kernels import (EigenSystem, GaussianBump, HeatKernelParams,
                      apply_semigroup, dirichlet_eigensystem, g_phi,
                      heat_kernel, padded_grid, periodic_grid)
from .moments import (MomentQuery, annealed_atom_variance,
                      first_moment_density, fourth_moment_l2,
                      integrated_second_moment, leptokurtosis_certificate,
                      second_moment_density)
from .stats import mc_summary
from .superprocess import (CatalystPath, ParticleMeasure, delta_measure,
                           measure_pairing, occupation_integral,
                           simulate_atom_catalyst, simulate_sbm)

__version__ = "0.1.0"

__all__ = [
    "AffineModel", "CatalystPath", "CHECKS", "DualProblem", "DualSolution",
    "EigenField", "EigenSystem", "ExperimentConfig", "GaussianBump",
    "HeatKernelParams", "MomentQuery", "ParticleMeasure",
    "QuenchedCovariance", "Report", "annealed_atom_variance",
    "apply_semigroup", "char_laplace_exponent", "cir_transform",
    "delta_measure", "dirichlet_eigensystem", "eigen_step_covariance",
    "euler_maruyama", "first_moment_density", "fourth_moment_l2", "g_phi",
    "heat_kernel", "holder_estimate", "integrated_second_moment",
    "laplace_functional", "leptokurtosis_certificate", "mc_summary",
    "measure_pairing", "occupation_integral", "ou_transform", "padded_grid",
    "periodic_grid", "picard_volterra_oracle", "quenched_covariance",
    "run_check", "sample_eigen_path", "sample_quenched_field",
    "second_moment_density", "simulate_atom_catalyst", "simulate_sbm",
    "sobolev_norm", "solve_dual", "verify_all",
]
