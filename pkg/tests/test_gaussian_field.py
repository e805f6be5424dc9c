import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from catou import gaussian_field as gf
from catou.kernels import (GaussianBump, HeatKernelParams,
                           dirichlet_eigensystem)
from catou.rngs import stream
from catou.superprocess import (delta_measure, frozen_path, lattice_cloud,
                                simulate_sbm)

CAT = HeatKernelParams(kappa=1.0, d=1)


def _sbm_path(N=150, T=0.5, seed=0, point=0.5):
    return simulate_sbm(delta_measure(point, 1.0, N), N, T, 1.0 / (2 * N),
                        CAT, seed=seed, coarse_step_threshold=None)


def test_zero_catalyst_gives_zero_covariance():
    times = np.linspace(0.0, 0.5, 51)
    empty = frozen_path(
        delta_measure(0.0, 1.0, 1), times)
    empty = gf.CatalystPath = empty  # keep namespace quiet
    path = frozen_path(
        type(empty.states[0])(np.empty(0), 1.0, 0.0), times)
    cov = gf.quenched_covariance(path, [0.0, 1.0], 0.5, kappa=0.5)
    assert np.all(cov.matrix == 0.0)


def test_frozen_lebesgue_diagonal_matches_closed_form():
    t = 0.5
    times = np.linspace(0.0, t, 201)
    path = frozen_path(lattice_cloud(-8.0, 8.0, 8000), times)
    cov = gf.quenched_covariance(path, [0.0], t, kappa=0.5)
    assert cov.matrix[0, 0] == pytest.approx(math.sqrt(t / math.pi),
                                             rel=2e-3)


def test_covariance_is_symmetric_psd():
    path = _sbm_path(seed=3)
    pts = np.linspace(-1.0, 2.0, 7)
    cov = gf.quenched_covariance(path, pts, 0.5, kappa=0.5)
    assert np.array_equal(cov.matrix, cov.matrix.T)
    assert cov.min_eigenvalue() >= -1e-10 * np.trace(cov.matrix)


def test_divergent_variance_for_frozen_atom_on_point():
    times = np.linspace(0.0, 0.5, 51)
    path = frozen_path(delta_measure(0.5, 1.0, 1), times)
    with pytest.raises(gf.DivergentVarianceError):
        gf.quenched_covariance(path, [0.5, 1.0], 0.5, kappa=0.5)
    # off the atom the variance is finite
    cov = gf.quenched_covariance(path, [0.6, 1.0], 0.5, kappa=0.5)
    assert np.all(np.isfinite(cov.matrix))


def test_points_must_be_distinct():
    path = _sbm_path(seed=4)
    with pytest.raises(ValueError, match="distinct"):
        gf.quenched_covariance(path, [0.0, 0.0], 0.5, kappa=0.5)


def test_sample_zero_and_scalar_covariance():
    zero = gf.QuenchedCovariance(np.array([0.0, 1.0]), np.zeros((2, 2)),
                                 0.5, 0.5)
    assert np.all(gf.sample_quenched_field(zero, 100, seed=1) == 0.0)
    v = 2.3
    scalar = gf.QuenchedCovariance(np.array([0.0]), np.array([[v]]), 0.5, 0.5)
    draws = gf.sample_quenched_field(scalar, 10_000, seed=2)[:, 0]
    var = draws.var(ddof=1)
    se = math.sqrt(2.0 / (len(draws) - 1)) * var
    assert abs(var - v) <= 3 * se


def test_sample_known_correlation():
    rho = 0.6
    mat = np.array([[1.0, rho], [rho, 1.0]])
    cov = gf.QuenchedCovariance(np.array([0.0, 1.0]), mat, 0.5, 0.5)
    draws = gf.sample_quenched_field(cov, 20_000, seed=5)
    emp = np.corrcoef(draws.T)[0, 1]
    se = (1.0 - rho ** 2) / math.sqrt(len(draws))
    assert abs(emp - rho) <= 3 * se


def test_conditioning_error_beyond_jitter_budget():
    mat = np.array([[1.0, 0.0], [0.0, -0.5]])
    cov = gf.QuenchedCovariance(np.array([0.0, 1.0]), mat, 0.5, 0.5)
    with pytest.raises(gf.ConditioningError):
        gf.sample_quenched_field(cov, 10, seed=1)


def test_exp_weighted_integral_against_quadrature():
    lam = np.array([[0.3, 40.0], [40.0, 2000.0]])
    times = np.linspace(0.0, 0.1, 11)
    grams = np.array([np.full((2, 2), 1.0 + 0.5 * s) for s in times])
    out = gf.exp_weighted_integral(lam, times, grams)
    for idx in ((0, 0), (0, 1), (1, 1)):
        val, _ = integrate.quad(
            lambda s: math.exp(-lam[idx] * (times[-1] - s)) * (1.0 + 0.5 * s),
            0.0, times[-1], epsabs=1e-13, epsrel=1e-12)
        assert out[idx] == pytest.approx(val, rel=1e-4)


def test_eigen_step_covariance_frozen_lebesgue():
    eig = dirichlet_eigensystem(1, 0.5, 12)
    times = np.linspace(0.0, 0.25, 101)
    path = frozen_path(lattice_cloud(0.0, 1.0, 4096), times)
    h = 0.05
    C = gf.eigen_step_covariance(path, eig, 0.1, h)
    target = (1.0 - np.exp(-2.0 * eig.lambdas * h)) / (2.0 * eig.lambdas)
    assert np.max(np.abs(np.diag(C) - target) / target) < 1e-4
    off = C - np.diag(np.diag(C))
    assert np.max(np.abs(off)) < 1e-6


def test_eigen_step_covariance_frozen_center_atom():
    eig = dirichlet_eigensystem(1, 0.5, 8)
    times = np.linspace(0.0, 0.25, 101)
    path = frozen_path(delta_measure(0.5, 1.0, 1), times)
    h = 0.05
    C = gf.eigen_step_covariance(path, eig, 0.1, h)
    ks = np.arange(1, 9)
    target = 2.0 * np.sin(ks * math.pi / 2.0) ** 2 \
        * (1.0 - np.exp(-2.0 * eig.lambdas * h)) / (2.0 * eig.lambdas)
    assert np.max(np.abs(np.diag(C) - target)) < 1e-12


def test_sample_eigen_path_zero_catalyst():
    eig = dirichlet_eigensystem(1, 0.5, 8)
    times = np.linspace(0.0, 0.25, 26)
    path = frozen_path(
        delta_measure(0.5, 1.0, 1)._replace_empty()
        if hasattr(delta_measure(0.5, 1.0, 1), "_replace_empty")
        else type(delta_measure(0.5, 1.0, 1))(np.empty(0), 1.0, 0.0), times)
    fld = gf.sample_eigen_path(path, eig, times, seed=1)
    assert np.all(fld.coeffs == 0.0)


def test_sample_eigen_path_stationary_variance():
    eig = dirichlet_eigensystem(1, 0.5, 6)
    t = 0.3
    times = np.linspace(0.0, t, 31)
    path = frozen_path(lattice_cloud(0.0, 1.0, 2048), times)
    reps = 3000
    coeffs = np.array([
        gf.sample_eigen_path(path, eig, times, rng=stream(9, r)).coeffs[-1]
        for r in range(reps)])
    target = (1.0 - np.exp(-2.0 * eig.lambdas * t)) / (2.0 * eig.lambdas)
    for k in range(6):
        var = coeffs[:, k].var(ddof=1)
        se = math.sqrt(2.0 / (reps - 1)) * var
        assert abs(var - target[k]) <= 4 * se


def test_expected_sobolev_norm_matches_mode_sum():
    eig = dirichlet_eigensystem(1, 0.5, 16)
    t = 0.25
    path = _sbm_path(N=200, T=t, seed=11)  # path dt = 1/400
    times = np.linspace(0.0, t, 26)        # spacing 0.01 = 4 path steps
    reps = 400
    samples = np.array([
        gf.sample_eigen_path(path, eig, times,
                             rng=stream(13, r)).coeffs[-1]
        for r in range(reps)])
    weights = eig.sobolev_weights(1.0)
    emp = np.mean(np.sum(samples ** 2 * weights, axis=1))
    se = np.std(np.sum(samples ** 2 * weights, axis=1), ddof=1) \
        / math.sqrt(reps)
    c_full = gf.eigen_step_covariance(path, eig, 0.0, t)
    target = float(np.sum(np.diag(c_full) * weights))
    assert abs(emp - target) <= 3 * se


def test_sobolev_norm_values_and_errors():
    eig = dirichlet_eigensystem(1, 0.5, 16)
    coeffs = np.zeros((2, 16))
    coeffs[1, 0] = 1.0
    fld = gf.EigenField(np.array([0.0, 1.0]), coeffs, eig,
                        {"horizon": 1.0, "mass_scale": 1.0})
    assert gf.sobolev_norm(fld, 0.0, 1).value == 0.0
    val = gf.sobolev_norm(fld, 1.0, 1)
    assert val.value == pytest.approx((1.0 + math.pi ** 2 / 2.0) ** -0.5,
                                      rel=1e-12)
    assert val.tail_bound > 0.0
    with pytest.raises(ValueError, match="diverges"):
        gf.sobolev_norm(fld, 1.0, 0.5)


@given(n1=st.floats(0.6, 2.0), n2=st.floats(2.0, 4.0))
def test_sobolev_norm_monotone_in_order(n1, n2):
    eig = dirichlet_eigensystem(1, 0.5, 8)
    coeffs = np.zeros((1, 8))
    coeffs[0] = np.array([0.5, -0.2, 0.1, 0.4, 0.0, 0.3, -0.1, 0.2])
    fld = gf.EigenField(np.array([0.0]), coeffs, eig,
                        {"horizon": 1.0, "mass_scale": 1.0})
    assert gf.sobolev_norm(fld, 0.0, n1).value >= \
        gf.sobolev_norm(fld, 0.0, n2).value


def test_holder_estimate_lipschitz_calibration():
    lags = [0.01, 0.02, 0.04, 0.08]
    data = {h: np.full(200, h) for h in lags}
    est = gf.holder_estimate(data, seed=1, n_boot=50)
    assert est.slope == pytest.approx(1.0, abs=1e-12)


def test_holder_estimate_brownian_calibration():
    rng = stream(17)
    n_paths, n_steps = 200, 128
    bm = np.concatenate([
        np.zeros((n_paths, 1)),
        np.cumsum(rng.standard_normal((n_paths, n_steps))
                  * math.sqrt(1.0 / n_steps), axis=1)], axis=1)
    data, clusters = {}, {}
    for lag in (1, 2, 4, 8):
        inc = np.abs(bm[:, lag:] - bm[:, :-lag])
        data[lag / n_steps] = inc.ravel()
        clusters[lag / n_steps] = np.repeat(np.arange(n_paths), inc.shape[1])
    est = gf.holder_estimate(data, seed=2, n_boot=100, clusters=clusters)
    assert abs(est.slope - 0.5) < 0.03
    assert est.ci_lo <= est.slope <= est.ci_hi


def test_holder_estimate_validation():
    with pytest.raises(ValueError, match="4 lag"):
        gf.holder_estimate({0.1: np.ones(200), 0.2: np.ones(200)})
    lags = {h: np.ones(10) for h in (0.1, 0.2, 0.4, 0.8)}
    with pytest.raises(ValueError, match="100 samples"):
        gf.holder_estimate(lags)
    zeros = {h: np.zeros(200) for h in (0.1, 0.2, 0.4, 0.8)}
    with pytest.raises(gf.DegenerateIncrementsError):
        gf.holder_estimate(zeros)


def test_quenched_field_is_conditionally_gaussian():
    path = _sbm_path(N=200, T=0.5, seed=23)
    pts = np.linspace(-0.5, 1.5, 5)
    cov = gf.quenched_covariance(path, pts, 0.5, kappa=0.5)
    draws = gf.sample_quenched_field(cov, 20_000, seed=6)
    w = GaussianBump(0.5, 0.6, 1.0)(pts)
    pairings = draws @ w
    n = len(pairings)
    x = (pairings - pairings.mean()) / pairings.std(ddof=1)
    skew = np.mean(x ** 3)
    kurt = np.mean(x ** 4) - 3.0
    assert abs(skew) <= 3 * math.sqrt(6.0 / n)
    assert abs(kurt) <= 3 * math.sqrt(24.0 / n)


def test_sample_covariance_converges_at_mc_rate():
    path = _sbm_path(N=120, T=0.4, seed=29)
    pts = np.linspace(-0.5, 1.5, 4)
    cov = gf.quenched_covariance(path, pts, 0.4, kappa=0.5)
    errs = []
    for reps, sd in ((1000, 7), (10_000, 8)):
        draws = gf.sample_quenched_field(cov, reps, seed=sd)
        emp = draws.T @ draws / reps
        errs.append(np.linalg.norm(emp - cov.matrix))
    ratio = errs[0] / errs[1]
    assert 1.5 < ratio < 7.0


def test_two_representation_variance_agreement():
    # eigenmode sums against kernel quadrature, absorbing boundary on [0,1]
    t = 0.25
    times = np.linspace(0.0, t, 201)
    path = frozen_path(lattice_cloud(0.0, 1.0, 3000), times)
    eig = dirichlet_eigensystem(1, 0.5, 48)
    phi = GaussianBump(0.5, 0.08, 1.0)
    xs = np.linspace(0.0, 1.0, 2001)
    modes = eig.evaluate(xs)
    c = np.trapezoid(modes * phi(xs)[None, :], xs, axis=1)
    cov_modes = gf.eigen_step_covariance(path, eig, 0.0, t)
    var_modes = float(c @ cov_modes @ c)
    var_kernel = gf.quenched_pairing_variance_absorbing(path, phi, t,
                                                        kappa=0.5)
    assert abs(var_modes - var_kernel) / var_kernel < 0.01


def test_doob_bound_on_mode_suprema():
    # E sup_t A_k(t)^2 <= 16 E int <phi_k^2, Z_s> ds, with safety factor 2
    eig = dirichlet_eigensystem(1, 0.5, 4)
    T = 0.5
    times = np.linspace(0.0, T, 65)   # spacing 1/128 = 2 path steps at N=128
    reps = 60
    sups = np.zeros((reps, 4))
    bounds = np.zeros(reps)
    for r in range(reps):
        path = _sbm_path(N=128, T=T, seed=400 + r)
        fld = gf.sample_eigen_path(path, eig, times, rng=stream(31, r))
        sups[r] = np.max(fld.coeffs ** 2, axis=0)
        vals = [path.states[i].mass_per_particle
                * float(np.sum(eig.evaluate(path.states[i].positions)[0] ** 2))
                if path.states[i].n else 0.0
                for i in range(len(path.times))]
        bounds[r] = np.trapezoid(vals, path.times)
    assert np.mean(sups[:, 0]) <= 2.0 * 16.0 * np.mean(bounds)


def test_quenched_pairing_variance_matches_covariance_quadrature():
    path = _sbm_path(N=150, T=0.5, seed=37)
    phi = GaussianBump(0.5, 0.4, 1.0)
    direct = gf.quenched_pairing_variance(path, phi, 0.5, field_kappa=0.5)
    pts = np.linspace(-2.0, 3.0, 161)
    cov = gf.quenched_covariance(path, pts, 0.5, kappa=0.5)
    w = phi(pts)
    dx = pts[1] - pts[0]
    quadform = float(w @ cov.matrix @ w) * dx * dx
    assert direct == pytest.approx(quadform, rel=2e-2)
