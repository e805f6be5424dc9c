import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from catou import dual_pde as dp
from catou.kernels import GaussianBump, HeatKernelParams, periodic_grid
from catou.superprocess import delta_measure, mass_functional_ensemble

PARAMS = HeatKernelParams(kappa=1.0, d=1)
GRID = periodic_grid(-6.0, 6.0, 256)


def _const_problem(lam, t=1.0, forcing_level=None, beta=1.0):
    forcing = None
    if forcing_level is not None:
        forcing = lambda s: np.full(GRID.shape, float(forcing_level))
    return dp.DualProblem(grid=GRID, psi=np.full(GRID.shape, float(lam)),
                          forcing=forcing, beta=beta, params=PARAMS, t1=t)


def test_constant_data_exact_riccati():
    lam, t = 1.0, 1.0
    sol = dp.solve_dual(_const_problem(lam, t), dt=0.01)
    assert np.max(np.abs(sol.final - lam / (1.0 + lam * t))) < 1e-6


def test_constant_forcing_tanh_solution():
    c, t = 2.0, 1.0
    sol = dp.solve_dual(_const_problem(0.0, t, forcing_level=c), dt=0.01)
    target = math.sqrt(c) * math.tanh(math.sqrt(c) * t)
    assert np.max(np.abs(sol.final - target)) < 1e-6


def test_zero_data_stays_zero():
    sol = dp.solve_dual(_const_problem(0.0, 0.5), dt=0.01)
    assert np.max(np.abs(sol.values)) == 0.0


def test_second_order_with_midpoint_reaction():
    lam, t = 1.0, 1.0
    exact = lam / (1.0 + lam * t)
    errs = []
    for dt in (0.05, 0.025, 0.0125):
        sol = dp.solve_dual(_const_problem(lam, t), dt=dt,
                            reaction="midpoint")
        errs.append(np.max(np.abs(sol.final - exact)))
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.2 <= e0 / e1 <= 4.8


def test_general_beta_against_power_law():
    # du/ds = -u^(1+beta) from constant lam: u = lam (1 + beta lam^beta s)^(-1/beta)
    beta, lam, t = 0.5, 1.5, 1.0
    prob = dp.DualProblem(grid=GRID, psi=np.full(GRID.shape, lam), beta=beta,
                          params=PARAMS, t1=t)
    sol = dp.solve_dual(prob, dt=0.002)
    target = lam * (1.0 + beta * lam ** beta * t) ** (-1.0 / beta)
    assert np.max(np.abs(sol.final - target)) < 1e-6


def test_picard_agrees_on_constant_case():
    lam, t = 1.0, 1.0
    prob = _const_problem(lam, t)
    pic = dp.picard_volterra_oracle(prob, dt=0.01, iterations=60, tol=1e-12)
    assert np.max(np.abs(pic.final - lam / (1.0 + lam * t))) < 1e-5


def test_picard_zero_problem_converges_immediately():
    pic = dp.picard_volterra_oracle(_const_problem(0.0, 0.5), dt=0.01,
                                    iterations=5)
    assert np.max(np.abs(pic.values)) == 0.0
    assert pic.meta["iterations"] == 1


def test_picard_first_iteration_is_neumann_truncation():
    bump = GaussianBump(0.0, 0.5, 0.8)
    prob = dp.DualProblem(grid=GRID, psi=bump(GRID.x), params=PARAMS, t1=0.3)
    one = dp.picard_volterra_oracle(prob, dt=0.005, iterations=1)
    # independent trapezoid assembly of V_t psi - int V_{t-s}(V_s psi)^2 ds
    from catou.kernels import apply_semigroup
    times = one.times
    free = [apply_semigroup(bump(GRID.x), s, PARAMS, GRID) for s in times]
    i = len(times) - 1
    w = np.full(i + 1, 0.005)
    w[0] = w[-1] = 0.0025
    manual = free[i] - sum(
        w[j] * apply_semigroup(free[j] ** 2, times[i] - times[j], PARAMS,
                               GRID)
        for j in range(i + 1))
    assert np.max(np.abs(one.final - manual)) < 1e-12


def test_picard_divergence_reported():
    prob = _const_problem(12.0, 1.0)
    with pytest.raises(dp.PicardDivergenceError):
        dp.picard_volterra_oracle(prob, dt=0.02, iterations=40)


def test_splitting_and_picard_agree_on_regression_problems():
    bump = GaussianBump(0.0, 0.4, 1.0)
    problems = [
        dp.DualProblem(grid=GRID, psi=bump(GRID.x), params=PARAMS, t1=0.5),
        dp.DualProblem(grid=GRID, psi=bump(GRID.x),
                       forcing=lambda s: 0.4 * bump(GRID.x),
                       params=PARAMS, t1=0.5),
        dp.DualProblem(grid=GRID, psi=0.5 * bump(GRID.x),
                       forcing=lambda s: (0.6 - 0.5 * s) * bump(GRID.x),
                       params=PARAMS, t1=0.5),
    ]
    for prob in problems:
        split = dp.solve_dual(prob, dt=0.004)
        pic = dp.picard_volterra_oracle(prob, dt=0.004, iterations=80,
                                        tol=1e-12)
        assert np.max(np.abs(split.values - pic.values)) < 1e-4


def test_splitting_and_picard_on_jump_forcing():
    # a jump in time costs both schemes one order at the jump itself, so
    # the budget here is O(dt), not the smooth-forcing 1e-4
    bump = GaussianBump(0.0, 0.4, 1.0)
    prob = dp.DualProblem(grid=GRID, psi=0.5 * bump(GRID.x),
                          forcing=lambda s: (0.6 if s < 0.25 else 0.1)
                          * bump(GRID.x), params=PARAMS, t1=0.5)
    sups = []
    for dt in (0.004, 0.002):
        split = dp.solve_dual(prob, dt=dt)
        pic = dp.picard_volterra_oracle(prob, dt=dt, iterations=80, tol=1e-12)
        sups.append(np.max(np.abs(split.values - pic.values)))
    assert sups[0] < 2e-3
    assert sups[1] < 0.7 * sups[0]


@given(scale=st.floats(0.1, 2.0), extra=st.floats(0.0, 1.5))
def test_comparison_monotonicity(scale, extra):
    bump = GaussianBump(0.0, 0.5, 1.0)
    base = scale * bump(GRID.x)
    prob1 = dp.DualProblem(grid=GRID, psi=base, params=PARAMS, t1=0.3)
    prob2 = dp.DualProblem(grid=GRID, psi=base + extra,
                           forcing=lambda s: 0.2 * bump(GRID.x),
                           params=PARAMS, t1=0.3)
    sol1 = dp.solve_dual(prob1, dt=0.01)
    sol2 = dp.solve_dual(prob2, dt=0.01)
    assert np.all(sol2.values >= sol1.values - 1e-10)


def test_problem_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        dp.DualProblem(grid=GRID, psi=np.full(GRID.shape, -0.1),
                       params=PARAMS)
    with pytest.raises(ValueError, match="beta"):
        dp.DualProblem(grid=GRID, psi=np.zeros(GRID.shape), beta=1.5,
                       params=PARAMS)
    prob = _const_problem(1.0, 1.0)
    with pytest.raises(ValueError, match="divide"):
        dp.solve_dual(prob, dt=0.3)
    with pytest.raises(ValueError, match="positive"):
        dp.solve_dual(prob, dt=-0.1)
    bad = dp.DualProblem(grid=GRID, psi=np.zeros(GRID.shape),
                         forcing=lambda s: np.full(GRID.shape, -1.0),
                         params=PARAMS, t1=0.5)
    with pytest.raises(ValueError, match="forcing"):
        dp.solve_dual(bad, dt=0.01)


def test_stiff_step_warns():
    with pytest.warns(RuntimeWarning, match="stiff"):
        dp.solve_dual(_const_problem(30.0, 1.0), dt=0.1)


def test_laplace_functional_unit_atom():
    mu = delta_measure(0.0, 1.0, 1)
    val = dp.laplace_functional(mu, 1.0, None, 1.0, 0.01, GRID, PARAMS)
    assert val == pytest.approx(math.exp(-0.5), abs=1e-9)
    assert dp.laplace_functional(mu, 0.0, None, 1.0, 0.01, GRID, PARAMS) \
        == pytest.approx(1.0, abs=1e-12)


def test_laplace_functional_density_and_particle_pairings_agree():
    # a particle lattice approximating a density must give the same pairing
    dens = GaussianBump(0.0, 0.8, 1.0)
    n = 4000
    xs = -4.0 + 8.0 * (np.arange(n) + 0.5) / n
    weights = dens(xs) * (8.0 / n)
    # equal-mass particles are required; thin by rejection on a fine lattice
    mu_dens = dp.pair_with_measure(np.full(GRID.shape, 1.0),
                                   lambda x: dens(x), GRID)
    assert mu_dens == pytest.approx(1.0, abs=1e-6)
    total = weights.sum()
    val_dens = dp.laplace_functional(lambda x: dens(x), 0.7, None, 1.0,
                                     0.01, GRID, PARAMS)
    target = math.exp(-total * 0.7 / (1.0 + 0.7 * 1.0))
    assert val_dens == pytest.approx(target, abs=1e-4)


def test_occupation_orientation_against_mass_ensemble():
    # regression for the propagator time orientation: a forcing active only
    # late in catalyst time must load the early part of the dual solve
    T, N = 0.5, 400
    weight = lambda s: 1.5 if s >= T / 2.0 else 0.0
    mass_T, occ = mass_functional_ensemble(N, T, 1.0 / (2 * N), weight,
                                           4000, seed=77)
    samples = np.exp(-0.8 * mass_T - occ)
    sol = dp.occupation_dual_solution(
        0.8, lambda s: np.full(GRID.shape, float(weight(s))), T, 0.001,
        GRID, PARAMS)
    target = math.exp(-float(sol.final[0]))
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - target) <= 3 * se


def test_char_laplace_reduces_to_laplace_for_zero_test_function():
    mu = delta_measure(0.0, 1.0, 1)
    zero_bump = GaussianBump(0.0, 0.3, 0.0)
    a = dp.char_laplace_exponent(mu, zero_bump, 0.7, 0.5, 0.005, GRID, PARAMS,
                                 field_kappa=0.5)
    b = dp.laplace_functional(mu, 0.7, None, 0.5, 0.005, GRID, PARAMS)
    assert a == pytest.approx(b, rel=1e-12)


def test_char_laplace_value_in_unit_interval():
    mu = delta_measure(0.0, 1.0, 1)
    bump = GaussianBump(0.0, 0.3, 2.0)
    v = dp.char_laplace_exponent(mu, bump, 0.5, 0.5, 0.005, GRID, PARAMS)
    assert 0.0 < v < 1.0
    with pytest.raises(ValueError):
        dp.char_laplace_exponent(mu, bump, -0.1, 0.5, 0.005, GRID, PARAMS)


def test_step_function_forcing_lookup():
    f = dp.step_function_forcing([0.0, 0.5, 1.0], [2.0, 3.0])
    assert f(0.0) == 2.0 and f(0.49) == 2.0
    assert f(0.5) == 3.0 and f(0.99) == 3.0
    g = dp.discretize_forcing(lambda s: s, 0.0, 1.0, 4)
    assert g(0.1) == 0.0 and g(0.3) == 0.25 and g(0.9) == 0.75


def test_solution_export():
    sol = dp.solve_dual(_const_problem(1.0, 0.1), dt=0.05)
    buf = io.StringIO()
    dp.solution_to_csv(sol, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "time,grid_index,x,u"
    assert len(lines) == 1 + len(sol.times) * GRID.shape[0]


def test_propagator_composition_property():
    bump = GaussianBump(0.0, 0.5, 1.2)
    forcing = lambda s: 0.3 * bump(GRID.x) * (1.0 + math.cos(s))
    full = dp.solve_dual(dp.DualProblem(grid=GRID, psi=bump(GRID.x),
                                        forcing=forcing, params=PARAMS,
                                        t1=0.8), dt=0.004)
    half = dp.solve_dual(dp.DualProblem(grid=GRID, psi=bump(GRID.x),
                                        forcing=forcing, params=PARAMS,
                                        t1=0.4), dt=0.002)
    rest = dp.solve_dual(dp.DualProblem(grid=GRID, psi=half.final,
                                        forcing=forcing, params=PARAMS,
                                        t0=0.4, t1=0.8), dt=0.002)
    fine = dp.solve_dual(dp.DualProblem(grid=GRID, psi=bump(GRID.x),
                                        forcing=forcing, params=PARAMS,
                                        t1=0.8), dt=0.002)
    one_shot_tol = max(float(np.max(np.abs(full.final - fine.final))), 1e-13)
    compose_err = float(np.max(np.abs(rest.final - full.final)))
    assert compose_err <= 2.0 * one_shot_tol


def test_forcing_continuity():
    bump = GaussianBump(0.0, 0.5, 1.0)
    T, eps = 0.6, 1e-3
    base = dp.solve_dual(dp.DualProblem(
        grid=GRID, psi=bump(GRID.x),
        forcing=lambda s: 0.5 * bump(GRID.x), params=PARAMS, t1=T), dt=0.005)
    pert = dp.solve_dual(dp.DualProblem(
        grid=GRID, psi=bump(GRID.x),
        forcing=lambda s: 0.5 * bump(GRID.x) + eps, params=PARAMS, t1=T),
        dt=0.005)
    assert np.max(np.abs(pert.final - base.final)) <= 2.0 * T * eps
