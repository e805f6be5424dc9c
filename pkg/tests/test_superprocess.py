import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from catou.kernels import GaussianBump, HeatKernelParams, IndicatorBox
from catou.rngs import stream
from catou import superprocess as sp

PARAMS = HeatKernelParams(kappa=1.0, d=1)


def _sbm(N, T, dt, seed, point=0.0):
    return sp.simulate_sbm(sp.delta_measure(point, 1.0, N), N, T, dt, PARAMS,
                           seed=seed, coarse_step_threshold=None)


def test_initial_state_and_grid():
    path = _sbm(50, 0.5, 0.01, seed=1)
    assert path.kind == "sbm"
    assert len(path.times) == 51
    first = path.states[0]
    assert first.n == 50
    assert first.total_mass == pytest.approx(1.0)
    assert np.all(first.positions == 0.0)


def test_mean_mass_is_conserved():
    masses = sp.total_mass_ensemble(100, 1.0, 0.005, [1.0], 4000, seed=7)
    m = masses[:, 0]
    se = m.std(ddof=1) / math.sqrt(len(m))
    assert abs(m.mean() - 1.0) <= 3 * se


def test_total_mass_variance_is_2t():
    for t in (0.5, 1.0):
        masses = sp.total_mass_ensemble(200, t, 1.0 / 400, [t], 6000, seed=8)
        m = masses[:, 0]
        var = m.var(ddof=1)
        # standard error of the sample variance via fourth moments
        c = m - m.mean()
        se = math.sqrt((np.mean(c ** 4)
                        - (len(m) - 3) / (len(m) - 1) * np.mean(c ** 2) ** 2)
                       / len(m))
        assert abs(var - 2.0 * t) <= 3 * se


def test_first_moment_matches_heat_flow():
    phi = GaussianBump(0.2, 0.5, 1.0)
    t = 0.5
    out = sp.sbm_functional_ensemble(150, t, 1.0 / 300, PARAMS, 3000, seed=9,
                                     snapshot_times=[t], snapshot_fns=[phi])
    vals = out["snapshots"][0, 0]
    target = float(phi.heat_smoothed(t, 0.0, PARAMS.kappa))
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - target) <= 3 * se


def test_laplace_functional_of_total_mass():
    t = 1.0
    masses = sp.total_mass_ensemble(400, t, 1.0 / 800, [t], 6000, seed=10)
    m = masses[:, 0]
    for lam in (0.5, 1.0, 2.0):
        vals = np.exp(-lam * m)
        target = math.exp(-lam / (1.0 + lam * t))
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - target) <= 3 * se


def test_variance_is_n_invariant():
    # the branching rate scales with N, so the mass law (hence its variance
    # 2t) does not depend on the particle scale; doubling N must not halve it
    t = 1.0
    var = []
    for N, seed in ((100, 11), (200, 12)):
        m = sp.total_mass_ensemble(N, t, 1.0 / (2 * N), [t], 6000,
                                   seed=seed)[:, 0]
        var.append(m.var(ddof=1))
    assert var[1] > 0.7 * var[0]
    for v in var:
        assert abs(v - 2.0) < 0.35


def test_atom_catalyst_basics():
    path = sp.simulate_atom_catalyst(1.0, 0.01, d=1, seed=3)
    assert path.kind == "atom"
    first = path.states[0]
    assert first.n == 1 and first.total_mass == 1.0
    assert float(first.positions[0]) == 0.0
    finals = np.array([
        float(sp.simulate_atom_catalyst(1.0, 0.02, seed=s).states[-1]
              .positions[0])
        for s in range(400)])
    se = finals.std(ddof=1) / math.sqrt(len(finals))
    assert abs(finals.mean()) <= 3 * se
    var = finals.var(ddof=1)
    se_var = math.sqrt(2.0 / (len(finals) - 1)) * var
    assert abs(var - 1.0) <= 3 * se_var


def test_measure_pairing_constants_and_zero():
    state = sp.ParticleMeasure(np.array([0.1, -0.4, 2.0]), 0.25, 0.0)
    assert sp.measure_pairing(state, lambda x: np.ones_like(x)) == \
        pytest.approx(0.75)
    assert sp.measure_pairing(state, lambda x: np.zeros_like(x)) == 0.0


@given(st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=40))
def test_measure_pairing_box_indicator_counts(positions):
    state = sp.ParticleMeasure(np.array(positions), 1.0 / len(positions), 0.0)
    box = IndicatorBox(-0.5, 0.5)
    manual = sum(1 for p in positions if -0.5 <= p <= 0.5) / len(positions)
    assert sp.measure_pairing(state, box) == pytest.approx(manual)


def test_occupation_integral_zero_forcing():
    path = _sbm(40, 0.3, 0.01, seed=4)
    assert sp.occupation_integral(path, lambda s, x: np.zeros_like(x)) == 0.0


def test_occupation_integral_frozen_unit_atom():
    times = np.linspace(0.0, 2.0, 41)
    path = sp.frozen_path(sp.delta_measure(0.0, 1.0, 1), times)
    val = sp.occupation_integral(path, lambda s, x: np.ones_like(x))
    assert val == pytest.approx(2.0, abs=1e-12)


def test_occupation_integral_sbm_mean():
    T = 0.5
    vals = [sp.occupation_integral(_sbm(80, T, 1.0 / 160, seed=100 + i),
                                   lambda s, x: np.ones_like(x))
            for i in range(300)]
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - T) <= 3 * se


def test_mass_functional_ensemble_matches_trapezoid():
    mass_T, occ = sp.mass_functional_ensemble(50, 0.5, 0.01, lambda s: 1.0,
                                              4, seed=5)
    assert mass_T.shape == (4,) and occ.shape == (4,)
    assert np.all(occ >= 0.0)


def test_determinism_bit_identical():
    a = _sbm(60, 0.4, 0.005, seed=99)
    b = _sbm(60, 0.4, 0.005, seed=99)
    assert np.array_equal(a.times, b.times)
    for sa, sb in zip(a.states, b.states):
        assert np.array_equal(sa.positions, sb.positions)
    c = _sbm(60, 0.4, 0.005, seed=98)
    assert any(not np.array_equal(sa.positions, sc.positions)
               for sa, sc in zip(a.states, c.states))


def test_unsupported_regimes_rejected():
    init = sp.delta_measure(0.0, 1.0, 10)
    with pytest.raises(sp.UnsupportedRegimeError):
        sp.simulate_sbm(init, 10, 0.1, 0.01, PARAMS, seed=1, beta=0.5)
    with pytest.raises(sp.UnsupportedRegimeError):
        sp.simulate_sbm(init, 10, 0.1, 0.01,
                        HeatKernelParams(kappa=1.0, stable_index=1.5), seed=1)


def test_step_too_coarse_is_rejected():
    init = sp.delta_measure(0.0, 1.0, 100)
    with pytest.raises(ValueError, match="2\\*N\\*dt"):
        sp.simulate_sbm(init, 100, 0.1, 0.01, PARAMS, seed=1)


def test_coarse_step_warning():
    init = sp.delta_measure(0.0, 1.0, 100)
    with pytest.warns(RuntimeWarning, match="offspring placement"):
        sp.simulate_sbm(init, 100, 0.1, 0.002, PARAMS, seed=1)


def test_population_cap_enforced():
    init = sp.delta_measure(0.0, 1.0, 200)
    with pytest.raises(sp.PopulationCapError):
        sp.simulate_sbm(init, 200, 1.0, 1.0 / 400, PARAMS, seed=6,
                        population_cap=50, coarse_step_threshold=None)


def test_path_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        sp.CatalystPath(np.array([0.0, 0.0]),
                        (sp.delta_measure(0.0, 1.0, 1, time_stamp=0.0),
                         sp.delta_measure(0.0, 1.0, 1, time_stamp=0.0)),
                        kind="frozen")
    with pytest.raises(ValueError, match="unit atom"):
        sp.CatalystPath(np.array([0.0]),
                        (sp.delta_measure(0.0, 1.0, 2, time_stamp=0.0),),
                        kind="atom")


def test_csv_export_roundtrip_shape():
    path = _sbm(20, 0.1, 0.02, seed=21)
    buf = io.StringIO()
    sp.path_to_csv(path, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "replica,time_index,time,particle_index,x1"
    n_particles = sum(st.n for st in path.states)
    assert len(lines) == 1 + n_particles
    sidecar = sp.path_sidecar(path)
    assert sidecar["kind"] == "sbm"
    assert sidecar["N"] == 20


def test_ensemble_streams_are_replica_keyed():
    rngs = [stream(5, 0, i) for i in range(3)]
    draws = [r.standard_normal(4) for r in rngs]
    assert not np.allclose(draws[0], draws[1])
    again = stream(5, 0, 1).standard_normal(4)
    assert np.array_equal(draws[1], again)
