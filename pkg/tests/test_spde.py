from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractal_spde import (Coefficient, EnsembleConfig, InitialCondition, KernelEvaluator,
                          NoContraction, NoiseModel, NonFinite, cantor_spec, euler_step,
                          euler_trajectory, picard_reference,
                          simulate_ensemble)
from fractal_spde.spde import FieldState, coarsen_increments, sample_noise_increments

from conftest import make_basis

coefficients = st.one_of(
    st.builds(Coefficient.linear, st.floats(-3, 3)),
    st.builds(Coefficient.affine, st.floats(-3, 3), st.floats(-3, 3)),
    st.builds(Coefficient.constant, st.floats(-3, 3)),
    st.builds(Coefficient.bounded_sigmoid, st.floats(-3, 3)),
)


# -- coefficients ----------------------------------------------------------

@settings(max_examples=100)
@given(coefficients, st.floats(-50, 50), st.floats(-50, 50))
def test_coefficient_lipschitz_and_growth(h, u, v):
    a, b = h(0.0, u), h(0.0, v)
    assert abs(a - b) <= h.lipschitz * abs(u - v) + 1e-9
    assert abs(a) <= h.growth * (1 + abs(u)) + 1e-9


def test_sigmoid_is_bounded_and_positive():
    g = Coefficient.bounded_sigmoid(2.0)
    u = np.linspace(-800, 800, 101)
    vals = g(0.0, u)
    assert np.all(vals >= 0) and np.all(vals <= 2.0)
    assert g(0.0, 0.0) == pytest.approx(1.0)
    assert g.bounded and not Coefficient.linear(1.0).bounded


def test_coefficient_zero_detection_and_dict():
    assert Coefficient.zero().is_zero
    assert Coefficient.linear(0.0).is_zero
    assert not Coefficient.affine(0.0, 1.0).is_zero
    assert Coefficient.affine(-1, 0.5).to_dict() == {"kind": "affine", "a": -1.0, "c": 0.5}
    with pytest.raises(ValueError):
        Coefficient("cubic")
    with pytest.raises(ValueError):
        Coefficient.linear(float("nan"))


def test_initial_conditions(cantor_neumann, cantor_dirichlet):
    u = InitialCondition("constant", c=2.0).evaluate(cantor_neumann)
    assert np.all(u == 2.0)
    u = InitialCondition("constant", c=2.0).evaluate(cantor_dirichlet)
    assert u[0] == u[-1] == 0 and u[1] == 2.0
    e = InitialCondition("eigenmode", k=2, amplitude=3.0).evaluate(cantor_neumann)
    np.testing.assert_allclose(e, 3 * cantor_neumann.eigenvectors[:, 1])
    pw = InitialCondition("piecewise", breaks=(0.5,), values=(1.0, 3.0)).evaluate(cantor_neumann)
    assert pw[0] == 1.0 and pw[-1] == 3.0
    with pytest.raises(ValueError):
        InitialCondition("constant", c=-1.0)
    with pytest.raises(ValueError):
        InitialCondition("piecewise", breaks=(0.5,), values=(1.0,))
    with pytest.raises(ValueError):
        InitialCondition("eigenmode", k=10_000).evaluate(cantor_neumann)


# -- noise -----------------------------------------------------------------

def test_noise_variance_matches_cell_mass():
    m = np.array([0.1, 0.2, 0.3, 0.15, 0.25])
    dt = 0.01
    noise = NoiseModel(7, dt, m)
    inc = noise.increments(0, 0, 40_000)
    var = inc.var(axis=0)
    # sample variance of 40000 normals has relative sd sqrt(2/40000) ~ 0.7%
    np.testing.assert_allclose(var, m * dt, rtol=0.04)
    assert np.all(np.abs(inc.mean(axis=0)) < 4 * np.sqrt(m * dt / 40_000))
    corr = np.corrcoef(inc.T)
    assert np.abs(corr - np.eye(5)).max() < 0.03


def test_noise_random_access():
    m = np.full(6, 1 / 6)
    noise = NoiseModel(3, 0.01, m)
    block = noise.increments(2, 0, 10)
    np.testing.assert_array_equal(noise.increments(2, 4, 3), block[4:7])
    np.testing.assert_array_equal(sample_noise_increments(noise, 9, path=2), block[9])
    assert not np.array_equal(noise.increments(3, 0, 10), block)
    assert not np.array_equal(NoiseModel(4, 0.01, m).increments(2, 0, 10), block)
    with pytest.raises(ValueError):
        NoiseModel(-1, 0.01, m)


def test_coarsen_increments():
    inc = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(coarsen_increments(inc, 3), [[6, 9], [24, 27]])
    with pytest.raises(ValueError):
        coarsen_increments(inc, 4)


# -- stepping --------------------------------------------------------------

@pytest.fixture(scope="module")
def cantor5():
    return KernelEvaluator(make_basis(cantor_spec(), 5, "neumann"))


def test_deterministic_step_is_semigroup(cantor5, rng):
    u0 = rng.normal(size=len(cantor5.nodes))
    zero = Coefficient.zero()
    traj = euler_trajectory(cantor5, u0, zero, zero, np.zeros((20, len(u0))), 0.01)
    np.testing.assert_allclose(traj[-1], cantor5.apply(0.2, u0), atol=1e-8)
    st1 = euler_step(cantor5, FieldState(0.0, u0), zero, zero, np.zeros(len(u0)), 0.01)
    np.testing.assert_allclose(st1.values, traj[1], atol=1e-14)
    assert st1.t == pytest.approx(0.01)


def test_constant_stays_constant(cantor5):
    u0 = np.ones(len(cantor5.nodes))
    zero = Coefficient.zero()
    traj = euler_trajectory(cantor5, u0, zero, zero, np.zeros((50, len(u0))), 0.02)
    np.testing.assert_allclose(traj, 1.0, atol=1e-12)


def test_step_blowup_raises(cantor5):
    u0 = np.full(len(cantor5.nodes), 1e13)
    with pytest.raises(NonFinite):
        euler_step(cantor5, FieldState(0.0, u0), Coefficient.zero(), Coefficient.zero(),
                   np.zeros(len(u0)), 0.01)
    with pytest.raises(NonFinite):
        FieldState(0.0, np.array([np.nan]))


def test_picard_equals_euler_on_same_grid(cantor5):
    f = Coefficient.affine(-1.0, 0.5)
    g = Coefficient.bounded_sigmoid(1.0)
    u0 = np.ones(len(cantor5.nodes))
    inc = NoiseModel(1, 1e-3, cantor5.masses).increments(0, 0, 64)
    ref = picard_reference(cantor5, u0, f, g, inc, 1e-3)
    euler = euler_trajectory(cantor5, u0, f, g, inc, 1e-3)
    np.testing.assert_allclose(ref.values, euler, atol=1e-9)
    assert ref.distances[-1] < 1e-12
    assert ref.values.shape == (65, len(u0))


def test_picard_limits(cantor5):
    u0 = np.ones(len(cantor5.nodes))
    f, g = Coefficient.affine(-1.0, 0.5), Coefficient.linear(1.0)
    inc = NoiseModel(1, 1e-3, cantor5.masses).increments(0, 0, 64)
    with pytest.raises(NoContraction):
        picard_reference(cantor5, u0, f, g, inc, 1e-3, max_iter=2)
    with pytest.raises(ValueError):
        picard_reference(cantor5, u0, f, g, inc, 1e-3, max_steps=32)
    with pytest.raises(ValueError):
        picard_reference(cantor5, u0, f, g, inc, 1e-3, max_cells=16)


# -- ensembles -------------------------------------------------------------

def test_ensemble_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(T=1.0, dt=0.3, paths=1)
    with pytest.raises(ValueError):
        EnsembleConfig(T=1.0, dt=0.25, paths=1, output_times=(0.5, 0.3))
    with pytest.raises(ValueError):
        EnsembleConfig(T=1.0, dt=0.25, paths=1, output_times=(0.1,))
    with pytest.raises(ValueError):
        EnsembleConfig(T=1.0, dt=0.25, paths=0)
    cfg = EnsembleConfig(T=1.0, dt=0.25, paths=1)
    assert cfg.n_steps == 4
    assert list(cfg.step_indices()) == [0, 4]


def test_ensemble_is_thread_independent(cantor5):
    cfg = EnsembleConfig(T=0.1, dt=1 / 160, paths=50, seed=9,
                         g=Coefficient.linear(1.0), chunk_paths=8, block_steps=5,
                         output_times=(0.0, 0.05, 0.1))
    a = simulate_ensemble(cfg, cantor5, threads=1)
    b = simulate_ensemble(cfg, cantor5, threads=4)
    assert np.array_equal(a.values, b.values)
    assert a.content_hash() == b.content_hash()
    # chunking and block size are performance knobs only
    c = simulate_ensemble(replace(cfg, chunk_paths=50, block_steps=64), cantor5, threads=1)
    assert np.array_equal(a.values, c.values)
    assert a.values.shape == (50, 3, len(cantor5.nodes))
    assert a.path_keys[3] == (9, 3)


def test_ensemble_path_matches_euler_trajectory(cantor5):
    cfg = EnsembleConfig(T=0.05, dt=1 / 400, paths=3, seed=2, g=Coefficient.linear(0.7),
                         f=Coefficient.affine(-1, 0.2))
    ens = simulate_ensemble(cfg, cantor5)
    noise = NoiseModel(2, 1 / 400, cantor5.masses)
    inc = noise.increments(1, 0, cfg.n_steps)
    traj = euler_trajectory(cantor5, np.ones(len(cantor5.nodes)), cfg.f, cfg.g, inc, cfg.dt)
    np.testing.assert_allclose(ens.values[1, -1], traj[-1], rtol=1e-12, atol=1e-12)


def test_ensemble_deterministic_equals_semigroup(cantor5):
    u0 = InitialCondition("piecewise", breaks=(0.5,), values=(2.0, 0.0))
    cfg = EnsembleConfig(T=0.2, dt=0.01, paths=2, u0=u0, output_times=(0.0, 0.1, 0.2))
    ens = simulate_ensemble(cfg, cantor5)
    start = u0.evaluate(cantor5.basis)
    for i, t in enumerate(ens.times):
        expect = start if t == 0 else cantor5.apply(t, start)
        np.testing.assert_allclose(ens.values[0, i], expect, atol=1e-8)
    assert np.array_equal(ens.values[0], ens.values[1])


def test_ensemble_blowup_modes(cantor5):
    cfg = EnsembleConfig(T=0.5, dt=0.01, paths=4, f=Coefficient.linear(80.0),
                         on_blowup="raise")
    with pytest.raises(NonFinite) as info:
        simulate_ensemble(cfg, cantor5)
    assert info.value.path == 0
    ens = simulate_ensemble(replace(cfg, on_blowup="record"), cantor5)
    assert len(ens.blowups) == 4
    assert np.isnan(ens.values[:, -1]).all()


def test_ensemble_lookup_helpers(cantor5):
    cfg = EnsembleConfig(T=0.1, dt=0.01, paths=2, output_times=(0.0, 0.05, 0.1))
    ens = simulate_ensemble(cfg, cantor5)
    assert ens.time_index(0.05) == 1
    assert ens.node_index(cantor5.nodes[5]) == 5
    with pytest.raises(ValueError):
        ens.time_index(0.07)
    with pytest.raises(ValueError):
        ens.node_index(0.5)
    man = ens.manifest()
    assert man["paths"] == 2 and len(man["content_hash"]) == 64
    assert len(ens.records()) == 2 * 3 * len(cantor5.nodes)
