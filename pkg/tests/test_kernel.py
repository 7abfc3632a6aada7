import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fractal_spde import (KernelEvaluator, NonpositiveLambda, TimeTooSmall, cantor_spec,
                          delta_resolvent_check, exponents, kernel_bounds_report,
                          laplace_check, resolvent_matrix)
from fractal_spde.kernel import (chapman_kolmogorov_error, kernel_records, kernel_value,
                                 lipschitz_constant, mass_defect, one_to_inf_norm,
                                 resolvent_value, semigroup_apply)
from fractal_spde.ifs import build_partition

from conftest import make_basis
from oracles import (images_kernel, images_kernel_dirichlet, resolvent_dirichlet,
                     resolvent_neumann)

SAMPLE = [0, 37, 128, 200, 256]


@pytest.mark.parametrize("bc,oracle", [("neumann", images_kernel),
                                       ("dirichlet", images_kernel_dirichlet)])
@pytest.mark.parametrize("t,atol", [(0.01, 1e-3), (0.1, 5e-5)])
def test_lebesgue_kernel_matches_images(bc, oracle, t, atol, leb_neumann, leb_dirichlet):
    basis = leb_neumann if bc == "neumann" else leb_dirichlet
    ev = KernelEvaluator(basis)
    p = ev.matrix(t)
    x = basis.nodes
    for i in SAMPLE:
        for j in SAMPLE:
            assert p[i, j] == pytest.approx(oracle(t, x[i], x[j]), abs=atol)


@pytest.mark.parametrize("bc,oracle", [("neumann", resolvent_neumann),
                                       ("dirichlet", resolvent_dirichlet)])
def test_lebesgue_resolvent_matches_green_function(bc, oracle, leb_neumann, leb_dirichlet):
    basis = leb_neumann if bc == "neumann" else leb_dirichlet
    r = resolvent_matrix(basis, 1.0)
    x = basis.nodes
    for i in SAMPLE:
        for j in SAMPLE:
            assert r[i, j] == pytest.approx(oracle(x[i], x[j]), abs=1e-5)
    assert resolvent_value(basis, 1.0, 0.3, 0.6) == pytest.approx(oracle(0.3, 0.6), abs=1e-5)


def test_resolvent_rejects_nonpositive_lambda(cantor_neumann):
    for lam in (0.0, -1.0):
        with pytest.raises(NonpositiveLambda):
            resolvent_matrix(cantor_neumann, lam)


def test_time_too_small(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann, t_min=1e-3)
    with pytest.raises(TimeTooSmall):
        ev.matrix(5e-4)


def test_incomplete_basis_tail_bound(cantor_neumann):
    full = KernelEvaluator(cantor_neumann)
    part = KernelEvaluator(make_basis(cantor_spec(), 6, "neumann", K=40))
    assert part.remainder_bound(2e-3) > 0
    assert full.remainder_bound(2e-3) == 0
    # a truncated basis agrees with the full one within the tolerance
    np.testing.assert_allclose(part.matrix(0.05), full.matrix(0.05), atol=1e-8)
    with pytest.raises(TimeTooSmall):
        part.matrix(1e-4)


def test_n_terms_meets_tolerance(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann, tolerance=1e-6)
    for t in (1e-3, 1e-2, 1e-1):
        k = ev.n_terms(t)
        assert ev.truncation_error(t) <= 1e-6
        assert 1 <= k <= cantor_neumann.n_modes
    assert ev.n_terms(1e-1) <= ev.n_terms(1e-3)


@pytest.mark.parametrize("t", [1e-3, 0.1, 1.0, 10.0])
def test_neumann_mass_conservation(t, cantor_neumann, leb_neumann):
    for b in (cantor_neumann, leb_neumann):
        assert np.abs(mass_defect(KernelEvaluator(b), t)).max() < 1e-8


@pytest.mark.parametrize("t", [1e-3, 0.1, 1.0, 10.0])
def test_dirichlet_subconservation(t, cantor_dirichlet):
    assert mass_defect(KernelEvaluator(cantor_dirichlet), t).max() < 1e-8


def test_chapman_kolmogorov(cantor_neumann, cantor_dirichlet):
    for b in (cantor_neumann, cantor_dirichlet):
        assert chapman_kolmogorov_error(KernelEvaluator(b), 0.1, 0.1) < 1e-6


def test_diagonal_nonincreasing_and_symmetric(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann)
    ts = np.geomspace(1e-3, 5, 30)
    d = np.array([ev.diagonal(t) for t in ts])
    assert np.all(np.diff(d, axis=0) <= 1e-12 * d.max())
    p = ev.matrix(0.01)
    assert np.array_equal(p, p.T)
    assert p.min() > -1e-8
    with pytest.raises(ValueError):
        p[0, 0] = 1.0


def test_neumann_diagonal_at_least_one(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann)
    for t in np.linspace(0.01, 20, 50):
        assert ev.diagonal(t).min() >= 1 - 1e-9


def test_semigroup_apply(cantor_neumann, rng):
    ev = KernelEvaluator(cantor_neumann)
    h = rng.normal(size=len(cantor_neumann.nodes))
    direct = ev.matrix(0.05) @ (cantor_neumann.masses * h)
    np.testing.assert_allclose(semigroup_apply(ev, 0.05, h), direct, atol=1e-9)
    np.testing.assert_allclose(semigroup_apply(ev, 0.0, h), h, atol=1e-10)
    stack = semigroup_apply(ev, 0.05, np.vstack([h, 2 * h]))
    np.testing.assert_allclose(stack[1], 2 * stack[0], atol=1e-12)


def test_kernel_value_interpolates(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann)
    x = cantor_neumann.nodes
    p = ev.matrix(0.1)
    assert kernel_value(ev, 0.1, x[3], x[7]) == pytest.approx(p[3, 7], rel=1e-12)


def test_operator_norm_is_max_kernel_entry(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann)
    assert one_to_inf_norm(ev, 0.01) == pytest.approx(ev.matrix(0.01).max(), rel=1e-12)


def test_laplace_transform_matches_series(cantor_neumann):
    ev = KernelEvaluator(cantor_neumann)
    rows = laplace_check(ev, [(0, 0), (5, 40), (63, 64)], 1.0)
    for r in rows:
        assert abs(r["quadrature"] - r["series_window"]) < 1e-4
        assert r["series_full"] == pytest.approx(r["series_window"] + r["outside"])


def test_lipschitz_constant_of_linear_rows():
    x = np.linspace(0, 1, 11)
    k = np.outer(np.ones(3), 2.5 * x)
    assert lipschitz_constant(x, k) == pytest.approx(2.5)


def test_delta_resolvent_bounds():
    spec = cantor_spec()
    grid = build_partition(spec, 8)
    basis = make_basis(spec, 8, "neumann")
    rho = resolvent_matrix(basis, 1.0)
    gram = basis.gram()
    L1 = lipschitz_constant(basis.nodes, rho)
    errs = []
    for n in range(2, 9):
        rep = delta_resolvent_check(basis, grid, 2 / 9, 2 / 9, n, n, L1, resolvent=rho,
                                    gram=gram)
        assert rep.passed, rep
        errs.append(rep.error)
    assert errs[-1] < errs[0]


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
def test_semigroup_property_random_times(s, t):
    b = make_basis(cantor_spec(), 4, "neumann")
    assert chapman_kolmogorov_error(KernelEvaluator(b), s, t) < 1e-7


def test_bounds_report(cantor_neumann):
    rep = kernel_bounds_report(KernelEvaluator(cantor_neumann), exponents(cantor_spec()))
    assert rep.passed, rep.summary()
    names = [r[0] for r in rep.constant_records()]
    assert {"C5", "C6", "C7", "C11", "L1"} <= set(names)


def test_kernel_records_shape(small_cantor_evaluator):
    rows = kernel_records(small_cantor_evaluator, [0.1, 1.0], [0, 3])
    assert len(rows) == 8
    assert rows[0][:3] == (0.1, 0.0, 0.0)
