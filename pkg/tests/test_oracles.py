from fractions import Fraction

import numpy as np
import pytest

from lpcvt.oracles import (
    dirichlet_moment,
    exact_simplex_energy,
    fd_gradient,
    mc_integrate,
    polar_coefficients,
    polarization_oracle,
    power_sum_monomials,
)
from lpcvt.quadrature import IntegrationSimplex, polar_form, simplex_energy

UNIT_TET = IntegrationSimplex(3, np.zeros(3), np.eye(3))
UNIT_TRI = IntegrationSimplex(2, np.zeros(3), [[0, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_mc_unit_tetra():
    est, se = mc_integrate(UNIT_TET, 2, 1_000_000, rng_seed=1)
    assert abs(est - 1 / 20) <= 3 * se


def test_mc_triangle():
    est, se = mc_integrate(UNIT_TRI, 2, 1_000_000, rng_seed=2)
    assert abs(est - 1 / 6) <= 3 * se


def test_mc_degenerate():
    flat = IntegrationSimplex(3, np.zeros(3), [[1, 0, 0], [0, 1, 0], [1, 1, 0]])
    assert mc_integrate(flat, 2, 1000) == (0.0, 0.0)


def test_mc_rate_and_reproducibility():
    s = IntegrationSimplex(3, [0.1, 0.2, 0.3], [[1, 0, 0.2], [0, 1.5, 0], [0.3, 0.1, 1]])
    _, se_small = mc_integrate(s, 4, 1_000, rng_seed=3)
    _, se_big = mc_integrate(s, 4, 1_000_000, rng_seed=3)
    assert se_big <= se_small / 30
    assert mc_integrate(s, 4, 500_000, rng_seed=5, block=100_000) == mc_integrate(s, 4, 500_000, rng_seed=5, block=100_000)


def test_mc_rejects_no_samples():
    with pytest.raises(ValueError):
        mc_integrate(UNIT_TET, 2, 0)


def test_dirichlet_moments():
    assert dirichlet_moment(2, 0, 0) == pytest.approx(1 / 60)
    assert dirichlet_moment(0, 0, 0) == pytest.approx(1 / 6)
    assert dirichlet_moment(1, 1, 0, dim=2) == pytest.approx(1 / 24)
    with pytest.raises(OverflowError):
        dirichlet_moment(10, 10, 1)
    with pytest.raises(ValueError):
        dirichlet_moment(-1, 0, 0)


def test_exact_integration_matches_unit_values():
    assert exact_simplex_energy(UNIT_TET, 2) == pytest.approx(1 / 20, rel=1e-15)
    assert exact_simplex_energy(UNIT_TRI, 2) == pytest.approx(1 / 6, rel=1e-15)


def test_polarization_worked_example():
    coeffs = polar_coefficients([(1, (2, 0)), (3, (1, 1)), (2, (0, 2))], 2)
    assert coeffs == {(0, 0): 1, (0, 1): Fraction(3, 2), (1, 0): Fraction(3, 2), (1, 1): 2}


@pytest.mark.parametrize("p", [2, 4, 6])
def test_polarization_diagonal(rng, p):
    u = rng.normal(size=3)
    assert polarization_oracle(power_sum_monomials(p), [u] * p) == pytest.approx(np.sum(u**p), rel=1e-12)


@pytest.mark.parametrize("p", [2, 4])
def test_polarization_matches_polar_form(rng, p):
    for _ in range(100):
        args = rng.normal(size=(p, 3))
        assert polarization_oracle(power_sum_monomials(p), args) == pytest.approx(polar_form(args), rel=1e-10, abs=1e-12)


def test_polarization_rejects_wrong_degree():
    with pytest.raises(ValueError):
        polar_coefficients([(1, (2, 1))], 2)


def test_fd_quadratic(rng):
    W = rng.normal(size=(5, 3))
    assert np.abs(fd_gradient(lambda V: np.sum(V**2), W) - 2 * W).max() <= 1e-8
    with pytest.raises(ValueError):
        fd_gradient(np.sum, W, h=0)


def test_fd_does_not_mutate_input(rng):
    W = rng.normal(size=(3, 3))
    before = W.copy()
    fd_gradient(lambda V: np.sum(V**4), W)
    assert np.array_equal(W, before)


def test_exact_vs_closed_form_many(rng):
    for p in (2, 4, 6, 8):
        for _ in range(100):
            s = IntegrationSimplex(3, rng.normal(size=3), rng.normal(size=(3, 3)))
            assert exact_simplex_energy(s, p) == pytest.approx(simplex_energy(s, p), rel=1e-10)
