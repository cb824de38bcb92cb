import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpcvt.aniso_field import FrameMatrix, normalize_det, spectral_factor
from lpcvt.errors import OddP
from lpcvt.oracles import exact_power_integral, exact_simplex_energy
from lpcvt.quadrature import (
    IntegrationSimplex,
    component_sum,
    exponent_multisets,
    lasserre_integrate,
    polar_form,
    simplex_energy,
    star_power,
    star_product,
)

from conftest import random_spd

UNIT_TET = IntegrationSimplex(3, np.zeros(3), np.eye(3))
UNIT_TRI = IntegrationSimplex(2, np.zeros(3), [[0, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_star_product():
    assert np.array_equal(star_product([1, 2, 3], [4, 5, 6]), [4, 10, 18])
    v = np.array([0.3, -2.0, 7.0])
    assert np.array_equal(star_product([1, 1, 1], v), v)
    assert np.array_equal(star_product(v, np.zeros(3)), np.zeros(3))


def test_star_power():
    assert np.array_equal(star_power([2, 1, 0], 3), [8, 1, 0])
    assert np.array_equal(star_power([0.0, -5.0, 3.0], 0), [1, 1, 1])
    assert np.array_equal(star_power([-2, 3, 1], 2), [4, 9, 1])
    with pytest.raises(ValueError):
        star_power([1, 1, 1], -1)


def test_component_sum():
    assert component_sum([4, 10, 18]) == 32
    assert component_sum([0, 0, 0]) == 0
    assert component_sum([1, -1, 0]) == 0


def test_exponent_multisets():
    assert exponent_multisets(3, 2) == [(2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1), (0, 0, 2)]
    assert len(exponent_multisets(4, 2)) == 10
    assert exponent_multisets(3, 0) == [(0, 0, 0)]
    for n, p in itertools.product(range(1, 5), range(0, 9)):
        ms = exponent_multisets(n, p)
        assert len(ms) == comb(n + p - 1, p)
        assert all(sum(t) == p for t in ms)
        assert ms == sorted(ms, reverse=True)


def test_unit_simplices():
    assert simplex_energy(UNIT_TET, 2) == pytest.approx(1 / 20, rel=1e-15)
    assert simplex_energy(UNIT_TRI, 2) == pytest.approx(1 / 6, rel=1e-15)


def test_degenerate_simplex_is_zero():
    flat = IntegrationSimplex(3, np.zeros(3), [[1, 0, 0], [0, 1, 0], [1, 1, 0]])
    assert simplex_energy(flat, 2) == 0.0
    assert flat.degenerate
    line = IntegrationSimplex(2, np.zeros(3), [[0, 0, 0], [1, 1, 1], [2, 2, 2]])
    assert simplex_energy(line, 4) == 0.0


@pytest.mark.parametrize("p", [1, 3, 0, -2, 18, 2.5])
def test_invalid_p(p):
    with pytest.raises(OddP):
        simplex_energy(UNIT_TET, p)


def test_polar_form_examples(rng):
    assert polar_form([[1, 0, 0], [1, 0, 0]]) == 1
    assert polar_form([[1, 2, 0], [3, 0, 0]]) == 3
    for _ in range(100):
        args = rng.normal(size=(3, 3))
        vals = {polar_form(perm) for perm in itertools.permutations(args)}
        assert max(vals) - min(vals) <= 1e-15 * max(1.0, max(abs(v) for v in vals))


@pytest.mark.parametrize("p", [2, 4])
def test_polar_form_symmetric_and_linear(rng, p):
    for _ in range(100):
        args = rng.normal(size=(p, 3))
        vals = [polar_form(perm) for perm in itertools.permutations(args)]
        assert np.ptp(vals) <= 1e-14 * max(1.0, np.abs(vals).max())
        a, b = rng.normal(size=3), rng.normal(size=3)
        lam, mu = rng.normal(size=2)
        mixed = args.copy()
        mixed[0] = lam * a + mu * b
        pa, pb = args.copy(), args.copy()
        pa[0], pb[0] = a, b
        lhs = polar_form(mixed)
        rhs = lam * polar_form(pa) + mu * polar_form(pb)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_lasserre_examples():
    tet = np.vstack([np.zeros(3), np.eye(3)])
    assert lasserre_integrate(tet, 2) == pytest.approx(1 / 20, rel=1e-14)
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    assert lasserre_integrate(tri, 2) == pytest.approx(1 / 6, rel=1e-14)
    flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    assert lasserre_integrate(flat, 2, with_flag=True) == (0.0, True)


def test_lasserre_translated_vs_monte_carlo(rng):
    pts = rng.random((4, 3)) + np.array([1.0, -0.5, 0.3])
    val = lasserre_integrate(pts, 4)
    est, se = _mc_points(pts, 4, 1_000_000)
    assert abs(est - val) <= 3 * se
    assert val == pytest.approx(exact_power_integral(pts, 4), rel=1e-12)


def _mc_points(pts, p, n):
    r = np.random.default_rng(7)
    cuts = np.sort(r.random((n, 3)), axis=1)
    lam = np.diff(np.hstack([np.zeros((n, 1)), cuts, np.ones((n, 1))]), axis=1)
    x = lam @ pts
    f = (x**p).sum(axis=1)
    vol = abs(np.linalg.det(pts[1:] - pts[0])) / 6
    return f.mean() * vol, f.std(ddof=1) / np.sqrt(n) * vol


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("p", [2, 4, 6, 8])
def test_energy_matches_lasserre_and_exact(rng, dim, p):
    for _ in range(25):
        frame = normalize_det(spectral_factor(random_spd(rng)))
        s = IntegrationSimplex(dim, rng.normal(size=3), rng.normal(size=(3, 3)), frame)
        e = simplex_energy(s, p)
        assert e >= 0
        u = s.transformed()
        pts = np.vstack([np.zeros(3), u]) if dim == 3 else u
        assert e == pytest.approx(lasserre_integrate(pts, p), rel=1e-12)
        assert e == pytest.approx(exact_simplex_energy(s, p), rel=1e-10)


def test_orientation_sign():
    s = IntegrationSimplex(3, np.zeros(3), np.eye(3), orientation=-1)
    assert simplex_energy(s, 2) == pytest.approx(-1 / 20)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (4, 3), elements=st.floats(-2, 2)),
    st.sampled_from([0.5, 2.0, 3.0]),
    st.sampled_from([2, 4]),
    st.sampled_from([2, 3]),
)
def test_homogeneity(pts, s, p, dim):
    a = IntegrationSimplex(dim, pts[0], pts[1:])
    if a.degenerate or a.measure() < 1e-6:
        return
    b = IntegrationSimplex(dim, s * pts[0], s * pts[1:])
    assert simplex_energy(b, p) == pytest.approx(s ** (p + dim) * simplex_energy(a, p), rel=1e-10)


def test_energy_sum_scales_with_p():
    from lpcvt.quadrature import energy_sum

    u = np.random.default_rng(0).normal(size=(1, 3, 3))
    for p in (2, 4, 6):
        assert energy_sum(2.0 * u, p)[0] == pytest.approx(2.0**p * energy_sum(u, p)[0], rel=1e-13)


def test_frame_is_applied():
    f = FrameMatrix(np.diag([2.0, 1.0, 0.5]))
    s = IntegrationSimplex(3, np.zeros(3), np.eye(3), f)
    # U = diag(2, 1, 0.5): same volume, integrand stretched
    assert simplex_energy(s, 2) == pytest.approx(exact_simplex_energy(s, 2), rel=1e-13)
    assert simplex_energy(s, 2) != pytest.approx(1 / 20)
