"""Oracle suite behind ``lpcvt verify``.

Each check compares a closed-form result with an independent computation
from :mod:`lpcvt.oracles` and reports ``(name, expected, got, tolerance,
passed)``.  Sizes are kept small so the whole suite runs in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import oracles
from .aniso_field import TensorField, normalize_det, spectral_factor
from .gradient import grad_FT_vertices
from .optimizer import energy_and_gradient, evaluate
from .quadrature import IntegrationSimplex, polar_form, simplex_energy
from .rvd import Domain, build_rvd, circumcenter, circumcenter_jacobian


@dataclass
class CheckResult:
    name: str
    expected: float
    got: float
    tolerance: float
    passed: bool


def random_frame(rng):
    a = rng.normal(size=(3, 3))
    return normalize_det(spectral_factor(a @ a.T + 0.5 * np.eye(3)))


def random_simplex(rng, dim, frame=None):
    pts = rng.normal(size=(4, 3))
    return IntegrationSimplex(dim, pts[0], pts[1:], frame if frame is not None else random_frame(rng))


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def _abs(name, expected, got, tol):
    return CheckResult(name, float(expected), float(got), tol, bool(abs(got - expected) <= tol))


def _worst(name, errs, tol):
    worst = float(max(errs))
    return CheckResult(name, 0.0, worst, tol, worst <= tol)


def general_position_seeds(rng, k, lo=0.05, hi=0.95, min_gap=0.02):
    """Uniform seeds in ``[lo, hi]^3`` with pairwise distance above ``min_gap``."""
    out = []
    while len(out) < k:
        w = lo + (hi - lo) * rng.random(3)
        if all(np.linalg.norm(w - v) > min_gap for v in out):
            out.append(w)
    return np.array(out)


def run_checks(rng_seed: int = 0) -> list:
    rng = np.random.default_rng(rng_seed)
    out = []

    out.append(_abs("dirichlet_moment(2,0,0)", 1 / 60, oracles.dirichlet_moment(2, 0, 0), 1e-15))
    unit = IntegrationSimplex(3, np.zeros(3), np.eye(3))
    out.append(_abs("unit tetrahedron, p=2", 1 / 20, simplex_energy(unit, 2), 1e-15))
    tri = IntegrationSimplex(2, np.zeros(3), [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    out.append(_abs("unit triangle, p=2", 1 / 6, simplex_energy(tri, 2), 1e-15))

    for dim in (3, 2):
        errs = []
        for p in (2, 4, 6, 8):
            for _ in range(10):
                s = random_simplex(rng, dim)
                errs.append(rel_err(simplex_energy(s, p), oracles.exact_simplex_energy(s, p)))
        out.append(_worst(f"closed form vs exact, dim {dim}", errs, 1e-10))

    s = random_simplex(rng, 3)
    est, se = oracles.mc_integrate(s, 2, 200_000, rng_seed=rng_seed)
    z = abs(est - simplex_energy(s, 2)) / se
    out.append(CheckResult("Monte Carlo |z|, p=2", 0.0, z, 3.0, z <= 3.0))

    coeffs = oracles.polar_coefficients([(1, (2, 0)), (3, (1, 1)), (2, (0, 2))], 2)
    want = {(0, 0): 1, (0, 1): Fraction(3, 2), (1, 0): Fraction(3, 2), (1, 1): 2}
    out.append(CheckResult("polar form worked example", 1.0, float(coeffs == want), 0.0, coeffs == want))
    errs = []
    for p in (2, 4):
        for _ in range(10):
            args = rng.normal(size=(p, 3))
            errs.append(rel_err(oracles.polarization_oracle(oracles.power_sum_monomials(p), args), polar_form(args)))
    out.append(_worst("polarization oracle vs polar_form", errs, 1e-10))

    errs = []
    for dim in (3, 2):
        for _ in range(10):
            s = random_simplex(rng, dim)
            g = grad_FT_vertices(s, 4)

            def f(v, s=s):
                return simplex_energy(IntegrationSimplex(dim, s.apex, v, s.frame), 4)

            errs.append(rel_err(g.d_vertices, oracles.fd_gradient(f, s.vertices)))
    out.append(_worst("simplex gradient vs FD", errs, 1e-5))

    res, jac = [], []
    for _ in range(50):
        w = rng.normal(size=(4, 3))
        c = circumcenter(*w)
        d = np.linalg.norm(w - c, axis=1)
        res.append((d.max() - d.min()) / np.abs(w).max())
        jac.append(np.abs(sum(circumcenter_jacobian(*w)) - np.eye(3)).max())
    out.append(_worst("circumcenter equidistance", res, 1e-10))
    out.append(_worst("circumcenter Jacobian blocks sum to I", jac, 1e-10))

    cube = Domain.box()
    ev = evaluate([[0.5, 0.5, 0.5]], cube, None, 2)
    out.append(_abs("centred seed in unit cube, F", 0.25, ev.energy, 1e-12))
    out.append(_abs("centred seed in unit cube, |grad|", 0.0, ev.grad.inf_norm, 1e-12))

    W = general_position_seeds(rng, 20)
    rvd = build_rvd(W, cube)
    out.append(_abs("partition of unit cube, 20 seeds", 1.0, rvd.measure(), 1e-9))
    _, acc = energy_and_gradient(rvd, 2)
    err = rel_err(acc.g, oracles.cvt_gradient_oracle(rvd))
    out.append(CheckResult("CVT gradient oracle", 0.0, err, 1e-9, err <= 1e-9))

    W = general_position_seeds(rng, 8)
    field = TensorField.constant(np.diag([4.0, 1.0, 0.25]))
    _, acc = energy_and_gradient(build_rvd(W, cube, field), 4)
    fd = oracles.fd_gradient(lambda V: evaluate(V, cube, field, 4).energy, W)
    err = rel_err(acc.g, fd)
    out.append(CheckResult("pipeline gradient vs FD, p=4", 0.0, err, 1e-4, err <= 1e-4))
    return out


def format_table(results) -> str:
    head = f"{'check':<40} {'expected':>12} {'got':>12} {'tol':>9}  result"
    lines = [head, "-" * len(head)]
    for r in results:
        lines.append(
            f"{r.name:<40} {r.expected:>12.6g} {r.got:>12.6g} {r.tolerance:>9.2g}  {'pass' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
