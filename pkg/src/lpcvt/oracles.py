"""Independent reference computations used to check the closed forms.

None of these routines call into the closed-form energy or gradient code:

* ``dirichlet_moment`` / ``exact_power_integral``: exact integration by
  multinomial expansion of the affinely mapped integrand and the classical
  moments of the unit simplex.
* ``mc_integrate``: Monte Carlo with uniform barycentric sampling.
* ``polar_coefficients`` / ``polarization_oracle``: polar form of a
  homogeneous polynomial by multilinear expansion of the mixed derivative.
* ``fd_gradient``: central finite differences.
* ``cvt_gradient_oracle``: the classical ``2 m_i (w_i - c_i)`` CVT gradient
  from directly integrated masses and centroids.
"""

from __future__ import annotations

import itertools
from collections import Counter
from fractions import Fraction
from math import factorial, prod

import numpy as np

from .quadrature import DEGENERATE_REL, IntegrationSimplex

MOMENT_MAX = 20


def dirichlet_moment(a: int, b: int, c: int = 0, dim: int = 3) -> float:
    """Integral of ``x^a y^b z^c`` over the standard unit simplex.

    ``a! b! c! / (a + b + c + dim)!``; in 2D the ``z`` exponent must be 0.
    """
    if min(a, b, c) < 0:
        raise ValueError("moment exponents must be non-negative")
    if dim == 2 and c:
        raise ValueError("the 2D unit simplex has no z coordinate")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if a + b + c > MOMENT_MAX:
        raise OverflowError(f"exponent sum {a + b + c} exceeds {MOMENT_MAX}")
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + dim)


def exact_power_integral(points, p: int) -> float:
    """Exact integral of ``sum_xyz(u^p)`` over the simplex ``points``.

    ``points`` has ``n + 1`` rows (``n = 2`` or ``3``) in R^3.  The simplex
    is parametrized as ``u = P0 + E lam`` with ``lam`` in the unit simplex;
    each ``u_c^p`` is expanded multinomially and integrated term by term.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts) - 1
    p0 = pts[0]
    edges = pts[1:] - p0
    if n == 3:
        jac = abs(float(np.linalg.det(edges)))
    elif n == 2:
        jac = float(np.linalg.norm(np.cross(edges[0], edges[1])))
    else:
        raise ValueError("only triangles and tetrahedra are supported")
    scale = float(np.abs(edges).max()) if edges.size else 0.0
    if jac <= DEGENERATE_REL * factorial(n) * scale**n:
        return 0.0
    total = 0.0
    for ks in itertools.product(range(p + 1), repeat=n + 1):
        if sum(ks) != p:
            continue
        k0, lam_exps = ks[0], ks[1:]
        multinom = factorial(p) // prod(factorial(k) for k in ks)
        padded = tuple(lam_exps) + (0,) * (3 - n)
        moment = dirichlet_moment(*padded, dim=n)
        for c in range(3):
            term = p0[c] ** k0
            for j, k in enumerate(lam_exps):
                term *= edges[j, c] ** k
            total += multinom * term * moment
    return jac * total


def simplex_points(s: IntegrationSimplex) -> np.ndarray:
    """Vertices of the transformed simplex (apex at the origin in 3D)."""
    u = s.transformed()
    if s.dim == 3:
        return np.vstack([np.zeros(3), u])
    return u


def exact_simplex_energy(s: IntegrationSimplex, p: int) -> float:
    return s.orientation * exact_power_integral(simplex_points(s), p)


def mc_integrate(s: IntegrationSimplex, p: int, n_samples: int, rng_seed=0, block: int = 200_000):
    """Monte Carlo estimate of the simplex energy and its standard error.

    Points are drawn uniformly via sorted uniforms (spacings of ``dim``
    sorted U(0,1) draws are uniform barycentric weights).  Each block of
    samples gets its own RNG stream spawned from ``rng_seed``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pts = simplex_points(s)
    n = len(pts) - 1
    edges = pts[1:] - pts[0]
    if n == 3:
        measure = abs(float(np.linalg.det(edges))) / 6.0
    else:
        measure = float(np.linalg.norm(np.cross(edges[0], edges[1]))) / 2.0
    scale = float(np.abs(edges).max())
    if measure <= DEGENERATE_REL * scale**n:
        return 0.0, 0.0
    n_blocks = -(-n_samples // block)
    streams = np.random.SeedSequence(rng_seed).spawn(n_blocks)
    total = 0.0
    total_sq = 0.0
    remaining = n_samples
    for ss in streams:
        m = min(block, remaining)
        remaining -= m
        rng = np.random.default_rng(ss)
        cuts = np.sort(rng.random((m, n)), axis=1)
        cuts = np.hstack([np.zeros((m, 1)), cuts, np.ones((m, 1))])
        lam = np.diff(cuts, axis=1)
        x = lam @ pts
        f = (x**p).sum(axis=1)
        total += f.sum()
        total_sq += (f * f).sum()
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    if n_samples > 1:
        var *= n_samples / (n_samples - 1)
    return s.orientation * mean * measure, measure * np.sqrt(var / n_samples)


def polar_coefficients(monomials, p: int) -> dict:
    """Coefficients of the polar form of a p-homogeneous polynomial.

    ``monomials`` is a list of ``(coef, exponents)`` pairs with
    ``sum(exponents) == p``.  The result maps a tuple ``(v_1, ..., v_p)`` of
    variable indices to the coefficient of ``u1[v_1] * ... * up[v_p]``.

    The mixed derivative d^p/dlam_1..dlam_p of ``prod_v (sum_i lam_i u_i[v])^e_v``
    picks, for each way of handing the arguments to the variables, the
    product of the matching coordinates, with multiplicity ``prod e_v!``.
    """
    out: dict = {}
    for coef, exps in monomials:
        exps = tuple(int(e) for e in exps)
        if sum(exps) != p:
            raise ValueError(f"monomial {exps} is not of degree {p}")
        slots = [v for v, e in enumerate(exps) for _ in range(e)]
        weight = Fraction(coef) * prod(factorial(e) for e in exps) / factorial(p)
        for assignment in set(itertools.permutations(slots)):
            out[assignment] = out.get(assignment, 0) + weight
    return {k: v for k, v in sorted(out.items()) if v != 0}


def power_sum_monomials(p: int, n_vars: int = 3):
    """Monomials of ``x^p + y^p + z^p``."""
    return [(1, tuple(p if v == c else 0 for v in range(n_vars))) for c in range(n_vars)]


def polarization_oracle(monomials, args) -> float:
    """Evaluate the polar form of ``monomials`` at the argument vectors."""
    args = [np.asarray(a, dtype=float) for a in args]
    coeffs = polar_coefficients(monomials, len(args))
    total = 0.0
    for key, coef in coeffs.items():
        term = float(coef)
        for arg, v in zip(args, key):
            term *= arg[v]
        total += term
    return total


def fd_gradient(eval_fn, W, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of the array ``W``."""
    if h <= 0:
        raise ValueError("h must be positive")
    w0 = np.array(W, dtype=float)
    grad = np.zeros_like(w0)
    flat = w0.reshape(-1)
    g = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = eval_fn(w0.copy())
        flat[idx] = orig - h
        fm = eval_fn(w0.copy())
        flat[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return grad


def cell_mass_centroid(rvd):
    """Mass and centroid of every restricted cell, integrated directly.

    Each tetrahedron contributes its signed volume with its vertex average as
    centroid; each surface triangle its area and vertex average.
    """
    k = len(rvd.seeds)
    mass = np.zeros(k)
    moment = np.zeros((k, 3))
    for cell in rvd.cells:
        if not len(cell.simplex_vertices):
            continue
        pts = cell.vertices[cell.simplex_vertices]
        if rvd.dim == 3:
            apex = cell.seed_position
            e = pts - apex
            vol = np.einsum("ni,ni->n", e[:, 0], np.cross(e[:, 1], e[:, 2])) / 6.0
            vol = np.abs(vol) * cell.orientation
            cen = (pts.sum(axis=1) + apex) / 4.0
        else:
            vol = np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1) / 2
            cen = pts.mean(axis=1)
        mass[cell.seed_index] += vol.sum()
        moment[cell.seed_index] += (vol[:, None] * cen).sum(axis=0)
    centroid = np.where(mass[:, None] > 0, moment / np.where(mass > 0, mass, 1.0)[:, None], np.nan)
    return mass, centroid


def cvt_gradient_oracle(rvd) -> np.ndarray:
    """``2 m_i (w_i - c_i)`` per seed (empty cells give zero)."""
    mass, centroid = cell_mass_centroid(rvd)
    w = np.asarray(rvd.seeds)
    g = 2.0 * mass[:, None] * (w - np.nan_to_num(centroid))
    g[mass == 0] = 0.0
    return g
