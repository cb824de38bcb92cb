"""Closed-form integration of ``||M (x - w)||_p^p`` over simplices.

With ``U_j = M (C_j - w)`` the integral over a tetrahedron ``(w, C1, C2, C3)``
is::

    |T| / binom(3 + p, p) * sum_{a+b+c=p} sum_xyz(U1^a * U2^b * U3^c)

where ``*`` and powers act componentwise.  Exponent tuples touching the
apex drop out because the apex maps to the origin.  Surface triangles
``(C1, C2, C3)`` use the same sum with ``binom(2 + p, p)`` and the area of
the transformed triangle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np

from .aniso_field import FrameMatrix
from .errors import OddP

P_MAX = 16
DEGENERATE_REL = 1e-14


def check_p(p) -> int:
    if isinstance(p, bool) or int(p) != p:
        raise OddP(f"p must be an even integer, got {p!r}")
    p = int(p)
    if p < 2 or p % 2:
        raise OddP(f"p must be an even integer >= 2, got {p}")
    if p > P_MAX:
        raise OddP(f"p = {p} exceeds the supported maximum {P_MAX}")
    return p


def star_product(a, b) -> np.ndarray:
    return np.asarray(a, dtype=float) * np.asarray(b, dtype=float)


def star_power(v, a: int) -> np.ndarray:
    """Componentwise power; ``a = 0`` gives ``(1, 1, 1)`` for any ``v``."""
    if a < 0:
        raise ValueError("star_power needs a non-negative exponent")
    v = np.asarray(v, dtype=float)
    out = np.ones_like(v)
    for _ in range(a):
        out = out * v
    return out


def component_sum(v) -> float:
    return float(np.sum(v))


def exponent_multisets(n_vertices: int, p: int) -> list:
    """All tuples of ``n_vertices`` non-negative ints summing to ``p``.

    Ordered lexicographically from the largest leading exponent down, e.g.
    ``(2,0,0), (1,1,0), (1,0,1), (0,2,0), (0,1,1), (0,0,2)``.
    """
    if n_vertices < 1 or p < 0:
        raise ValueError("need n_vertices >= 1 and p >= 0")
    return list(_multisets(n_vertices, p))


@lru_cache(maxsize=None)
def _multisets(n, p):
    if n == 1:
        return ((p,),)
    out = []
    for first in range(p, -1, -1):
        out.extend((first,) + rest for rest in _multisets(n - 1, p - first))
    return tuple(out)


@lru_cache(maxsize=None)
def exponent_array(n_vertices: int, p: int) -> np.ndarray:
    arr = np.array(_multisets(n_vertices, p), dtype=np.intp)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IntegrationSimplex:
    """One integration simplex of a restricted Voronoi cell.

    For ``dim == 3`` the simplex is the tetrahedron ``(apex, C1, C2, C3)``.
    For ``dim == 2`` it is the triangle ``(C1, C2, C3)``; the apex (owning
    seed) is only the centre of the integrand.  ``orientation`` is ``-1``
    for cones that must be subtracted (apex outside its own cell).
    """

    dim: int
    apex: np.ndarray
    vertices: np.ndarray
    frame: FrameMatrix = field(default_factory=FrameMatrix.identity)
    provenance: tuple = ()
    orientation: int = 1

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        apex = np.asarray(self.apex, dtype=float).reshape(3)
        verts = np.asarray(self.vertices, dtype=float).reshape(3, 3)
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "vertices", verts)
        if not isinstance(self.frame, FrameMatrix):
            object.__setattr__(self, "frame", FrameMatrix(self.frame))

    def transformed(self) -> np.ndarray:
        """Rows ``U_j = M (C_j - apex)``."""
        return (self.vertices - self.apex) @ self.frame.m.T

    def measure(self) -> float:
        """Unsigned volume (dim 3) or area (dim 2) of the transformed simplex."""
        return float(simplex_measure(self.transformed()[None], self.dim)[0])

    @property
    def degenerate(self) -> bool:
        return bool(degenerate_mask(self.transformed()[None], self.dim)[0])


def triple_product(u: np.ndarray) -> np.ndarray:
    """``U1 . (U2 x U3)`` for stacked ``(n, 3, 3)`` edge vectors."""
    return np.einsum("ni,ni->n", u[:, 0], np.cross(u[:, 1], u[:, 2]))


def triangle_normal(u: np.ndarray) -> np.ndarray:
    """``N = (U1 - U3) x (U2 - U3)`` for stacked triangles."""
    return np.cross(u[:, 0] - u[:, 2], u[:, 1] - u[:, 2])


def simplex_measure(u: np.ndarray, dim: int) -> np.ndarray:
    if dim == 3:
        return np.abs(triple_product(u)) / 6.0
    return np.linalg.norm(triangle_normal(u), axis=1) / 2.0


def _scale(u: np.ndarray, dim: int) -> np.ndarray:
    if dim == 3:
        pts = u
    else:
        pts = np.stack([u[:, 0] - u[:, 2], u[:, 1] - u[:, 2], u[:, 1] - u[:, 0]], axis=1)
    return np.abs(pts).max(axis=(1, 2))


def degenerate_mask(u: np.ndarray, dim: int) -> np.ndarray:
    """Simplices whose measure is below ``1e-14 * scale^dim``."""
    return simplex_measure(u, dim) <= DEGENERATE_REL * _scale(u, dim) ** dim


def power_table(u: np.ndarray, p: int) -> np.ndarray:
    """``table[n, j, a] = U_j^{*a}`` for ``a = 0..p``; shape ``(n, 3, p+1, 3)``."""
    table = np.empty(u.shape[:2] + (p + 1, 3))
    table[:, :, 0] = 1.0
    for a in range(1, p + 1):
        table[:, :, a] = table[:, :, a - 1] * u
    return table


def energy_sum(u: np.ndarray, p: int, table=None) -> np.ndarray:
    """``E = sum over a+b+c=p of sum_xyz(U1^a * U2^b * U3^c)``, batched."""
    if table is None:
        table = power_table(u, p)
    ex = exponent_array(3, p)
    prod = table[:, 0, ex[:, 0]] * table[:, 1, ex[:, 1]] * table[:, 2, ex[:, 2]]
    return prod.sum(axis=(1, 2))


def batch_energy(u: np.ndarray, p: int, dim: int, orientation=None, signed: bool = False) -> np.ndarray:
    """Energy of stacked transformed simplices ``u`` of shape ``(n, 3, 3)``.

    ``signed=True`` (3D only) uses the signed volume of the stored vertex
    order instead of zeroing degenerate simplices.
    """
    p = check_p(p)
    u = np.asarray(u, dtype=float)
    e = energy_sum(u, p)
    if signed and dim == 3:
        out = triple_product(u) / 6.0 * e / comb(dim + p, p)
    else:
        out = simplex_measure(u, dim) * e / comb(dim + p, p)
        out[degenerate_mask(u, dim)] = 0.0
    if orientation is not None:
        out = out * orientation
    return out


def simplex_energy(s: IntegrationSimplex, p: int) -> float:
    """Exact ``integral over s of ||M (x - apex)||_p^p`` (``p`` even).

    Degenerate simplices contribute exactly zero.  The value is multiplied
    by ``s.orientation``.
    """
    p = check_p(p)
    return float(batch_energy(s.transformed()[None], p, s.dim, np.array([s.orientation]))[0])


def polar_form(args) -> float:
    """Symmetric p-linear form of ``u -> sum_xyz(u^{*p})``:
    ``H(u1, ..., up) = sum_xyz(u1 * u2 * ... * up)``."""
    args = [np.asarray(a, dtype=float) for a in args]
    if not args:
        raise ValueError("polar_form needs at least one argument")
    prod = args[0]
    for a in args[1:]:
        prod = prod * a
    return float(prod.sum())


def simplex_volume(vertices) -> float:
    """n-dimensional measure of the simplex spanned by ``n + 1`` points."""
    v = np.asarray(vertices, dtype=float)
    edges = v[1:] - v[0]
    n = len(edges)
    gram = edges @ edges.T
    return float(np.sqrt(max(np.linalg.det(gram), 0.0)) / factorial(n))


def lasserre_integrate(vertices, p: int, H=polar_form, with_flag: bool = False):
    """Integrate ``H(x, ..., x)`` over the simplex with the given vertices.

    Uses the multiset rule: ``Vol / binom(n+p, p)`` times the sum of ``H``
    over every p-multiset of vertices.  Degenerate simplices give 0; with
    ``with_flag=True`` the result is ``(value, degenerate)``.
    """
    p = check_p(p)
    v = np.asarray(vertices, dtype=float)
    n = len(v) - 1
    vol = simplex_volume(v)
    edges = v[1:] - v[0]
    scale = np.abs(edges).max() if edges.size else 0.0
    if vol <= DEGENERATE_REL * scale**n:
        return (0.0, True) if with_flag else 0.0
    total = 0.0
    for alphas in exponent_multisets(n + 1, p):
        args = list(itertools.chain.from_iterable([v[i]] * a for i, a in enumerate(alphas)))
        total += H(args)
    value = vol * total / comb(n + p, p)
    return (value, False) if with_flag else value
