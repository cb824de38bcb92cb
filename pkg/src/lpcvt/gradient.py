"""Closed-form derivatives of the simplex energy.

``F = |T| E / binom(n+p, p)`` so ``dF = (E d|T| + |T| dE) / binom(n+p, p)``.
Derivatives with respect to the untransformed vertices follow from
``U_j = M (C_j - w)``: ``dF/dC_j = dF/dU_j M`` and ``dF/dw = -sum_j dF/dC_j``.
The frame ``M`` is treated as constant over the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DegenerateTriangle
from .quadrature import (
    DEGENERATE_REL,
    IntegrationSimplex,
    check_p,
    degenerate_mask,
    energy_sum,
    exponent_array,
    power_table,
    triangle_normal,
    triple_product,
)


@dataclass(frozen=True, eq=False)
class SimplexVertexGradient:
    d_apex: np.ndarray
    d_vertices: np.ndarray


def _grad_energy_sum(table: np.ndarray, p: int) -> np.ndarray:
    ex = exponent_array(3, p)
    out = np.zeros(table.shape[:2] + (3,))
    for j in range(3):
        rows = ex[ex[:, j] >= 1]
        f = [table[:, l, rows[:, l]] for l in range(3)]
        f[j] = rows[:, j, None].astype(float) * table[:, j, rows[:, j] - 1]
        out[:, j] = (f[0] * f[1] * f[2]).sum(axis=1)
    return out


def grad_E_dU(U, p: int) -> np.ndarray:
    """Rows ``dE/dU_1, dE/dU_2, dE/dU_3`` of the exponent sum ``E``."""
    p = check_p(p)
    u = np.asarray(U, dtype=float).reshape(1, 3, 3)
    return _grad_energy_sum(power_table(u, p), p)[0]


def batch_grad_volume(u: np.ndarray) -> np.ndarray:
    """Gradient of the signed volume ``U1.(U2 x U3)/6``."""
    return np.stack(
        [np.cross(u[:, 1], u[:, 2]), np.cross(u[:, 2], u[:, 0]), np.cross(u[:, 0], u[:, 1])],
        axis=1,
    ) / 6.0


def grad_volume_dU(U) -> np.ndarray:
    """``(1/6) [U2 x U3, U3 x U1, U1 x U2]`` for a tetrahedron at the origin."""
    return batch_grad_volume(np.asarray(U, dtype=float).reshape(1, 3, 3))[0]


def batch_grad_area(u: np.ndarray) -> np.ndarray:
    n = triangle_normal(u)
    area = np.linalg.norm(n, axis=1) / 2.0
    safe = np.where(area > 0, area, 1.0)
    g = np.stack(
        [
            np.cross(n, u[:, 1] - u[:, 2]),
            np.cross(n, u[:, 2] - u[:, 0]),
            np.cross(n, u[:, 0] - u[:, 1]),
        ],
        axis=1,
    )
    return -g / (4.0 * safe)[:, None, None]


def grad_area_dU(U) -> np.ndarray:
    """``-1/(4|T|) [N x (U2-U3), N x (U3-U1), N x (U1-U2)]``."""
    u = np.asarray(U, dtype=float).reshape(1, 3, 3)
    n = triangle_normal(u)[0]
    scale = np.abs(u - u[:, :1]).max()
    if np.linalg.norm(n) <= DEGENERATE_REL * scale**2:
        raise DegenerateTriangle("triangle has (numerically) zero area")
    return batch_grad_area(u)[0]


def batch_grad_U(u: np.ndarray, p: int, dim: int, orientation=None, signed: bool = False) -> np.ndarray:
    """``dF/dU`` for stacked transformed simplices, shape ``(n, 3, 3)``.

    In 3D the unsigned volume is differentiated, i.e. the signed-volume
    gradient times the sign of the triple product, and degenerate simplices
    get a zero gradient.  With ``signed=True`` (3D only) the measure is the
    signed volume ``U1.(U2 x U3)/6`` of the stored vertex order, which stays
    differentiable through zero; cone decompositions of a cell rely on this
    when the seed sits on a facet plane.
    """
    p = check_p(p)
    table = power_table(u, p)
    e = energy_sum(u, p, table)
    de = _grad_energy_sum(table, p)
    if dim == 3:
        tp = triple_product(u)
        dmeasure = batch_grad_volume(u)
        if signed:
            measure = tp / 6.0
        else:
            sign = np.where(tp < 0, -1.0, 1.0)
            measure = np.abs(tp) / 6.0
            dmeasure = dmeasure * sign[:, None, None]
    else:
        measure = np.linalg.norm(triangle_normal(u), axis=1) / 2.0
        dmeasure = batch_grad_area(u)
    g = (e[:, None, None] * dmeasure + measure[:, None, None] * de) / comb(dim + p, p)
    if not (signed and dim == 3):
        g[degenerate_mask(u, dim)] = 0.0
    if orientation is not None:
        g = g * np.asarray(orientation, dtype=float)[:, None, None]
    return g


def grad_FT_vertices(s: IntegrationSimplex, p: int) -> SimplexVertexGradient:
    """Derivatives of ``simplex_energy(s, p)`` w.r.t. the apex and vertices."""
    p = check_p(p)
    m = s.frame.m
    gu = batch_grad_U(s.transformed()[None], p, s.dim, np.array([s.orientation]))[0]
    d_vertices = gu @ m
    return SimplexVertexGradient(-d_vertices.sum(axis=0), d_vertices)
