"""Global Lp-CVT energy, its gradient, and a quasi-Newton minimizer."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .aniso_field import TensorField
from .errors import LpcvtError, NearDegenerate, NonFiniteEnergy, NumericalError, SeedOutsideDomain
from .gradient import batch_grad_U
from .quadrature import batch_energy, check_p
from .rvd import Domain, RestrictedVoronoiDiagram, SeedSet, build_rvd

logger = logging.getLogger(__name__)


@dataclass
class GradientAccumulator:
    """Dense ``(k, 3)`` gradient, reduced in a fixed (cell, simplex) order."""

    g: np.ndarray
    deterministic: bool = True

    @classmethod
    def zeros(cls, k: int, deterministic: bool = True):
        return cls(np.zeros((k, 3)), deterministic)

    def add(self, rows, values):
        np.add.at(self.g, rows, values)

    @property
    def inf_norm(self) -> float:
        return float(np.abs(self.g).max()) if self.g.size else 0.0


@dataclass
class Evaluation:
    energy: float
    grad: GradientAccumulator
    rvd: RestrictedVoronoiDiagram

    def __iter__(self):
        # allows ``F, grad = evaluate(...)``
        yield self.energy
        yield self.grad


def energy_and_gradient(rvd: RestrictedVoronoiDiagram, p: int, with_grad: bool = True):
    """Energy of a built diagram and (optionally) its gradient w.r.t. seeds.

    Per simplex, ``dF/dw_i`` goes straight to the owning seed.  ``dF/dC``
    is summed per cell vertex and pushed through the vertex Jacobian: with
    ``c = A^{-T} g`` each bisector row ``r`` against seed ``j`` adds
    ``c_r (w_j - x)`` to seed ``j`` and ``c_r (x - w_i)`` to the owner.
    """
    p = check_p(p)
    arr = rvd.arrays
    W = rvd.seeds
    k = len(W)
    acc = GradientAccumulator.zeros(k)
    sv = arr["simplex_vertices"]
    if len(sv) == 0:
        return 0.0, acc
    owner = arr["simplex_owner"]
    frames = arr["frames"]
    pts = arr["vertices"][sv]
    apex = W[owner]
    u = np.einsum("nij,nkj->nki", frames, pts - apex[:, None, :])
    energies = batch_energy(u, p, rvd.dim, arr["orientation"], signed=True)
    energy = float(energies.sum())
    if not math.isfinite(energy):
        raise NonFiniteEnergy("energy evaluated to a non-finite value")
    if not with_grad:
        return energy, acc
    gu = batch_grad_U(u, p, rvd.dim, arr["orientation"], signed=True)
    d_vert = np.einsum("nki,nij->nkj", gu, frames)
    acc.add(owner, -d_vert.sum(axis=1))

    nv = len(arr["vertices"])
    gv = np.zeros((nv, 3))
    np.add.at(gv, sv.reshape(-1), d_vert.reshape(-1, 3))
    others = arr["others"]
    moving = (others >= 0).any(axis=1) & (np.abs(gv).sum(axis=1) > 0)
    if not moving.any():
        return energy, acc
    bad = moving & ~arr["ok"]
    if bad.any():
        raise NearDegenerate(f"{int(bad.sum())} Voronoi vertices have singular plane systems")
    idx = np.flatnonzero(moving)
    a = arr["A"][idx]
    x = arr["vertices"][idx]
    c = np.linalg.solve(np.swapaxes(a, 1, 2), gv[idx][..., None])[..., 0]
    vowner = arr["vertex_owner"][idx]
    oth = others[idx]
    wi = W[vowner]
    for r in range(3):
        j = oth[:, r]
        m = j >= 0
        if not m.any():
            continue
        cr = c[m, r][:, None]
        acc.add(j[m], cr * (W[j[m]] - x[m]))
        acc.add(vowner[m], cr * (x[m] - wi[m]))
    if not np.all(np.isfinite(acc.g)):
        raise NonFiniteEnergy("gradient has non-finite entries")
    return energy, acc


def evaluate(W, domain: Domain, field: Optional[TensorField], p: int, workers: int = 1) -> Evaluation:
    """Build the restricted Voronoi diagram and return ``F`` and ``dF/dW``."""
    p = check_p(p)
    rvd = build_rvd(W, domain, field, workers=workers)
    energy, acc = energy_and_gradient(rvd, p)
    return Evaluation(energy, acc, rvd)


def energy_only(W, domain: Domain, field: Optional[TensorField], p: int) -> float:
    rvd = build_rvd(W, domain, field)
    return energy_and_gradient(rvd, p, with_grad=False)[0]


@dataclass
class OptimizerConfig:
    p: int = 2
    max_iters: int = 200
    grad_tol: float = 1e-9
    method: str = "lbfgs"
    lbfgs_memory: int = 7
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    rng_seed: int = 0
    deterministic: bool = True
    workers: int = 1

    def __post_init__(self):
        check_p(self.p)
        if self.method == "sd":
            self.method = "steepest"
        if self.method not in ("lbfgs", "steepest"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.grad_tol <= 0 or self.max_iters < 0:
            raise ValueError("grad_tol must be > 0 and max_iters >= 0")
        if not (0 < self.c1 < 1 and 0 < self.backtrack < 1):
            raise ValueError("Armijo parameters must lie in (0, 1)")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")


@dataclass
class TraceRow:
    iter: int
    F: float
    grad_inf_norm: float
    step_size: float


@dataclass
class OptimizeResult:
    seeds: np.ndarray
    trace: list
    status: str
    energy: float
    grad: np.ndarray
    orphaned: list = field(default_factory=list)
    rejections: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _lbfgs_direction(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def optimize(W0, domain: Domain, field: Optional[TensorField], cfg: OptimizerConfig) -> OptimizeResult:
    """Minimize the energy over seed positions.

    L-BFGS (or steepest descent) with Armijo backtracking; every accepted
    step satisfies ``F_new <= F + c1 * t * (g . d)``.  Stops when
    ``||grad||_inf <= grad_tol``, after ``max_iters`` iterations, or when the
    line search fails.  The trace has one row per iteration, starting with
    iteration 0 at the initial point (step size 0).
    """
    x = np.array(W0, dtype=float).reshape(-1, 3)
    k = len(x)

    def fg(flat):
        # trial points may leave the domain; their cells just shrink
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SeedOutsideDomain)
            ev = evaluate(flat.reshape(k, 3), domain, field, cfg.p, cfg.workers)
        for w in caught:
            if issubclass(w.category, SeedOutsideDomain):
                logger.debug("%s", w.message)
            else:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        return ev.energy, ev.grad.g.reshape(-1), ev.rvd

    f, g, rvd = fg(x.reshape(-1))
    trace = [TraceRow(0, f, float(np.abs(g).max()), 0.0)]
    s_hist, y_hist = [], []
    status = "max_iters"
    rejections = 0
    xf = x.reshape(-1).copy()
    step0 = 1.0
    for it in range(1, cfg.max_iters + 1):
        if np.abs(g).max() <= cfg.grad_tol:
            status = "converged"
            break
        if cfg.method == "lbfgs" and s_hist:
            d = _lbfgs_direction(g, s_hist, y_hist)
        else:
            d = -g
        slope = float(g @ d)
        if slope >= 0:
            # not a descent direction; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = float(g @ d)
        if cfg.method == "lbfgs" and s_hist:
            t = 1.0
        else:
            # first step / steepest descent: scale to a modest displacement
            t = step0 if cfg.method == "steepest" else min(1.0, 0.1 * domain.scale / max(np.abs(d).max(), 1e-300))
        accepted = False
        for _ in range(cfg.max_backtracks):
            xn = xf + t * d
            try:
                fn, gn, rvdn = fg(xn)
            except (NumericalError, LpcvtError) as exc:
                logger.debug("rejected step t=%g: %s", t, exc)
                rejections += 1
                t *= cfg.backtrack
                continue
            if fn <= f + cfg.c1 * t * slope:
                accepted = True
                break
            rejections += 1
            t *= cfg.backtrack
        if not accepted:
            status = "line_search_failed"
            logger.warning("line search failed at iteration %d", it)
            break
        s = xn - xf
        y = gn - g
        if s @ y > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > cfg.lbfgs_memory:
                s_hist.pop(0)
                y_hist.pop(0)
        if cfg.method == "steepest":
            step0 = min(t / cfg.backtrack, 1e6)
        xf, f, g, rvd = xn, fn, gn, rvdn
        trace.append(TraceRow(it, f, float(np.abs(g).max()), t))
    else:
        if np.abs(g).max() <= cfg.grad_tol:
            status = "converged"
    return OptimizeResult(
        xf.reshape(k, 3), trace, status, f, g.reshape(k, 3), rvd.empty_cells, rejections
    )


def random_seeds(domain: Domain, k: int, rng_seed: int = 0) -> np.ndarray:
    """``k`` points drawn uniformly inside the domain (rejection sampling in
    volume mode, area-weighted triangle sampling in surface mode)."""
    rng = np.random.default_rng(rng_seed)
    if domain.kind == "volume":
        lo, hi = domain.bounds
        out = []
        while len(out) < k:
            cand = lo + (hi - lo) * rng.random((max(2 * (k - len(out)), 16), 3))
            inside = np.all(cand @ domain.halfspaces[:, :3].T <= domain.halfspaces[:, 3], axis=1)
            out.extend(cand[inside][: k - len(out)])
        return np.array(out)
    v, t = domain.mesh_vertices, domain.triangles
    p = v[t]
    area = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    tri = rng.choice(len(t), size=k, p=area / area.sum())
    r = np.sort(rng.random((k, 2)), axis=1)
    lam = np.column_stack([r[:, 0], r[:, 1] - r[:, 0], 1 - r[:, 1]])
    return np.einsum("nk,nkj->nj", lam, p[tri])
