"""Restricted Voronoi diagrams, Voronoi vertices and their seed Jacobians.

Cells are built by clipping the domain against bisector half-spaces.  Every
vertex carries the set of *plane labels* that define it:

``('b', j)``
    bisector between the cell's seed and seed ``j``
``('h', k)``
    ``k``-th half-space of a volume domain
``('t', t)`` / ``('e', t, l)``
    supporting plane of mesh triangle ``t`` / plane through its ``l``-th
    edge, perpendicular to the triangle
``('box', k)``
    temporary bounding box planes used while building a volume domain

A vertex with three labels is the solution of ``A x = B`` where bisector
rows are ``(w_j - w_i)^T x = (|w_j|^2 - |w_i|^2) / 2`` and fixed planes have
constant rows.  Differentiating gives ``dx = A^{-1} (dB - dA x)``.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .aniso_field import FrameMatrix, TensorField
from .errors import InputError, NearDegenerate, SeedOutsideDomain, UnboundedPolytope
from .quadrature import IntegrationSimplex

EPS_PLANE = 1e-12
EPS_GEO = 1e-12
COND_EPS = 1e-12


def _label_key(label):
    return tuple(sorted(label))


# --------------------------------------------------------------------------
# seeds and domains
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SeedSet:
    """Generator points, shape ``(k, 3)``; must be pairwise distinct."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if len(pts) < 1:
            raise InputError("need at least one seed")
        if not np.all(np.isfinite(pts)):
            raise InputError("seed coordinates must be finite")
        if len(pts) > 1:
            from scipy.spatial import cKDTree

            scale = max(float(np.ptp(pts, axis=0).max()), 1e-300)
            dist, _ = cKDTree(pts).query(pts, k=2)
            if dist[:, 1].min() <= 1e-12 * scale:
                raise InputError("seeds must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)


def _as_points(W) -> np.ndarray:
    if isinstance(W, SeedSet):
        return W.points
    return np.asarray(W, dtype=float).reshape(-1, 3)


def nearest_seed(W, x) -> int:
    """Index of the seed nearest to ``x``; ties go to the lowest index."""
    pts = _as_points(W)
    d2 = ((pts - np.asarray(x, dtype=float)) ** 2).sum(axis=1)
    return int(np.argmin(d2))


class ConvexPolytope:
    """Convex polyhedron as labelled vertices plus outward-oriented facets.

    ``facets`` is a list of ``(plane_label, [vertex indices])`` with the
    vertices counter-clockwise when seen from outside.
    """

    __slots__ = ("verts", "labels", "facets")

    def __init__(self, verts, labels, facets):
        self.verts = np.asarray(verts, dtype=float)
        self.labels = list(labels)
        self.facets = list(facets)

    @classmethod
    def box(cls, lo, hi, label_prefix="box"):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        verts = np.array(
            [[(hi if (v >> a) & 1 else lo)[a] for a in range(3)] for v in range(8)]
        )
        # planes: 0:-x 1:+x 2:-y 3:+y 4:-z 5:+z
        planes = [(label_prefix, k) for k in range(6)]
        labels = []
        for v in range(8):
            bits = [(v >> a) & 1 for a in range(3)]
            labels.append(frozenset(planes[2 * a + bits[a]] for a in range(3)))
        facets = [
            (planes[0], [0, 4, 6, 2]),
            (planes[1], [1, 3, 7, 5]),
            (planes[2], [0, 1, 5, 4]),
            (planes[3], [2, 6, 7, 3]),
            (planes[4], [0, 2, 3, 1]),
            (planes[5], [4, 5, 7, 6]),
        ]
        return cls(verts, labels, facets)

    def clip(self, label, normal, offset, eps):
        """Keep ``normal . x <= offset``; return ``None`` if nothing remains.

        ``normal`` must be a unit vector; vertices within ``eps`` of the
        plane are treated as lying on it.
        """
        verts = self.verts
        s = (verts @ normal - offset).tolist()
        if max(s) <= eps:
            return self
        if min(s) >= -eps:
            return None
        # per-vertex state: 1 outside, -1 strictly inside, 0 on the plane
        state = [1 if x > eps else (-1 if x < -eps else 0) for x in s]
        pos = verts.tolist()
        remap = {}
        new_pos = []
        new_lab = []
        cap = []
        for v, st in enumerate(state):
            if st == 1:
                continue
            remap[v] = len(new_pos)
            new_pos.append(pos[v])
            lab = self.labels[v]
            if st == 0:
                lab = lab | {label}
                cap.append(remap[v])
            new_lab.append(lab)
        cache = {}
        facets = []
        for flabel, idx in self.facets:
            poly = []
            m = len(idx)
            for t in range(m):
                a = idx[t]
                b = idx[t + 1 if t + 1 < m else 0]
                sa, sb = state[a], state[b]
                if sa != 1:
                    poly.append(remap[a])
                if sa * sb == -1:
                    key = (a, b) if a < b else (b, a)
                    ni = cache.get(key)
                    if ni is None:
                        tt = s[a] / (s[a] - s[b])
                        pa, pb = pos[a], pos[b]
                        ni = len(new_pos)
                        new_pos.append([pa[0] + tt * (pb[0] - pa[0]), pa[1] + tt * (pb[1] - pa[1]), pa[2] + tt * (pb[2] - pa[2])])
                        new_lab.append((self.labels[a] & self.labels[b]) | {label})
                        cache[key] = ni
                        cap.append(ni)
                    poly.append(ni)
            if len(poly) >= 3:
                facets.append((flabel, poly))
        new_pos = np.array(new_pos)
        if len(cap) >= 3:
            facets.append((label, _order_ccw(new_pos, cap, normal)))
        return ConvexPolytope(new_pos, new_lab, facets)

    def volume(self) -> float:
        """Volume from facet fans and the origin (divergence theorem)."""
        total = 0.0
        for _, idx in self.facets:
            p = self.verts[idx]
            for k in range(1, len(idx) - 1):
                total += np.dot(p[0], np.cross(p[k], p[k + 1]))
        return total / 6.0

    def max_distance(self, x) -> float:
        return float(np.sqrt(((self.verts - x) ** 2).sum(axis=1).max()))


def _order_ccw(pos, idx, normal):
    d = pos[idx]
    d = d - d.mean(axis=0)
    e1 = d[np.argmax(np.einsum("ij,ij->i", d, d))]
    e1 = e1 - normal * (e1 @ normal)
    e1 = e1 / np.sqrt(e1 @ e1)
    n = normal
    e2 = np.array([n[1] * e1[2] - n[2] * e1[1], n[2] * e1[0] - n[0] * e1[2], n[0] * e1[1] - n[1] * e1[0]])
    ang = np.arctan2(d @ e2, d @ e1)
    return [idx[k] for k in np.argsort(ang, kind="stable")]


def _clip_polygon(pos, labels, label, normal, offset, eps):
    """Sutherland-Hodgman clip of a planar polygon against ``n.x <= d``."""
    s = pos @ normal - offset
    out = s > eps
    if not out.any():
        return pos, labels
    inside = s < -eps
    if not inside.any():
        return None
    new_pos = []
    new_lab = []
    m = len(pos)
    for a in range(m):
        b = a + 1 if a + 1 < m else 0
        if not out[a]:
            new_pos.append(pos[a])
            new_lab.append(labels[a] if inside[a] else labels[a] | {label})
        if (inside[a] and out[b]) or (out[a] and inside[b]):
            tt = s[a] / (s[a] - s[b])
            new_pos.append(pos[a] + tt * (pos[b] - pos[a]))
            new_lab.append((labels[a] & labels[b]) | {label})
    if len(new_pos) < 3:
        return None
    return np.array(new_pos), new_lab


@dataclass(eq=False)
class Domain:
    """Integration domain: a bounded convex polytope or a triangle mesh.

    Volume domains are given as half-spaces ``n . x <= d`` (rows
    ``(nx, ny, nz, d)``; normals are normalized on construction).  Surface
    domains are a shared vertex array and a triangle index array.
    """

    kind: str
    halfspaces: Optional[np.ndarray] = None
    mesh_vertices: Optional[np.ndarray] = None
    triangles: Optional[np.ndarray] = None
    polytope: Optional[ConvexPolytope] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "volume":
            hs = np.asarray(self.halfspaces, dtype=float).reshape(-1, 4)
            norms = np.linalg.norm(hs[:, :3], axis=1)
            if np.any(norms == 0):
                raise InputError("half-space with a zero normal")
            self.halfspaces = hs / norms[:, None]
            if self.polytope is None:
                self.polytope = _polytope_from_halfspaces(self.halfspaces)
        elif self.kind == "surface":
            v = np.asarray(self.mesh_vertices, dtype=float).reshape(-1, 3)
            t = np.asarray(self.triangles, dtype=np.intp).reshape(-1, 3)
            if len(t) == 0:
                raise InputError("surface mesh has no triangles")
            if t.min() < 0 or t.max() >= len(v):
                raise InputError("triangle references a missing vertex")
            self.mesh_vertices = v
            self.triangles = t
            n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
            scale = self.scale
            if np.any(np.linalg.norm(n, axis=1) <= 1e-14 * scale**2):
                raise InputError("surface mesh contains a degenerate triangle")
        else:
            raise InputError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def from_halfspaces(cls, halfspaces) -> "Domain":
        return cls("volume", halfspaces=halfspaces)

    @classmethod
    def box(cls, lo=(0, 0, 0), hi=(1, 1, 1)) -> "Domain":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        hs = []
        for a in range(3):
            n = np.zeros(3)
            n[a] = -1.0
            hs.append([*n, -lo[a]])
            n = np.zeros(3)
            n[a] = 1.0
            hs.append([*n, hi[a]])
        return cls.from_halfspaces(hs)

    @classmethod
    def from_mesh(cls, vertices, triangles) -> "Domain":
        return cls("surface", mesh_vertices=vertices, triangles=triangles)

    @property
    def dim(self) -> int:
        return 3 if self.kind == "volume" else 2

    @cached_property
    def bounds(self):
        pts = self.polytope.verts if self.kind == "volume" else self.mesh_vertices
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def scale(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def measure(self) -> float:
        """Volume of the polytope or total area of the mesh."""
        if self.kind == "volume":
            return self.polytope.volume()
        v, t = self.mesh_vertices, self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return float(np.linalg.norm(n, axis=1).sum() / 2.0)

    def contains(self, x, tol=0.0) -> bool:
        if self.kind != "volume":
            raise InputError("containment is only defined for volume domains")
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.halfspaces[:, :3] @ x - self.halfspaces[:, 3] <= tol))

    def scaled(self, s: float) -> "Domain":
        if self.kind == "volume":
            hs = self.halfspaces.copy()
            hs[:, 3] *= s
            return Domain.from_halfspaces(hs)
        return Domain.from_mesh(self.mesh_vertices * s, self.triangles)

    @cached_property
    def _mesh_planes(self):
        v, t = self.mesh_vertices, self.triangles
        p = v[t]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        n /= np.linalg.norm(n, axis=1)[:, None]
        edge_n = np.empty((len(t), 3, 3))
        for l in range(3):
            e = p[:, (l + 1) % 3] - p[:, l]
            en = np.cross(n, e)
            edge_n[:, l] = en / np.linalg.norm(en, axis=1)[:, None]
        return n, edge_n

    @cached_property
    def _plane_cache(self) -> dict:
        return {}

    def fixed_plane(self, label):
        """``(normal, offset)`` of a fixed (seed-independent) plane label."""
        hit = self._plane_cache.get(label)
        if hit is None:
            hit = self._plane_cache[label] = self._fixed_plane(label)
        return hit

    def _fixed_plane(self, label):
        kind = label[0]
        if kind == "h":
            row = self.halfspaces[label[1]]
            return row[:3], row[3]
        if kind == "t":
            n, _ = self._mesh_planes
            tri = label[1]
            return n[tri], float(n[tri] @ self.mesh_vertices[self.triangles[tri, 0]])
        if kind == "e":
            _, en = self._mesh_planes
            tri, l = label[1], label[2]
            normal = en[tri, l]
            return normal, float(normal @ self.mesh_vertices[self.triangles[tri, l]])
        raise KeyError(f"{label!r} is not a fixed plane")


def _polytope_from_halfspaces(hs: np.ndarray) -> ConvexPolytope:
    from scipy.optimize import linprog

    a, b = hs[:, :3], hs[:, 3]
    lo = np.empty(3)
    hi = np.empty(3)
    for axis in range(3):
        for sign in (1.0, -1.0):
            c = np.zeros(3)
            c[axis] = sign
            res = linprog(c, A_ub=a, b_ub=b, bounds=[(None, None)] * 3, method="highs")
            if res.status == 2:
                raise InputError("the half-spaces have an empty intersection")
            if res.status == 3:
                raise UnboundedPolytope("the half-spaces do not bound a finite polytope")
            if res.status != 0:
                raise InputError(f"could not bound the polytope: {res.message}")
            if sign > 0:
                lo[axis] = res.x[axis]
            else:
                hi[axis] = res.x[axis]
    span = float(np.linalg.norm(hi - lo))
    if span <= 0:
        raise InputError("the half-spaces enclose no volume")
    pad = 0.1 * span + 1e-9
    poly = ConvexPolytope.box(lo - pad, hi + pad)
    box_planes = [np.eye(3)[a] * s for a in range(3) for s in (-1.0, 1.0)]
    box_offsets = [(-(lo[a] - pad) if s < 0 else hi[a] + pad) for a in range(3) for s in (-1.0, 1.0)]
    eps = EPS_PLANE * span
    for k, row in enumerate(hs):
        poly = poly.clip(("h", k), row[:3], row[3], eps)
        if poly is None:
            raise InputError("the half-spaces enclose no volume")
    if any(lab[0] == "box" for vl in poly.labels for lab in vl):
        raise UnboundedPolytope("the half-spaces do not bound a finite polytope")

    def plane(label):
        if label[0] == "h":
            return hs[label[1], :3], hs[label[1], 3]
        return box_planes[label[1]], box_offsets[label[1]]

    verts = poly.verts.copy()
    for v, lab in enumerate(poly.labels):
        sys = _best_system(sorted(lab), plane)
        if sys is not None:
            verts[v] = np.linalg.solve(sys[1], sys[2])
    return ConvexPolytope(verts, poly.labels, poly.facets)


def _best_system(labels, plane):
    """Best-conditioned choice of three labels of a vertex.

    Returns ``(chosen_labels, A, B)`` or ``None`` if every triple is singular.
    """
    rows = [plane(l) for l in labels]
    if len(rows) < 3:
        return None
    best = None
    best_det = 0.0
    for combo in itertools.combinations(range(len(rows)), 3):
        a = np.array([rows[c][0] for c in combo], dtype=float)
        nrm = a / np.linalg.norm(a, axis=1)[:, None]
        det = abs(np.linalg.det(nrm))
        if det > best_det:
            best_det = det
            best = ([labels[c] for c in combo], a, np.array([rows[c][1] for c in combo]))
    if best_det <= COND_EPS:
        return None
    return best


# --------------------------------------------------------------------------
# Voronoi vertices and Jacobians
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CircumcenterSystem:
    """``A C = B`` with rows ``(w_j - w_i)^T`` and ``(|w_j|^2 - |w_i|^2)/2``."""

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_points(cls, wi, wj, wk, wl):
        wi, wj, wk, wl = (np.asarray(w, dtype=float) for w in (wi, wj, wk, wl))
        a = np.array([wj - wi, wk - wi, wl - wi])
        b = 0.5 * np.array([wj @ wj - wi @ wi, wk @ wk - wi @ wi, wl @ wl - wi @ wi])
        return cls(a, b)

    def check(self):
        scale = float(np.abs(self.a).max())
        if abs(np.linalg.det(self.a)) <= EPS_GEO * scale**3:
            raise NearDegenerate("the four generators are (nearly) coplanar")

    def solve(self) -> np.ndarray:
        self.check()
        return np.linalg.solve(self.a, self.b)


def circumcenter(wi, wj, wk, wl) -> np.ndarray:
    """Voronoi vertex shared by four generators (``C = A^{-1} B``)."""
    return CircumcenterSystem.from_points(wi, wj, wk, wl).solve()


def circumcenter_jacobian(wi, wj, wk, wl):
    """Blocks ``dC/dw_i, dC/dw_j, dC/dw_k, dC/dw_l`` (each 3x3)."""
    sys = CircumcenterSystem.from_points(wi, wj, wk, wl)
    c = sys.solve()
    ainv = np.linalg.inv(sys.a)
    wi = np.asarray(wi, dtype=float)
    others = [np.asarray(w, dtype=float) for w in (wj, wk, wl)]
    d_i = ainv @ np.tile(c - wi, (3, 1))
    blocks = [d_i]
    for r, w in enumerate(others):
        rhs = np.zeros((3, 3))
        rhs[r] = w - c
        blocks.append(ainv @ rhs)
    return blocks


@dataclass(frozen=True)
class VertexProvenance:
    """Combinatorial origin of a cell vertex.

    ``seeds`` lists the *other* seeds whose bisectors with ``owner`` define
    the vertex; ``planes`` lists the fixed plane labels used.
    """

    kind: str
    owner: int
    seeds: tuple = ()
    planes: tuple = ()
    degenerate: bool = False

    @classmethod
    def from_labels(cls, owner, labels, degenerate=False):
        seeds = tuple(l[1] for l in labels if l[0] == "b")
        planes = tuple(l for l in labels if l[0] != "b")
        nb = len(seeds)
        surface = any(l[0] in ("t", "e") for l in planes)
        if nb == 0:
            kind = "fixed-domain-vertex"
        elif nb >= 3:
            kind = "three-bisectors"
        elif nb == 2:
            kind = "two-bisectors-one-plane"
        elif surface:
            kind = "one-bisector-mesh-edge"
        else:
            kind = "one-bisector-two-planes"
        return cls(kind, owner, seeds, planes, degenerate)

    @classmethod
    def apex(cls, owner):
        return cls("seed-apex", owner)


def _vertex_system(prov: VertexProvenance, W: np.ndarray, domain: Domain):
    wi = W[prov.owner]
    rows, rhs, others = [], [], []
    for j in prov.seeds:
        wj = W[j]
        rows.append(wj - wi)
        rhs.append(0.5 * (wj @ wj - wi @ wi))
        others.append(j)
    for lab in prov.planes:
        n, d = domain.fixed_plane(lab)
        rows.append(np.asarray(n, dtype=float))
        rhs.append(float(d))
        others.append(-1)
    a = np.array(rows)
    if a.shape != (3, 3):
        raise NearDegenerate(f"vertex is defined by {len(rows)} planes, expected 3")
    nrm = a / np.linalg.norm(a, axis=1)[:, None]
    if abs(np.linalg.det(nrm)) <= COND_EPS:
        raise NearDegenerate("vertex planes are (nearly) parallel")
    return a, np.array(rhs), others


def constrained_vertex_jacobian(prov: VertexProvenance, W, domain: Domain) -> dict:
    """Map seed index -> ``dx/dw_seed`` (3x3) for a cell vertex ``x``."""
    if prov.kind == "seed-apex":
        return {prov.owner: np.eye(3)}
    if prov.kind == "fixed-domain-vertex":
        return {}
    W = _as_points(W)
    a, b, others = _vertex_system(prov, W, domain)
    x = np.linalg.solve(a, b)
    ainv = np.linalg.inv(a)
    wi = W[prov.owner]
    out = {prov.owner: np.zeros((3, 3))}
    for r, j in enumerate(others):
        if j < 0:
            continue
        out[prov.owner] += np.outer(ainv[:, r], x - wi)
        out[j] = out.get(j, np.zeros((3, 3))) + np.outer(ainv[:, r], W[j] - x)
    return out


def vertex_position(prov: VertexProvenance, W, domain: Domain) -> np.ndarray:
    """Reconstruct a vertex position from its provenance."""
    if prov.kind == "seed-apex":
        return _as_points(W)[prov.owner].copy()
    a, b, _ = _vertex_system(prov, _as_points(W), domain)
    return np.linalg.solve(a, b)


# --------------------------------------------------------------------------
# restricted Voronoi diagram
# --------------------------------------------------------------------------


@dataclass(eq=False)
class RestrictedCell:
    """Restricted Voronoi cell of one seed, decomposed into simplices.

    ``vertices``/``labels`` describe the cell's boundary vertices;
    ``simplex_vertices`` indexes three of them per integration simplex.  In
    volume mode every simplex also has the seed as apex.  ``polygons`` are the
    boundary facets (volume) or restricted triangle pieces (surface).
    """

    seed_index: int
    seed_position: np.ndarray
    dim: int
    vertices: np.ndarray
    labels: list
    polygons: list
    simplex_vertices: np.ndarray
    orientation: np.ndarray
    frames: np.ndarray
    provenance: list
    systems: tuple = ()

    @property
    def empty(self) -> bool:
        return len(self.simplex_vertices) == 0

    @property
    def simplices(self) -> list:
        out = []
        for n, tri in enumerate(self.simplex_vertices):
            prov = (VertexProvenance.apex(self.seed_index),) if self.dim == 3 else ()
            prov += tuple(self.provenance[v] for v in tri)
            out.append(
                IntegrationSimplex(
                    self.dim,
                    self.seed_position,
                    self.vertices[tri],
                    FrameMatrix(self.frames[n], 1.0),
                    prov,
                    int(self.orientation[n]),
                )
            )
        return out

    def measure(self) -> float:
        """Signed sum of simplex volumes (or areas) in world coordinates."""
        if self.empty:
            return 0.0
        pts = self.vertices[self.simplex_vertices]
        if self.dim == 3:
            e = pts - self.seed_position
            vol = np.abs(np.einsum("ni,ni->n", e[:, 0], np.cross(e[:, 1], e[:, 2]))) / 6.0
            return float((vol * self.orientation).sum())
        n = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        return float(np.linalg.norm(n, axis=1).sum() / 2.0)


def decompose_cell(polytope: ConvexPolytope, apex, field: Optional[TensorField] = None, owner=0):
    """Fan-triangulate every facet and cone it to ``apex``.

    Returns a list of tetrahedral :class:`IntegrationSimplex` objects, each
    positively ordered, with ``orientation = -1`` where the apex lies outside
    the facet's plane.  Slivers are kept; they integrate to zero.
    """
    apex = np.asarray(apex, dtype=float)
    tris, orient = _fan_cones(polytope.facets, polytope.labels, polytope.verts, apex)
    frames = _frames(field, polytope.verts, tris, apex, 3)
    provs = [VertexProvenance.from_labels(owner, sorted(l)) for l in polytope.labels]
    return [
        IntegrationSimplex(
            3,
            apex,
            polytope.verts[t],
            FrameMatrix(frames[n], 1.0),
            (VertexProvenance.apex(owner),) + tuple(provs[v] for v in t),
            int(orient[n]),
        )
        for n, t in enumerate(tris)
    ]


def _fan(idx, labels):
    keys = [_label_key(labels[v]) for v in idx]
    r = min(range(len(idx)), key=keys.__getitem__)
    ring = idx[r:] + idx[:r]
    return [(ring[0], ring[k], ring[k + 1]) for k in range(1, len(ring) - 1)]


def _fan_cones(facets, labels, verts, apex):
    tris = [t for _, idx in facets for t in _fan(list(idx), labels)]
    if not tris:
        return np.zeros((0, 3), dtype=np.intp), np.zeros(0)
    tris = np.array(tris, dtype=np.intp)
    e = verts[tris] - apex
    triple = np.einsum("ni,ni->n", e[:, 0], np.cross(e[:, 1], e[:, 2]))
    neg = triple < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris, np.where(neg, -1, 1)


def _frames(field, verts, tris, apex, dim):
    if len(tris) == 0:
        return np.zeros((0, 3, 3))
    if field is None:
        return np.broadcast_to(np.eye(3), (len(tris), 3, 3)).copy()
    pts = verts[tris]
    if dim == 3:
        bary = (pts.sum(axis=1) + apex) / 4.0
    else:
        bary = pts.mean(axis=1)
    return np.array(field.frames_at(bary))


def _finish_cell(i, W, domain, field, verts, labels, polygons, tris, orient):
    """Re-solve vertex positions from their planes and package the cell."""
    wi = W[i]
    n = len(verts)
    a = np.zeros((n, 3, 3))
    b = np.zeros((n, 3))
    others = np.full((n, 3), -1, dtype=np.intp)
    verts = np.array(verts, dtype=float).reshape(-1, 3)
    chosen = [None] * n
    degenerate = [False] * n

    def plane(label):
        if label[0] == "b":
            wj = W[label[1]]
            return wj - wi, 0.5 * (wj @ wj - wi @ wi)
        return domain.fixed_plane(label)

    for v, lab in enumerate(labels):
        srt = sorted(lab)
        if len(srt) != 3:
            degenerate[v] = True
            sys = _best_system(srt, plane)
            if sys is None:
                chosen[v] = srt
                continue
            srt = sys[0]
        chosen[v] = srt
        for r, l in enumerate(srt):
            if l[0] == "b":
                others[v, r] = l[1]
            else:
                a[v, r], b[v, r] = domain.fixed_plane(l)
    bis = others >= 0
    wj = W[others[bis]]
    a[bis] = wj - wi
    b[bis] = 0.5 * (np.einsum("ij,ij->i", wj, wj) - wi @ wi)
    norms = np.linalg.norm(a, axis=2)
    has_rows = np.all(norms > 0, axis=1)
    ok = np.zeros(n, dtype=bool)
    if has_rows.any():
        nrm = a[has_rows] / norms[has_rows][..., None]
        ok[has_rows] = np.abs(np.linalg.det(nrm)) > COND_EPS
    provs = [
        VertexProvenance.from_labels(i, chosen[v], degenerate[v] or not ok[v]) for v in range(n)
    ]
    if ok.any():
        verts[ok] = np.linalg.solve(a[ok], b[ok][..., None])[..., 0]
    tris = np.asarray(tris, dtype=np.intp).reshape(-1, 3)
    frames = _frames(field, verts, tris, wi, domain.dim)
    return RestrictedCell(
        i,
        wi.copy(),
        domain.dim,
        verts,
        list(labels),
        polygons,
        tris,
        np.asarray(orient, dtype=float).reshape(-1),
        frames,
        provs,
        (a, others, ok),
    )


def _empty_cell(i, W, dim):
    return RestrictedCell(
        i, W[i].copy(), dim, np.zeros((0, 3)), [], [], np.zeros((0, 3), dtype=np.intp),
        np.zeros(0), np.zeros((0, 3, 3)), [], (np.zeros((0, 3, 3)), np.zeros((0, 3), dtype=np.intp), np.zeros(0, dtype=bool)),
    )


def _clip_order(W, i):
    d2 = ((W - W[i]) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")
    return [int(j) for j in order if j != i], d2


def _volume_cell(i, W, domain, field):
    eps = EPS_PLANE * domain.scale
    poly = domain.polytope
    wi = W[i]
    order, d2 = _clip_order(W, i)
    radius = poly.max_distance(wi)
    for j in order:
        if d2[j] > 4.0 * radius * radius:
            break
        wj = W[j]
        n = wj - wi
        nn = np.sqrt(d2[j])
        poly = poly.clip(("b", j), n / nn, 0.5 * (wj @ wj - wi @ wi) / nn, eps)
        if poly is None:
            return _empty_cell(i, W, 3)
        radius = poly.max_distance(wi)
    tris, orient = _fan_cones(poly.facets, poly.labels, poly.verts, wi)
    polygons = [list(idx) for _, idx in poly.facets]
    return _finish_cell(i, W, domain, field, poly.verts, poly.labels, polygons, tris, orient)


def _surface_cells(W, domain, field):
    v, t = domain.mesh_vertices, domain.triangles
    eps = EPS_PLANE * domain.scale
    k = len(W)
    pieces = [[] for _ in range(k)]
    for tri in range(len(t)):
        p = v[t[tri]]
        c = p.mean(axis=0)
        rho = float(np.sqrt(((p - c) ** 2).sum(axis=1).max()))
        cover = float(np.sqrt(((p[None] - W[:, None]) ** 2).sum(-1).max(axis=1).min()))
        dist_c = np.sqrt(((W - c) ** 2).sum(axis=1))
        base_labels = [
            frozenset({("t", tri), ("e", tri, 0), ("e", tri, 2)}),
            frozenset({("t", tri), ("e", tri, 0), ("e", tri, 1)}),
            frozenset({("t", tri), ("e", tri, 1), ("e", tri, 2)}),
        ]
        for i in range(k):
            if dist_c[i] - rho > cover * (1 + 1e-9) + eps:
                continue
            wi = W[i]
            order, d2 = _clip_order(W, i)
            pos, labs = p, base_labels
            radius = float(np.sqrt(((pos - wi) ** 2).sum(axis=1).max()))
            for j in order:
                if d2[j] > 4.0 * radius * radius:
                    break
                wj = W[j]
                nn = np.sqrt(d2[j])
                res = _clip_polygon(pos, labs, ("b", j), (wj - wi) / nn, 0.5 * (wj @ wj - wi @ wi) / nn, eps)
                if res is None:
                    pos = None
                    break
                pos, labs = res
                radius = float(np.sqrt(((pos - wi) ** 2).sum(axis=1).max()))
            if pos is not None:
                pieces[i].append((pos, labs))
    cells = []
    for i in range(k):
        if not pieces[i]:
            cells.append(_empty_cell(i, W, 2))
            continue
        verts, labels, polygons, tris = [], [], [], []
        for pos, labs in pieces[i]:
            base = len(verts)
            idx = list(range(base, base + len(pos)))
            verts.extend(pos)
            labels.extend(labs)
            polygons.append(idx)
            tris.extend(_fan(idx, labels))
        cells.append(
            _finish_cell(i, W, domain, field, verts, labels, polygons, tris, np.ones(len(tris)))
        )
    return cells


@dataclass(eq=False)
class RestrictedVoronoiDiagram:
    """All restricted cells of a seed set, in seed order."""

    seeds: np.ndarray
    domain: Domain
    field: Optional[TensorField]
    cells: list

    @property
    def dim(self) -> int:
        return self.domain.dim

    def measure(self) -> float:
        return float(sum(c.measure() for c in self.cells))

    def signature(self) -> tuple:
        """Combinatorial structure (sorted vertex label sets per cell)."""
        return tuple(tuple(sorted(_label_key(l) for l in c.labels)) for c in self.cells)

    @property
    def empty_cells(self) -> list:
        return [c.seed_index for c in self.cells if c.empty]

    @property
    def degenerate_vertices(self) -> int:
        return sum(p.degenerate for c in self.cells for p in c.provenance)

    @cached_property
    def arrays(self) -> dict:
        """Concatenated per-vertex and per-simplex arrays of all cells."""
        verts, owner, sys_a, others, ok = [], [], [], [], []
        svert, sowner, orient, frames = [], [], [], []
        base = 0
        for c in self.cells:
            nv = len(c.vertices)
            if nv:
                a, oth, good = c.systems
                verts.append(c.vertices)
                owner.append(np.full(nv, c.seed_index))
                sys_a.append(a)
                others.append(oth)
                ok.append(good)
            if len(c.simplex_vertices):
                svert.append(c.simplex_vertices + base)
                sowner.append(np.full(len(c.simplex_vertices), c.seed_index))
                orient.append(c.orientation)
                frames.append(c.frames)
            base += nv

        def cat(parts, shape, dtype=float):
            return np.concatenate(parts) if parts else np.zeros(shape, dtype=dtype)

        return {
            "vertices": cat(verts, (0, 3)),
            "vertex_owner": cat(owner, (0,), np.intp),
            "A": cat(sys_a, (0, 3, 3)),
            "others": cat(others, (0, 3), np.intp),
            "ok": cat(ok, (0,), bool),
            "simplex_vertices": cat(svert, (0, 3), np.intp),
            "simplex_owner": cat(sowner, (0,), np.intp),
            "orientation": cat(orient, (0,)),
            "frames": cat(frames, (0, 3, 3)),
        }


def _volume_task(args):
    i, W, domain, field = args
    return _volume_cell(i, W, domain, field)


JITTER_REL = 1e-9


def jitter_seeds(W, domain: Domain, rng_seed: int = 0, magnitude: float = JITTER_REL) -> np.ndarray:
    """Displace every seed by a seeded uniform offset of at most
    ``magnitude * domain.scale`` per coordinate.

    Breaks cospherical (degenerate) configurations deterministically.
    """
    W = np.array(_as_points(W), dtype=float)
    rng = np.random.default_rng(rng_seed)
    return W + magnitude * domain.scale * rng.uniform(-1.0, 1.0, size=W.shape)


def build_rvd(W, domain: Domain, field: Optional[TensorField] = None, workers: int = 1) -> RestrictedVoronoiDiagram:
    """Restricted Voronoi diagram of the seeds ``W`` over ``domain``.

    Volume mode clips the domain polytope by the bisector half-spaces of each
    seed, nearest neighbours first, stopping once the remaining seeds are
    farther than twice the current cell radius.  Surface mode clips every
    mesh triangle the same way.  ``workers > 1`` builds volume cells in a
    process pool; results are always returned in seed order.
    """
    W = np.array(SeedSet(W).points if not isinstance(W, SeedSet) else W.points)
    if domain.kind == "volume":
        tol = EPS_PLANE * domain.scale
        outside = [i for i, w in enumerate(W) if not domain.contains(w, tol)]
        if outside:
            warnings.warn(
                f"{len(outside)} seed(s) outside the domain (first: {outside[0]})",
                SeedOutsideDomain,
                stacklevel=2,
            )
        if workers and workers > 1 and len(W) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                cells = list(ex.map(_volume_task, [(i, W, domain, field) for i in range(len(W))], chunksize=max(1, len(W) // (4 * workers))))
        else:
            cells = [_volume_cell(i, W, domain, field) for i in range(len(W))]
    else:
        cells = _surface_cells(W, domain, field)
    return RestrictedVoronoiDiagram(W, domain, field, cells)
