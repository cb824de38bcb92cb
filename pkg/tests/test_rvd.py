import warnings

import numpy as np
import pytest

from lpcvt.errors import InputError, NearDegenerate, SeedOutsideDomain, UnboundedPolytope
from lpcvt.oracles import fd_gradient
from lpcvt.rvd import (
    Domain,
    SeedSet,
    VertexProvenance,
    build_rvd,
    circumcenter,
    circumcenter_jacobian,
    constrained_vertex_jacobian,
    decompose_cell,
    jitter_seeds,
    nearest_seed,
    vertex_position,
)


def test_nearest_seed():
    W = [[0, 0, 0], [2, 0, 0]]
    assert nearest_seed(W, [0.5, 0, 0]) == 0
    assert nearest_seed(W, [1, 0, 0]) == 0
    assert nearest_seed(W, [2, 0, 0]) == 1


def test_seedset_validation():
    with pytest.raises(InputError):
        SeedSet([[0, 0, 0], [0, 0, 0]])
    with pytest.raises(InputError):
        SeedSet(np.zeros((0, 3)))
    with pytest.raises(InputError):
        SeedSet([[np.nan, 0, 0]])
    assert len(SeedSet([[0, 0, 0], [1, 0, 0]])) == 2


def test_circumcenter_corner():
    w = np.vstack([np.zeros(3), np.eye(3)])
    c = circumcenter(*w)
    assert np.allclose(c, [0.5, 0.5, 0.5])
    assert np.allclose(np.linalg.norm(w - c, axis=1), np.sqrt(3) / 2)


def test_circumcenter_regular_tetrahedron():
    c = np.array([0.3, -1.0, 2.0])
    w = c + np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    assert np.allclose(circumcenter(*w), c, atol=1e-14)


def test_circumcenter_random_residual(rng):
    worst = 0.0
    for _ in range(1000):
        w = rng.normal(size=(4, 3))
        d = np.linalg.norm(w - circumcenter(*w), axis=1)
        worst = max(worst, np.ptp(d) / np.ptp(w, axis=0).max())
    assert worst <= 1e-10


def test_circumcenter_coplanar():
    with pytest.raises(NearDegenerate):
        circumcenter([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0])


def _fd_blocks(w, h=1e-6):
    blocks = []
    for m in range(4):
        cols = []
        for a in range(3):
            wp, wm = w.copy(), w.copy()
            wp[m, a] += h
            wm[m, a] -= h
            cols.append((circumcenter(*wp) - circumcenter(*wm)) / (2 * h))
        blocks.append(np.array(cols).T)
    return blocks


def test_circumcenter_jacobian_corner():
    w = np.vstack([np.zeros(3), np.eye(3)])
    for got, fd in zip(circumcenter_jacobian(*w), _fd_blocks(w)):
        assert np.abs(got - fd).max() <= 1e-6 * max(np.abs(fd).max(), 1e-300)


def test_circumcenter_jacobian_properties(rng):
    for _ in range(200):
        w = rng.normal(size=(4, 3))
        blocks = circumcenter_jacobian(*w)
        assert np.abs(sum(blocks) - np.eye(3)).max() <= 1e-10 * max(1, max(np.abs(b).max() for b in blocks))
        assert np.allclose(circumcenter(*(2 * w)), 2 * circumcenter(*w), rtol=1e-12, atol=1e-12)
        scaled = circumcenter_jacobian(*(2 * w))
        for a, b in zip(blocks, scaled):
            assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_provenance_trivial_jacobians(cube):
    assert constrained_vertex_jacobian(VertexProvenance.from_labels(0, [("h", 0), ("h", 2), ("h", 4)]), [[0.5] * 3], cube) == {}
    jac = constrained_vertex_jacobian(VertexProvenance.apex(3), np.random.default_rng(0).random((5, 3)), cube)
    assert list(jac) == [3] and np.array_equal(jac[3], np.eye(3))


def _check_vertex_jacobians(rvd, domain, kinds, tol=1e-5):
    W = rvd.seeds
    seen = set()
    for cell in rvd.cells:
        for prov in cell.provenance:
            if prov.kind not in kinds or prov.degenerate:
                continue
            seen.add(prov.kind)
            jac = constrained_vertex_jacobian(prov, W, domain)
            for s, block in jac.items():
                def pos(ws, s=s):
                    V = W.copy()
                    V[s] = ws
                    return vertex_position(prov, V, domain)

                fd = np.array([
                    (pos(W[s] + 1e-6 * e) - pos(W[s] - 1e-6 * e)) / 2e-6 for e in np.eye(3)
                ]).T
                assert np.abs(block - fd).max() <= tol * max(np.abs(fd).max(), 1e-3)
    return seen


def test_vertex_jacobians_volume(cube, rng):
    W = rng.uniform(0.1, 0.9, size=(12, 3))
    rvd = build_rvd(W, cube)
    seen = _check_vertex_jacobians(
        rvd, cube, {"three-bisectors", "two-bisectors-one-plane", "one-bisector-two-planes"}
    )
    assert seen == {"three-bisectors", "two-bisectors-one-plane", "one-bisector-two-planes"}


def test_vertex_jacobians_surface(sphere, rng):
    from lpcvt.optimizer import random_seeds

    W = random_seeds(sphere, 10, 1)
    rvd = build_rvd(W, sphere)
    seen = _check_vertex_jacobians(rvd, sphere, {"two-bisectors-one-plane", "one-bisector-mesh-edge"})
    assert seen == {"two-bisectors-one-plane", "one-bisector-mesh-edge"}


def test_single_seed_cell_is_cube(cube):
    rvd = build_rvd([[0.3, 0.6, 0.2]], cube)
    (cell,) = rvd.cells
    assert cell.measure() == pytest.approx(1.0, rel=1e-14)
    assert len(cell.polygons) == 6
    assert len(cell.simplices) == 12


def test_two_seeds_split_cube(cube):
    rvd = build_rvd([[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]], cube)
    assert [c.measure() for c in rvd.cells] == pytest.approx([0.5, 0.5], rel=1e-14)
    assert rvd.cells[0].vertices[:, 0].max() == pytest.approx(0.5)
    assert rvd.cells[1].vertices[:, 0].min() == pytest.approx(0.5)


def _sample_simplex(pts, n, rng):
    cuts = np.sort(rng.random((n, len(pts) - 1)), axis=1)
    lam = np.diff(np.hstack([np.zeros((n, 1)), cuts, np.ones((n, 1))]), axis=1)
    return lam @ pts


def _sample_cell(cell, n, rng):
    """Uniform points in a convex cell, by measure-weighted simplex choice."""
    pts = cell.vertices[cell.simplex_vertices]
    if cell.dim == 3:
        pts = np.concatenate([np.broadcast_to(cell.seed_position, (len(pts), 1, 3)), pts], axis=1)
        e = pts[:, 1:] - pts[:, :1]
        w = np.abs(np.einsum("ni,ni->n", e[:, 0], np.cross(e[:, 1], e[:, 2])))
    else:
        w = np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)
    pick = rng.choice(len(pts), size=n, p=w / w.sum())
    return np.array([_sample_simplex(pts[k], 1, rng)[0] for k in pick])


def _assert_nearest(rvd, rng, n=1000):
    W = rvd.seeds
    for cell in rvd.cells:
        if cell.empty:
            continue
        x = _sample_cell(cell, n, rng)
        d = np.linalg.norm(x[:, None] - W[None], axis=2)
        assert np.all(d[:, cell.seed_index] <= d.min(axis=1) + 1e-9)


def test_partition_and_nearest_volume(cube, rng):
    for _ in range(3):
        W = rng.random((50, 3))
        rvd = build_rvd(W, cube)
        assert abs(rvd.measure() - 1.0) <= 1e-9
        for cell in rvd.cells:
            assert np.all(cell.orientation == 1)
            assert cell.measure() > 0
    _assert_nearest(rvd, rng)


def test_partition_and_nearest_surface(sphere, rng):
    from lpcvt.optimizer import random_seeds

    W = random_seeds(sphere, 50, 5)
    rvd = build_rvd(W, sphere)
    assert abs(rvd.measure() - sphere.measure()) <= 1e-9 * sphere.measure()
    _assert_nearest(rvd, rng, n=300)


def test_partition_general_polytope(rng):
    # octahedron |x| + |y| + |z| <= 1
    hs = [[sx, sy, sz, 1.0] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    dom = Domain.from_halfspaces(hs)
    assert dom.measure() == pytest.approx(4 / 3, rel=1e-14)
    W = rng.uniform(-0.3, 0.3, size=(30, 3))
    assert build_rvd(W, dom).measure() == pytest.approx(4 / 3, rel=1e-9)


def test_decompose_cube_from_corner(cube):
    simplices = decompose_cell(cube.polytope, [0, 0, 0])
    assert len(simplices) == 12
    vol = sum(s.orientation * abs(np.linalg.det(s.vertices - s.apex)) / 6 for s in simplices)
    assert vol == pytest.approx(1.0)
    assert sum(s.degenerate for s in simplices) == 6


def test_decompose_tetra_from_own_vertex():
    dom = Domain.from_halfspaces([[-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0], [1, 1, 1, 1]])
    simplices = decompose_cell(dom.polytope, [0, 0, 0])
    assert len(simplices) == 4
    assert sum(s.degenerate for s in simplices) == 3
    assert sum(s.measure() * s.orientation for s in simplices) == pytest.approx(1 / 6)


def test_surface_single_triangle_unchanged():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    dom = Domain.from_mesh(v, [[0, 1, 2]])
    (cell,) = build_rvd([[0.2, 0.2, 0.5]], dom).cells
    (s,) = cell.simplices
    assert {tuple(p) for p in s.vertices} == {tuple(p) for p in v}


def test_domain_errors():
    with pytest.raises(UnboundedPolytope):
        Domain.from_halfspaces([[-1, 0, 0, 0], [1, 0, 0, 1], [0, -1, 0, 0], [0, 1, 0, 1], [0, 0, 1, 1]])
    with pytest.raises(InputError):
        Domain.from_halfspaces([[1, 0, 0, -1], [-1, 0, 0, -1], [0, 1, 0, 1], [0, -1, 0, 1], [0, 0, 1, 1], [0, 0, -1, 1]])
    with pytest.raises(InputError):
        Domain.from_mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])


def test_seed_outside_warns(cube):
    with pytest.warns(SeedOutsideDomain):
        rvd = build_rvd([[0.5, 0.5, 0.5], [1.5, 0.5, 0.5]], cube)
    assert rvd.measure() == pytest.approx(1.0)


def test_empty_cell_is_recorded(cube):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeedOutsideDomain)
        rvd = build_rvd([[0.5, 0.5, 0.5], [5.0, 0.5, 0.5]], cube)
    assert rvd.empty_cells == [1]


def test_parallel_build_matches_serial(cube, rng):
    W = rng.random((20, 3))
    a, b = build_rvd(W, cube), build_rvd(W, cube, workers=2)
    assert a.signature() == b.signature()
    for ca, cb in zip(a.cells, b.cells):
        assert np.array_equal(ca.vertices, cb.vertices)


def test_jitter_is_deterministic_and_small(cube):
    W = np.array([[0.25, 0.25, 0.25], [0.75, 0.75, 0.75]])
    a, b = jitter_seeds(W, cube, 4), jitter_seeds(W, cube, 4)
    assert np.array_equal(a, b)
    assert 0 < np.abs(a - W).max() <= 1e-9 * cube.scale
