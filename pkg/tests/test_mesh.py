import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedlod.errors import ConfigurationError
from mixedlod.mesh import (
    L_SHAPE,
    build_hierarchy,
    build_hierarchy_by_factor,
    build_structured_mesh,
    domain_from_tag,
    patch,
)


def signed_areas(mesh):
    p = mesh.vertices[mesh.triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


@pytest.mark.parametrize(
    "tag, level, count",
    [("unit_square", 1, 8), ("l_shape", 0, 6), ("rect:60x220:1.2x2.2", 0, 26400)],
)
def test_triangle_counts(tag, level, count):
    assert build_structured_mesh(tag, level).n_triangles == count


@pytest.mark.parametrize("tag, level", [("unit_square", 3), ("l_shape", 2), ("rect:3x2:1.5x1.0", 1)])
def test_mesh_invariants(tag, level):
    mesh = build_structured_mesh(tag, level)
    sa = signed_areas(mesh)
    assert np.all(sa > 0)  # counterclockwise
    assert np.allclose(mesh.areas, sa, rtol=0, atol=1e-15)
    assert abs(mesh.areas.sum() - mesh.domain.area) <= 1e-12 * mesh.domain.area
    et = mesh.edge_tris
    assert np.array_equal(et[:, 1] < 0, mesh.boundary)
    assert np.all(mesh.edges[:, 0] < mesh.edges[:, 1])
    # every edge appears among the vertices of each incident triangle
    for side in (0, 1):
        has = et[:, side] >= 0
        tris = mesh.triangles[et[has, side]]
        for end in (0, 1):
            assert np.all((tris == mesh.edges[has, end][:, None]).any(axis=1))
    # edges are sorted lexicographically
    order = np.lexsort((mesh.edges[:, 1], mesh.edges[:, 0]))
    assert np.array_equal(order, np.arange(mesh.n_edges))


def test_normal_convention():
    mesh = build_structured_mesh("unit_square", 2)
    v = mesh.vertices
    t = v[mesh.edges[:, 1]] - v[mesh.edges[:, 0]]
    t /= np.linalg.norm(t, axis=1)[:, None]
    assert np.allclose(mesh.normals, np.column_stack([-t[:, 1], t[:, 0]]), atol=1e-15)


def test_diagonal_runs_upper_left_to_lower_right():
    mesh = build_structured_mesh("unit_square", 0)
    diag = mesh.edges[~mesh.boundary]
    ends = {tuple(p) for p in mesh.vertices[diag[0]]}
    assert ends == {(0.0, 1.0), (1.0, 0.0)}


def test_l_shape_excludes_lower_right_quarter():
    mesh = build_structured_mesh(L_SHAPE, 2)
    c = mesh.centroids
    assert not np.any((c[:, 0] > 0.5) & (c[:, 1] < 0.5))


def test_unsupported_domain():
    with pytest.raises(ConfigurationError):
        domain_from_tag("circle")
    with pytest.raises(ConfigurationError):
        build_structured_mesh("unit_square", -1)


def test_hierarchy_counts():
    h = build_hierarchy("unit_square", 2, 5)
    assert h.fine.n_triangles == 2048
    assert h.coarse.n_triangles == 32
    assert set(np.unique(h.parent)) == set(range(32))
    assert np.all(np.bincount(h.parent) == 64)


def test_hierarchy_levels_checked():
    with pytest.raises(ConfigurationError):
        build_hierarchy("unit_square", 3, 3)
    with pytest.raises(ConfigurationError):
        build_hierarchy_by_factor("unit_square", 2, 3)


def test_one_bisection_edge_composition():
    h = build_hierarchy("unit_square", 0, 1)
    for E in range(h.coarse.n_edges):
        idx, sign = h.fine_edges_of(E)
        assert len(idx) == 2
        assert np.all(np.abs(sign) == 1)


@pytest.mark.parametrize("tag, c, f", [("unit_square", 1, 4), ("l_shape", 1, 3)])
def test_coarse_edges_split_exactly(tag, c, f):
    h = build_hierarchy(tag, c, f)
    m = 2 ** (f - c)
    for E in range(h.coarse.n_edges):
        idx, _ = h.fine_edges_of(E)
        assert len(idx) == m
        total = h.fine.edge_lengths[idx].sum()
        assert abs(total - h.coarse.edge_lengths[E]) <= 1e-12 * h.coarse.edge_lengths[E]


def test_fine_centroids_inside_parent_l_shape():
    h = build_hierarchy("l_shape", 1, 3)
    P = h.coarse.vertices[h.coarse.triangles[h.parent]]
    x = h.fine.centroids
    # barycentric coordinates of each fine centroid in its parent
    T = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    lam = np.linalg.solve(T, (x - P[:, 0])[..., None])[..., 0]
    assert np.all(lam > 0) and np.all(lam.sum(axis=1) < 1)


def test_factor_ten_hierarchy():
    h = build_hierarchy_by_factor("spe10", 1, 10)
    assert h.coarse.n_triangles == 6 * 22 * 2
    assert h.fine.n_triangles == 60 * 220 * 2
    assert np.all(np.bincount(h.parent) == 100)
    assert h.H == pytest.approx(0.2) and h.h == pytest.approx(0.02)


def brute_force_patch(mesh, T, k):
    """Vertex-sharing closure computed from vertex sets alone."""
    members = {T}
    for _ in range(k):
        verts = {int(v) for t in members for v in mesh.triangles[t]}
        members = {t for t in range(mesh.n_triangles) if verts & set(mesh.triangles[t].tolist())}
    return members


def test_interior_patch_has_13_triangles():
    h = build_hierarchy("unit_square", 3, 4)
    T = int(np.argmin(np.linalg.norm(h.coarse.centroids - 0.5, axis=1)))
    p = patch(h, T, 1)
    assert len(p.coarse_triangles) == 13
    assert set(p.coarse_triangles.tolist()) == brute_force_patch(h.coarse, T, 1)


def test_patch_zero_and_saturation():
    h = build_hierarchy("unit_square", 2, 3)
    for T in range(h.coarse.n_triangles):
        assert patch(h, T, 0).coarse_triangles.tolist() == [T]
        assert patch(h, T, 2 * 2**2).is_saturated
    assert all(patch(h, T, h.saturation_layers).is_saturated for T in range(h.coarse.n_triangles))


_H3 = build_hierarchy("unit_square", 3, 4)


@settings(max_examples=30, deadline=None)
@given(T=st.integers(0, 2 * 64 - 1), k=st.integers(0, 5))
def test_patch_properties(T, k):
    h = _H3
    p0 = set(patch(h, T, k).coarse_triangles.tolist())
    p1 = set(patch(h, T, k + 1).coarse_triangles.tolist())
    assert p0 <= p1
    assert p0 == brute_force_patch(h.coarse, T, k)
    for S in patch(h, T, 1).coarse_triangles:
        assert T in patch(h, int(S), 1).coarse_triangles


def test_patch_derived_sets():
    h = build_hierarchy("unit_square", 2, 4)
    p = patch(h, 5, 1)
    assert np.all(p.fine_mask[p.fine_triangles])
    et = h.fine.edge_tris[p.interior_fine_edges]
    assert np.all(p.fine_mask[et[:, 0]]) and np.all(p.fine_mask[et[:, 1]])
    ce = h.coarse.edge_tris[p.interior_coarse_edges]
    assert np.all(p.coarse_mask[ce]) and np.all(ce >= 0)


def test_mesh_dump(tmp_path):
    mesh = build_structured_mesh("unit_square", 0)
    path = tmp_path / "mesh.txt"
    mesh.dump(path)
    lines = path.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 4
    tris = [l for l in lines if l.startswith("t ")]
    assert len(tris) == 2 and len(tris[0].split()) == 4
