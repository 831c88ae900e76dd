import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedlod import fem
from mixedlod.errors import AssemblyError, DomainError, SpaceMismatchError
from mixedlod.mesh import build_hierarchy, build_structured_mesh


def constant_field_dofs(space, c):
    """Dofs of the constant vector field ``c``: its normal flux on each edge."""
    return space.mesh.normals[space.dofs] @ np.asarray(c, dtype=float)


@pytest.fixture(scope="module")
def hier():
    return build_hierarchy("unit_square", 1, 3)


def test_reference_triangle_hypotenuse_mass():
    # the lower triangle of the level-0 square is {(0,0), (1,0), (0,1)}
    mesh = build_structured_mesh("unit_square", 0)
    V = fem.RTSpace(mesh)
    t = int(np.flatnonzero(np.all(np.sort(mesh.vertices[mesh.triangles].sum(axis=1), axis=1) == [1, 1], axis=1))[0])
    p = mesh.vertices[mesh.triangles[t]]
    assert {tuple(x) for x in p} == {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}
    loc = fem.element_mass_matrices(V, 1.0)[t]
    # local edge i is opposite vertex i; the hypotenuse is opposite the origin
    i = int(np.flatnonzero(np.all(p == 0.0, axis=1))[0])
    # phi = sqrt(2) (x - 0), so int phi.phi = 2 int (x^2 + y^2) = 2 (1/12 + 1/12) = 1/3
    assert loc[i, i] == pytest.approx(1.0 / 3.0, rel=1e-14)


def test_local_basis_has_unit_edge_flux():
    mesh = build_structured_mesh("unit_square", 2)
    V = fem.RTSpace(mesh)
    for t in (0, 5, 17):
        tri = mesh.triangles[t]
        for i in range(3):
            # value of basis i at the midpoints of the three local edges, times normals
            mids = np.array([0.5 * (mesh.vertices[tri[(j + 1) % 3]] + mesh.vertices[tri[(j + 2) % 3]]) for j in range(3)])
            scale = V.basis_scale[t, i]
            vals = scale * (mids - mesh.vertices[tri[i]])
            n = mesh.normals[mesh.tri_edges[t]]
            flux = np.einsum("jd,jd->j", vals, n)
            expected = np.zeros(3)
            expected[i] = 1.0
            assert np.allclose(flux, expected, atol=1e-13)


def test_mass_scaling_and_symmetry():
    mesh = build_structured_mesh("unit_square", 3)
    V = fem.RTSpace(mesh)
    A = np.random.default_rng(1).uniform(1, 5, mesh.n_triangles)
    M1 = fem.assemble_weighted_mass(V, A).matrix
    M2 = fem.assemble_weighted_mass(V, 2 * A).matrix
    assert abs(M1 - 2 * M2).max() <= 1e-15 * abs(M1).max()
    assert abs(M1 - M1.T).max() == 0.0
    ev = np.linalg.eigvalsh(M1.toarray())
    assert ev.min() > 0


def test_div_entries():
    mesh = build_structured_mesh("unit_square", 2)
    V, Q = fem.RTSpace(mesh), fem.PressureSpace(mesh)
    B = fem.assemble_div(V, Q).matrix.toarray()
    # each interior edge touches two triangles with opposite signs
    assert np.all(np.abs(B.sum(axis=0)) <= 1e-15)
    assert np.all((B != 0).sum(axis=0) == 2)
    for col, e in enumerate(V.dofs):
        nz = np.abs(B[:, col][B[:, col] != 0])
        assert np.allclose(nz, mesh.edge_lengths[e], rtol=1e-15)
    # a constant field is divergence-free on triangles away from the boundary
    v = constant_field_dofs(V, (1.0, 0.0))
    inner = ~mesh.boundary[mesh.tri_edges].any(axis=1)
    assert np.abs((B @ v)[inner]).max() <= 1e-14


def test_divergence_of_outward_basis():
    mesh = build_structured_mesh("unit_square", 0)
    V, Q = fem.RTSpace(mesh), fem.PressureSpace(mesh)
    B = fem.assemble_div(V, Q).matrix.toarray()
    # the diagonal has length sqrt(2); its normal points out of exactly one triangle
    assert sorted(B[:, 0].round(14)) == [-round(math.sqrt(2), 14), round(math.sqrt(2), 14)]


def test_space_tags_enforced(hier):
    Vh, Qh = fem.fine_spaces(hier)
    B = fem.assemble_div(Vh, Qh)
    P = fem.prolongation(hier)
    with pytest.raises(SpaceMismatchError):
        B @ fem.projection_PH(hier)
    with pytest.raises(SpaceMismatchError):
        P @ B.T
    assert (B @ P).rows == fem.FINE_PRESSURE
    VH, QH = fem.coarse_spaces(hier)
    with pytest.raises(SpaceMismatchError):
        fem.assemble_div(Vh, QH)


def test_pi_prolong_identity(hier):
    P = fem.prolongation(hier).matrix
    Pi = fem.interpolation_PiH(hier).matrix
    err = abs(Pi @ P - np.eye(P.shape[1])).max()
    assert err <= 1e-12


def test_prolonged_basis_edge_fluxes(hier):
    P = fem.prolongation(hier).matrix
    Pi = fem.interpolation_PiH(hier).matrix
    for E in range(P.shape[1]):
        fluxes = Pi @ P[:, E].toarray().ravel()
        assert fluxes[E] == pytest.approx(1.0, abs=1e-13)
        assert np.abs(np.delete(fluxes, E)).max() <= 1e-13


def test_interior_fine_edges_not_seen_by_pi(hier):
    Vh, _ = fem.fine_spaces(hier)
    Pi = fem.interpolation_PiH(hier).matrix
    inner = hier.coarse_edge_of_fine[Vh.dofs] < 0
    v = np.zeros(Vh.dim)
    v[inner] = np.random.default_rng(2).standard_normal(inner.sum())
    assert np.abs(Pi @ v).max() == 0.0


def test_pi_rows_reproduce_unit_flux(hier):
    Vh, _ = fem.fine_spaces(hier)
    VH, _ = fem.coarse_spaces(hier)
    Pi = fem.interpolation_PiH(hier).matrix
    for c in ((1.0, 0.0), (0.3, -0.7)):
        fine = constant_field_dofs(Vh, c)
        coarse = constant_field_dofs(VH, c)
        assert np.allclose(Pi @ fine, coarse, atol=1e-14)


_HIER = build_hierarchy("l_shape", 1, 3)
_Vh, _Qh = fem.fine_spaces(_HIER)
_VH, _QH = fem.coarse_spaces(_HIER)
_OPS = {
    "Vh": _Vh,
    "Bh": fem.assemble_div(_Vh, _Qh).matrix,
    "BH": fem.assemble_div(_VH, _QH).matrix,
    "Pi": fem.interpolation_PiH(_HIER).matrix,
    "PH": fem.projection_PH(_HIER).matrix,
}


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_commuting_property(seed):
    h = _HIER
    v = np.random.default_rng(seed).standard_normal(_OPS["Vh"].dim)
    lhs = (_OPS["BH"] @ (_OPS["Pi"] @ v)) / h.coarse.areas
    rhs = _OPS["PH"] @ ((_OPS["Bh"] @ v) / h.fine.areas)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(v).max())


def test_projection_examples(hier):
    PH = fem.projection_PH(hier)
    inj = fem.injection(hier)
    ones = np.ones(hier.fine.n_triangles)
    assert np.allclose(PH @ ones, 1.0, atol=1e-15)
    q = np.random.default_rng(3).standard_normal(hier.fine.n_triangles)
    pq = PH @ q
    assert np.allclose(PH @ (inj @ pq), pq, atol=1e-14)
    # +-1 pattern with zero average on every coarse triangle
    checker = np.zeros(hier.fine.n_triangles)
    for T in range(hier.coarse.n_triangles):
        kids = np.flatnonzero(hier.parent == T)
        checker[kids] = np.where(np.arange(len(kids)) % 2 == 0, 1.0, -1.0)
    assert np.abs(PH @ checker).max() <= 1e-15


def test_prolongation_divergence_and_energy(hier):
    Vh, Qh = fem.fine_spaces(hier)
    VH, QH = fem.coarse_spaces(hier)
    P = fem.prolongation(hier)
    vH = np.random.default_rng(4).standard_normal(VH.dim)
    vh = P @ vH
    div_f = (fem.assemble_div(Vh, Qh) @ vh) / hier.fine.areas
    div_c = (fem.assemble_div(VH, QH) @ vH) / hier.coarse.areas
    assert np.allclose(div_f, (fem.injection(hier) @ div_c), atol=1e-12)
    Mh = fem.assemble_weighted_mass(Vh, 1.0)
    MH = fem.assemble_weighted_mass(VH, 1.0)
    assert fem.energy_norm(Mh, vh) == pytest.approx(fem.energy_norm(MH, vH), rel=1e-12)


def test_norms():
    mesh = build_structured_mesh("unit_square", 3)
    V = fem.RTSpace(mesh)
    M = fem.assemble_weighted_mass(V, 1.0)
    assert fem.energy_norm(M, np.zeros(V.dim)) == 0.0
    v = constant_field_dofs(V, (1.0, 0.0))
    vl = V.local_values(v)
    assert vl.shape == (mesh.n_triangles, 3)
    loc = fem.element_mass_matrices(V, 1.0)
    full = fem.element_energies(V, loc, v)
    parts = sum(fem.subdomain_energy_norm(V, loc, v, idx) ** 2 for idx in np.array_split(np.arange(mesh.n_triangles), 5))
    assert parts == pytest.approx(full.sum(), rel=1e-12)
    bad = fem.Operator(-M.matrix, M.rows, M.cols)
    with pytest.raises(AssemblyError):
        fem.energy_norm(bad, np.ones(V.dim))
    q = np.ones(mesh.n_triangles)
    assert fem.l2_norm_pressure(fem.PressureSpace(mesh), q) == pytest.approx(1.0, rel=1e-14)


def test_unit_field_has_unit_energy():
    # (1, 0) is not in H0(div), so set all three local values including boundary edges
    mesh = build_structured_mesh("unit_square", 3)
    V = fem.RTSpace(mesh)
    loc = fem.element_mass_matrices(V, 1.0)
    vl = np.einsum("tid,d->ti", mesh.normals[mesh.tri_edges], [1.0, 0.0])
    energy = np.einsum("ti,tij,tj->", vl, loc, vl)
    assert energy == pytest.approx(1.0, rel=1e-13)


def test_evaluate_reproduces_constant_field():
    mesh = build_structured_mesh("unit_square", 2)
    V = fem.RTSpace(mesh)
    interior_only = np.flatnonzero(~mesh.boundary[mesh.tri_edges].any(axis=1))
    v = constant_field_dofs(V, (0.4, -1.3))
    vals = V.at_centroids(v)[interior_only]
    assert np.allclose(vals, [0.4, -1.3], atol=1e-13)


def test_div_l2_error():
    mesh = build_structured_mesh("unit_square", 2)
    V, Q = fem.RTSpace(mesh), fem.PressureSpace(mesh)
    B = fem.assemble_div(V, Q)
    v = np.random.default_rng(5).standard_normal(V.dim)
    d = fem.divergence(B, v, mesh)
    assert fem.div_l2_error(B, v, mesh, d) == pytest.approx(0.0, abs=1e-13)


def test_lambda_factor():
    assert fem.lambda_factor(1.0, "two") == 1.0
    assert fem.lambda_factor(1.0) == 1.0
    assert fem.lambda_factor(16.0, "two") == pytest.approx(2.2360679, abs=1e-7)
    assert fem.lambda_factor(math.e) == pytest.approx(math.sqrt(2), rel=1e-15)
    with pytest.raises(DomainError):
        fem.lambda_factor(0.5)


def test_operator_dump(tmp_path, hier):
    P = fem.projection_PH(hier)
    path = tmp_path / "P.txt"
    P.dump(path)
    lines = path.read_text().split("\n")
    rows = [l.split() for l in lines if l and not l.startswith("%")]
    assert len(rows) == P.matrix.nnz
    r, c, v = rows[0]
    assert P.matrix[int(r), int(c)] == pytest.approx(float(v))
