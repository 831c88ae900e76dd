import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mixedlod import fem
from mixedlod.errors import RankError, SolverFailure, SpaceMismatchError
from mixedlod.mesh import build_structured_mesh
from mixedlod.saddle import (
    Constraint,
    build_constrained_system,
    reduced_rhs,
    solve,
    solve_dense,
)


def dense_kkt(M, C, g, r):
    n, m = M.shape[0], C.shape[0]
    K = np.block([[M, C.T], [C, np.zeros((m, m))]])
    return solve_dense(K, np.concatenate([g, r]))[:n]


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


def test_hand_solved_kkt():
    s = build_constrained_system(sp.eye(2), [Constraint("c", sp.csr_matrix([[1.0, 1.0]]))], g=np.array([1.0, 0.0]))
    u, lam, rep = solve(s)
    assert np.allclose(u, [0.5, -0.5], atol=1e-15)
    assert lam["c"] == pytest.approx([0.5])
    assert rep.residual <= 1e-10


def test_empty_constraints_is_spd_solve(rng):
    M = random_spd(rng, 6)
    g = rng.standard_normal(6)
    u, lam, _ = solve(build_constrained_system(sp.csr_matrix(M), [], g))
    assert np.allclose(u, np.linalg.solve(M, g), atol=1e-12)
    assert lam == {}


def test_duplicate_row_removed(rng):
    M = random_spd(rng, 4)
    C = sp.csr_matrix([[1.0, 2.0, 0, 0], [0, 1.0, -1.0, 0], [1.0, 2.0, 0, 0]])
    r = np.array([1.0, 0.5, 1.0])
    s = build_constrained_system(sp.csr_matrix(M), [Constraint("c", C, rhs=r)])
    assert s.m == 2
    assert any("duplicate" in p for p in s.policy)
    u, lam, _ = solve(s)
    assert np.allclose(C @ u, r, atol=1e-12)
    assert lam["c"][2] == 0.0


def test_full_domain_divergence_rank():
    mesh = build_structured_mesh("unit_square", 2)
    V, Q = fem.RTSpace(mesh), fem.PressureSpace(mesh)
    B = fem.assemble_div(V, Q).matrix
    assert np.linalg.matrix_rank(B.toarray()) == mesh.n_triangles - 1
    M = fem.assemble_weighted_mass(V, 1.0).matrix
    s = build_constrained_system(M, [Constraint("div", B, redundancy="drop")])
    assert s.m == mesh.n_triangles - 1
    with pytest.raises(RankError) as info:
        build_constrained_system(M, [Constraint("div", B)])
    assert info.value.block == "div"


def test_singular_system_reports_block():
    M = sp.eye(3, format="csc")
    # dependent but neither duplicated nor zero-sum: row3 = row1 + row2
    C = sp.csr_matrix([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    s = build_constrained_system(M, [Constraint("pair", C)])
    with pytest.raises(RankError, match="pair"):
        s.factorize()


def test_dimension_checks():
    with pytest.raises(SpaceMismatchError):
        build_constrained_system(sp.eye(3), [Constraint("c", sp.eye(2))])
    with pytest.raises(SpaceMismatchError):
        build_constrained_system(sp.eye(3), [], g=np.ones(2))
    with pytest.raises(SpaceMismatchError):
        build_constrained_system(sp.eye(2), [Constraint("c", sp.eye(2), rhs=np.ones(3))])


def test_residual_failure_carries_report():
    # an ill-conditioned M cannot meet an absurdly small tolerance
    M = sp.csc_matrix(scipy.linalg.hilbert(12))
    s = build_constrained_system(M, [], g=np.ones(12))
    with pytest.raises(SolverFailure) as info:
        solve(s, tol=1e-300)
    assert info.value.report is not None


def test_gauge_elimination_matches_border():
    mesh = build_structured_mesh("unit_square", 3)
    V, Q = fem.RTSpace(mesh), fem.PressureSpace(mesh)
    A = np.random.default_rng(3).uniform(1, 10, mesh.n_triangles)
    M = fem.assemble_weighted_mass(V, A).matrix
    B = fem.assemble_div(V, Q).matrix
    r = np.where(mesh.centroids[:, 1] < 0.5, 1.0, -1.0) * mesh.areas
    blk = Constraint("div", B, rhs=r, redundancy="gauge", weights=mesh.areas)
    u1, p1, _ = solve(build_constrained_system(M, [blk], gauge_mode="eliminate"))
    s2 = build_constrained_system(M, [blk], gauge_mode="border")
    assert s2.border is not None
    u2, p2, _ = solve(s2)
    assert np.allclose(u1, u2, atol=1e-12)
    assert np.allclose(p1["div"], p2["div"], atol=1e-10)
    assert abs(np.dot(mesh.areas, p1["div"])) <= 1e-12


def test_declared_groups():
    # two disconnected blocks, each with rows summing to zero
    C = sp.csr_matrix([[1.0, -1.0, 0, 0], [-1.0, 1.0, 0, 0], [0, 0, 1.0, -1.0], [0, 0, -1.0, 1.0]])
    M = sp.diags([1.0, 2.0, 3.0, 4.0]).tocsc()
    g = np.array([1.0, 0.0, 0.0, 1.0])
    s = build_constrained_system(M, [Constraint("c", C, groups=[np.array([0, 1]), np.array([2, 3])])], g)
    assert s.m == 2
    u, _, _ = solve(s)
    assert np.allclose(C @ u, 0.0, atol=1e-14)


def test_reduced_rhs_reuses_factorization(rng):
    M = sp.csr_matrix(random_spd(rng, 5))
    C = sp.csr_matrix(rng.standard_normal((2, 5)))
    s = build_constrained_system(M, [Constraint("c", C)])
    r = rng.standard_normal(2)
    u, _, _ = solve(s, r=reduced_rhs(s, {"c": r}))
    assert np.allclose(C @ u, r, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 12), m=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_matches_dense_oracle_and_is_optimal(n, m, seed):
    rng = np.random.default_rng(seed)
    m = min(m, n - 1)
    M = random_spd(rng, n)
    C = rng.standard_normal((m, n))
    g = rng.standard_normal(n)
    r = rng.standard_normal(m)
    u, _, rep = solve(build_constrained_system(sp.csr_matrix(M), [Constraint("c", sp.csr_matrix(C), rhs=r)], g))
    assert np.allclose(u, dense_kkt(M, C, g, r), atol=1e-9 * (1 + np.abs(u).max()))
    # primal feasibility
    assert np.linalg.norm(C @ u - r) <= 1e-10 * (1 + np.linalg.norm(r))
    # any feasible perturbation increases the quadratic objective
    _, _, Vt = np.linalg.svd(C)
    null = Vt[m:].T
    J = lambda v: 0.5 * v @ M @ v - g @ v
    for _ in range(10):
        d = null @ rng.standard_normal(null.shape[1])
        assert J(u + 1e-3 * d) > J(u)


def test_deterministic_output(rng):
    M = sp.csr_matrix(random_spd(rng, 8))
    C = sp.csr_matrix(rng.standard_normal((3, 8)))
    g = rng.standard_normal(8)
    a = solve(build_constrained_system(M, [Constraint("c", C)], g))[0]
    b = solve(build_constrained_system(M, [Constraint("c", C)], g))[0]
    assert np.array_equal(a, b)
