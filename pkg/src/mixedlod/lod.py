"""Localized orthogonal decomposition for the mixed RT0/P0 discretization.

Corrector problems are posed on the divergence-free fine fluxes of a patch
whose coarse interpolation vanishes.  Two interchangeable routes solve them:

``"saddle"``
    the constrained system with Lagrange multipliers for the fine
    divergence rows and the coarse interpolation rows.
``"stream"``
    the same problem written for a continuous piecewise-linear stream
    function ``psi`` vanishing on the patch boundary and at the coarse
    vertices.  On a patch without holes the discrete curl of these
    functions is exactly the admissible corrector space, so the problem
    becomes a symmetric positive definite system of about a third of the
    size.  Patches that fail the topological check fall back to
    ``"saddle"``.
"""

from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from . import fem
from .errors import DomainError, SolverFailure, SpaceMismatchError
from .fields import CellGridField, SourceField
from .mesh import MeshHierarchy, Patch, patch
from .saddle import (
    DEFAULT_TOL,
    Constraint,
    SolveReport,
    build_constrained_system,
    solve,
)

log = logging.getLogger(__name__)

BACKENDS = ("stream", "saddle")


class Discretization:
    """Fine and coarse operators for one hierarchy and coefficient."""

    def __init__(self, hierarchy: MeshHierarchy, A):
        self.hierarchy = hierarchy
        self.Vh, self.Qh = fem.fine_spaces(hierarchy)
        self.VH, self.QH = fem.coarse_spaces(hierarchy)
        if isinstance(A, CellGridField):
            A = A.on_mesh(hierarchy.fine)
        self.A = np.broadcast_to(np.asarray(A, dtype=float), (hierarchy.fine.n_triangles,)).copy()
        self.local_mass = fem.element_mass_matrices(self.Vh, self.A)
        self.M = fem.Operator(fem._scatter(self.Vh, self.local_mass), fem.FINE_FLUX, fem.FINE_FLUX)
        self.B = fem.assemble_div(self.Vh, self.Qh)
        self.BH = fem.assemble_div(self.VH, self.QH)
        self.P = fem.prolongation(hierarchy)
        self.PiH = fem.interpolation_PiH(hierarchy)
        self.PH = fem.projection_PH(hierarchy)

    @property
    def fine(self):
        return self.hierarchy.fine

    @property
    def coarse(self):
        return self.hierarchy.coarse

    def l2_mass(self) -> fem.Operator:
        if not hasattr(self, "_l2_mass"):
            self._l2_mass = fem.assemble_weighted_mass(self.Vh, 1.0)
        return self._l2_mass

    def energy(self, v) -> float:
        return fem.energy_norm(self.M, v)

    def l2(self, v) -> float:
        return fem.energy_norm(self.l2_mass(), v)

    def element_rhs(self, T: int, v_fine: np.ndarray) -> np.ndarray:
        """Global fine vector of ``a^T(v, phi_e)`` for every fine dof ``e``."""
        tris = self.hierarchy.children[T].indices
        vl = self.Vh.local_values(v_fine)[tris]
        contrib = np.einsum("tij,tj->ti", self.local_mass[tris], vl)
        ld = self.Vh.local_dofs[tris]
        keep = ld >= 0
        return np.bincount(ld[keep], weights=contrib[keep], minlength=self.Vh.dim)

    def source_integrals(self, f: SourceField) -> np.ndarray:
        return f.integrate_triangles(self.fine)


# --- patch problems ----------------------------------------------------------

class _PatchProblem:
    """Factorized corrector problem on one patch."""

    def __init__(self, disc: Discretization, p: Patch, backend: str, tol: float):
        self.disc = disc
        self.patch = p
        self.tol = tol
        self.dofs = disc.Vh.edge_to_dof[p.interior_fine_edges]
        self.M = disc.M.matrix[self.dofs][:, self.dofs].tocsc()
        self.backend = backend
        if backend == "stream" and not self._setup_stream():
            log.debug("patch of T=%d k=%d has holes; using saddle route", p.seed, p.k)
            self.backend = "saddle"
        if self.backend == "saddle":
            self._setup_saddle()

    def _setup_saddle(self):
        disc, p = self.disc, self.patch
        tris = p.fine_triangles
        B = disc.B.matrix[tris][:, self.dofs]
        parents = disc.hierarchy.parent[tris]
        order = np.argsort(parents, kind="stable")
        bounds = np.searchsorted(parents[order], np.unique(parents), side="left")
        groups = np.split(order, bounds[1:])
        cdofs = disc.VH.edge_to_dof[p.interior_coarse_edges]
        Pi = disc.PiH.matrix[cdofs][:, self.dofs]
        self.system = build_constrained_system(
            self.M,
            [Constraint("div", B, groups=groups), Constraint("PiH", Pi)],
        )
        self.system.factorize()

    def _setup_stream(self) -> bool:
        disc, p = self.disc, self.patch
        fine = disc.fine
        edges = fine.edges[p.interior_fine_edges]
        tris = p.fine_triangles
        verts = np.unique(fine.triangles[tris])
        all_edges = np.unique(fine.tri_edges[tris])
        interior = np.zeros(fine.n_edges, dtype=bool)
        interior[p.interior_fine_edges] = True
        bnd_edges = all_edges[~interior[all_edges]]
        boundary_v = np.unique(fine.edges[bnd_edges])
        n_interior_v = len(verts) - len(boundary_v)

        # exactness of the discrete sequence on the patch
        adj = fine.edge_tris[p.interior_fine_edges]
        local = np.full(fine.n_triangles, -1, dtype=np.int64)
        local[tris] = np.arange(len(tris))
        g = sp.csr_matrix(
            (np.ones(len(adj)), (local[adj[:, 0]], local[adj[:, 1]])), shape=(len(tris), len(tris))
        )
        ncomp = csgraph.connected_components(g, directed=False)[0]
        if n_interior_v - len(p.interior_fine_edges) + len(tris) != ncomp:
            return False

        fixed = np.zeros(fine.n_vertices, dtype=bool)
        fixed[boundary_v] = True
        fixed[disc.hierarchy.coarse_vertex_to_fine] = True
        free = verts[~fixed[verts]]
        col = np.full(fine.n_vertices, -1, dtype=np.int64)
        col[free] = np.arange(len(free))
        inv_len = 1.0 / fine.edge_lengths[p.interior_fine_edges]
        rows = np.arange(len(edges))
        r_parts, c_parts, v_parts = [], [], []
        for end, sign in ((0, 1.0), (1, -1.0)):
            c = col[edges[:, end]]
            m = c >= 0
            r_parts.append(rows[m])
            c_parts.append(c[m])
            v_parts.append(sign * inv_len[m])
        self.D = sp.csr_matrix(
            (np.concatenate(v_parts), (np.concatenate(r_parts), np.concatenate(c_parts))),
            shape=(len(edges), len(free)),
        )
        self.S = (self.D.T @ self.M @ self.D).tocsc()
        if self.S.shape[0]:
            self.lu = spla.splu(self.S, permc_spec="MMD_AT_PLUS_A")
        return True

    def solve(self, rhs_patch: np.ndarray):
        """Solve for one or more right-hand sides given on the patch dofs."""
        t0 = time.perf_counter()
        rhs_patch = np.atleast_2d(rhs_patch.T).T
        if self.backend == "stream":
            if self.S.shape[0] == 0:
                return np.zeros_like(rhs_patch), SolveReport(0.0, 0, 0, 0, 0, 0.0)
            b = self.D.T @ rhs_patch
            psi = self.lu.solve(b)
            res = np.linalg.norm(self.S @ psi - b) / max(np.linalg.norm(b), 1e-300)
            if not np.any(b):
                res = 0.0
            report = SolveReport(
                float(res), self.S.shape[0], 0, self.lu.L.nnz + self.lu.U.nnz, 0,
                time.perf_counter() - t0,
            )
            if res > self.tol:
                raise SolverFailure(f"stream corrector residual {res:.2e}", report)
            return self.D @ psi, report
        out = np.empty_like(rhs_patch)
        worst = None
        for j in range(rhs_patch.shape[1]):
            u, _, rep = solve(self.system, self.tol, g=rhs_patch[:, j])
            out[:, j] = u
            if worst is None or rep.residual > worst.residual:
                worst = rep
        worst.wall_time = time.perf_counter() - t0
        return out, worst


class _PatchCache:
    def __init__(self, size=4):
        self.size = size
        self.items: OrderedDict = OrderedDict()

    def get(self, disc, p, backend, tol) -> _PatchProblem:
        key = (p.coarse_triangles.tobytes(), backend)
        if key in self.items:
            self.items.move_to_end(key)
            return self.items[key]
        prob = _PatchProblem(disc, p, backend, tol)
        self.items[key] = prob
        if len(self.items) > self.size:
            self.items.popitem(last=False)
        return prob


def _check_backend(backend):
    if backend not in BACKENDS:
        raise DomainError(f"unknown corrector backend {backend!r}; use one of {BACKENDS}")


def element_corrector(
    disc: Discretization,
    T: int,
    k: int,
    source: np.ndarray,
    backend: str = "stream",
    tol: float = DEFAULT_TOL,
    _cache: _PatchCache | None = None,
) -> np.ndarray:
    """Localized element corrector ``G^T_{h,k} v`` as a global fine flux vector.

    ``source`` is a coarse flux vector (or a matrix of them, one per column);
    it is prolongated to the fine mesh before assembling ``a^T(v, .)``.
    """
    _check_backend(backend)
    source = np.asarray(source, dtype=float)
    single = source.ndim == 1
    src = source[:, None] if single else source
    if src.shape[0] != disc.VH.dim:
        raise SpaceMismatchError(f"source has {src.shape[0]} rows, coarse space has {disc.VH.dim}")
    p = patch(disc.hierarchy, T, k)
    cache = _cache or _PatchCache(1)
    try:
        prob = cache.get(disc, p, backend, tol)
        fine_src = disc.P.matrix @ src
        rhs = np.column_stack([disc.element_rhs(T, fine_src[:, j])[prob.dofs] for j in range(src.shape[1])])
        w, _ = prob.solve(rhs)
    except SolverFailure as exc:
        exc.context = (T, k)
        raise
    out = np.zeros((disc.Vh.dim, src.shape[1]))
    out[prob.dofs] = w
    return out[:, 0] if single else out


@dataclass
class CorrectorBasis:
    """Per coarse dof ``E`` the fine vector ``G_{h,k} Phi_E`` (column ``E`` of ``G``)."""

    G: sp.csc_matrix
    k: int
    supports: list[np.ndarray]
    reports: list[SolveReport] = field(default_factory=list, repr=False)
    backend: str = "stream"

    @property
    def size(self) -> int:
        return self.G.shape[1]

    def corrector(self, E: int) -> np.ndarray:
        return self.G[:, E].toarray().ravel()

    def save(self, path) -> None:
        """Store as ``.npz``: sparse columns plus the coarse patch of every edge."""
        lengths = np.array([len(s) for s in self.supports], dtype=np.int64)
        np.savez_compressed(
            path,
            data=self.G.data,
            indices=self.G.indices,
            indptr=self.G.indptr,
            shape=np.array(self.G.shape),
            k=np.array(self.k),
            support_lengths=lengths,
            supports=np.concatenate(self.supports) if self.supports else np.zeros(0, np.int64),
        )

    @classmethod
    def load(cls, path) -> CorrectorBasis:
        z = np.load(path)
        G = sp.csc_matrix((z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"]))
        supports = np.split(z["supports"], np.cumsum(z["support_lengths"])[:-1])
        return cls(G, int(z["k"]), supports)


def corrector_basis(
    disc: Discretization,
    k: int,
    backend: str = "stream",
    tol: float = DEFAULT_TOL,
    threads: int = 1,
) -> CorrectorBasis:
    """All localized basis correctors, one patch problem per coarse triangle."""
    _check_backend(backend)
    coarse = disc.coarse
    nT = coarse.n_triangles
    local_dofs = disc.VH.local_dofs

    def work(T, cache):
        cdofs = local_dofs[T][local_dofs[T] >= 0]
        if len(cdofs) == 0:
            return T, cdofs, None, None, None
        p = patch(disc.hierarchy, T, k)
        prob = cache.get(disc, p, backend, tol)
        fine_src = disc.P.matrix[:, cdofs].toarray()
        rhs = np.column_stack([disc.element_rhs(T, fine_src[:, j])[prob.dofs] for j in range(len(cdofs))])
        w, rep = prob.solve(rhs)
        return T, cdofs, prob.dofs, w, (rep, p.coarse_triangles)

    failures, results = [], []
    if threads > 1:
        caches: dict = {}

        def run(T):
            import threading

            c = caches.setdefault(threading.get_ident(), _PatchCache())
            try:
                return work(T, c)
            except SolverFailure as exc:
                return T, exc, None, None, None

        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(nT)))
    else:
        cache = _PatchCache()
        for T in range(nT):
            try:
                results.append(work(T, cache))
            except SolverFailure as exc:
                results.append((T, exc, None, None, None))

    rows, cols, vals, reports = [], [], [], []
    supports = [[] for _ in range(disc.VH.dim)]
    for T, cdofs, dofs, w, extra in results:
        if isinstance(cdofs, SolverFailure):
            failures.append((T, cdofs))
            continue
        if w is None:
            continue
        rep, ctris = extra
        reports.append(rep)
        for j, E in enumerate(cdofs):
            nz = w[:, j] != 0
            rows.append(dofs[nz])
            cols.append(np.full(int(nz.sum()), E))
            vals.append(w[nz, j])
            supports[E].append(ctris)
    if failures:
        detail = ", ".join(f"T={T}" for T, _ in failures)
        raise SolverFailure(f"corrector problems failed for {detail}", context=failures)
    G = sp.csc_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, int),
          np.concatenate(cols) if cols else np.zeros(0, int))),
        shape=(disc.Vh.dim, disc.VH.dim),
    )
    supports = [np.unique(np.concatenate(s)) if s else np.zeros(0, np.int64) for s in supports]
    return CorrectorBasis(G, k, supports, reports, backend)


# --- global solves -----------------------------------------------------------

@dataclass
class FlowSolution:
    flux: np.ndarray
    pressure: np.ndarray
    report: SolveReport
    coefficients: np.ndarray | None = None


def _mixed_solve(M, B, areas, source_integrals, g=None, tol=DEFAULT_TOL):
    system = build_constrained_system(
        M,
        [Constraint("div", B, rhs=-source_integrals, redundancy="gauge", weights=areas)],
        g=g,
    )
    u, mult, rep = solve(system, tol)
    return u, mult["div"], rep


def solve_reference(disc: Discretization, f: SourceField, tol: float = DEFAULT_TOL) -> FlowSolution:
    """Fine mixed solve with zero-mean pressure."""
    F = disc.source_integrals(f)
    u, p, rep = _mixed_solve(disc.M.matrix, disc.B.matrix, disc.fine.areas, F, tol=tol)
    return FlowSolution(u, p, rep)


def multiscale_matrix(disc: Discretization, basis: CorrectorBasis) -> sp.csr_matrix:
    """Columns ``Phi_E - G_{h,k} Phi_E`` spanning the multiscale space."""
    return (disc.P.matrix - basis.G).tocsr()


def _coarse_integrals(disc: Discretization, f: SourceField) -> np.ndarray:
    return disc.hierarchy.children @ disc.source_integrals(f)


def solve_multiscale(
    disc: Discretization,
    basis: CorrectorBasis,
    f: SourceField,
    source_correction: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
) -> FlowSolution:
    """Coarse mixed solve in the multiscale space, reconstructed on the fine mesh.

    With ``source_correction`` (a fine flux vector ``F f``) the flux equation
    gets the extra right-hand side ``-a(F f, v)`` and the returned flux is the
    corrected one, ``u_ms + F f``.
    """
    Phi = multiscale_matrix(disc, basis)
    MPhi = disc.M.matrix @ Phi
    K = (Phi.T @ MPhi).tocsr()
    K = 0.5 * (K + K.T)
    g = None
    if source_correction is not None:
        g = -(MPhi.T @ source_correction)
    c, p, rep = _mixed_solve(K, disc.BH.matrix, disc.coarse.areas, _coarse_integrals(disc, f), g, tol)
    u = Phi @ c
    if source_correction is not None:
        u = u + source_correction
    return FlowSolution(u, p, rep, c)


def solve_standard_coarse(disc: Discretization, f: SourceField, tol: float = DEFAULT_TOL) -> FlowSolution:
    """Plain coarse RT0 solve (coefficient integrated exactly), on the fine mesh."""
    P = disc.P.matrix
    K = (P.T @ disc.M.matrix @ P).tocsr()
    c, p, rep = _mixed_solve(K, disc.BH.matrix, disc.coarse.areas, _coarse_integrals(disc, f), tol=tol)
    return FlowSolution(P @ c, p, rep, c)


def relative_errors(disc: Discretization, reference: np.ndarray, approx: np.ndarray) -> tuple[float, float]:
    d = reference - approx
    return disc.energy(d) / disc.energy(reference), disc.l2(d) / disc.l2(reference)


# --- source correctors ---------------------------------------------------------

@dataclass
class SourceCorrector:
    T: int
    ell: int
    flux: np.ndarray
    support: np.ndarray
    report: SolveReport


def source_corrector(
    disc: Discretization, T: int, ell: int, f: SourceField | np.ndarray, tol: float = DEFAULT_TOL
) -> SourceCorrector:
    """Local fine flux correction for a source ``f`` supported in coarse triangle ``T``.

    ``f`` is a source field or its integrals over the fine triangles.

    Flux unknowns are the fine dofs interior to ``U_ell(T)`` with vanishing
    coarse interpolation on the coarse edges interior to the patch; the
    pressure multiplier ranges over fine piecewise constants with zero mean
    on every coarse triangle of the patch and is discarded.  For ``ell = 0``
    the patch has no interior coarse edge, so no interpolation row appears.
    """
    if ell < 0:
        raise DomainError(f"ell must be nonnegative, got {ell}")
    p = patch(disc.hierarchy, T, ell)
    F = np.asarray(f, dtype=float) if isinstance(f, np.ndarray) else disc.source_integrals(f)
    if F.shape != (disc.fine.n_triangles,):
        raise SpaceMismatchError(f"source integrals have shape {F.shape}, fine mesh has {disc.fine.n_triangles} triangles")
    outside = np.ones(disc.coarse.n_triangles, dtype=bool)
    outside[T] = False
    if np.any(F[outside[disc.hierarchy.parent]] != 0):
        raise DomainError(f"source is not supported inside coarse triangle {T}")
    tris = p.fine_triangles
    dofs = disc.Vh.edge_to_dof[p.interior_fine_edges]
    n = disc.Vh.dim
    if not np.any(F):
        return SourceCorrector(T, ell, np.zeros(n), p.coarse_triangles, SolveReport(0.0, len(dofs), 0, 0, 0, 0.0))
    B = disc.B.matrix[tris][:, dofs]
    parents = disc.hierarchy.parent[tris]
    # right-hand side tested against the zero-mean pressures of each coarse triangle
    r = -F[tris]
    coarse_sum = np.bincount(parents, weights=r, minlength=disc.coarse.n_triangles)
    r = r - disc.fine.areas[tris] / disc.coarse.areas[parents] * coarse_sum[parents]
    order = np.argsort(parents, kind="stable")
    bounds = np.searchsorted(parents[order], np.unique(parents))
    groups = np.split(order, bounds[1:])
    cdofs = disc.VH.edge_to_dof[p.interior_coarse_edges]
    blocks = [Constraint("div", B, rhs=r, groups=groups)]
    if len(cdofs):
        blocks.append(Constraint("PiH", disc.PiH.matrix[cdofs][:, dofs]))
    M = disc.M.matrix[dofs][:, dofs]
    system = build_constrained_system(M, blocks)
    try:
        w, _, rep = solve(system, tol)
    except SolverFailure as exc:
        exc.context = (T, ell)
        raise
    out = np.zeros(n)
    out[dofs] = w
    return SourceCorrector(T, ell, out, p.coarse_triangles, rep)


def source_triangles(disc: Discretization, f: SourceField) -> np.ndarray:
    """Coarse triangles on which ``f`` does not vanish."""
    F = np.abs(disc.source_integrals(f))
    coarse = np.bincount(disc.hierarchy.parent, weights=F, minlength=disc.coarse.n_triangles)
    return np.flatnonzero(coarse > 0)


def split_integrals(disc: Discretization, F: np.ndarray, T: int) -> np.ndarray:
    """Fine-triangle source integrals ``F`` restricted to coarse triangle ``T``."""
    return np.where(disc.hierarchy.parent == T, F, 0.0)


def solve_multiscale_corrected(
    disc: Discretization,
    basis: CorrectorBasis,
    f: SourceField,
    ell: int,
    tol: float = DEFAULT_TOL,
) -> tuple[FlowSolution, list[SourceCorrector]]:
    """Multiscale solve with localized source corrections on ``ell``-layer patches."""
    F = disc.source_integrals(f)
    correctors = [
        source_corrector(disc, int(T), ell, split_integrals(disc, F, int(T)), tol)
        for T in source_triangles(disc, f)
    ]
    total = np.zeros(disc.Vh.dim)
    for c in correctors:
        total += c.flux
    return solve_multiscale(disc, basis, f, source_correction=total, tol=tol), correctors


# --- patch size, decay, inf-sup ------------------------------------------------

def choose_k(H: float, h: float, C: float, k_max: int | None = None) -> int:
    """``C (1 + log2(H/h))^(1/2) log2(1/H)`` rounded half away from zero, at least 1."""
    if not (0 < h < H < 1):
        raise DomainError(f"need 0 < h < H < 1, got h={h}, H={H}")
    if C <= 0:
        raise DomainError(f"C must be positive, got {C}")
    x = C * math.sqrt(1.0 + math.log2(H / h)) * math.log2(1.0 / H)
    k = max(1, int(math.floor(x + 0.5)))
    if k_max is not None:
        k = min(k, k_max)
    return k


@dataclass
class DecayReport:
    T: int
    ks: np.ndarray
    errors: np.ndarray
    ideal_norm: float
    theta: float
    lam: float
    l2_errors: np.ndarray | None = None
    ideal_l2: float = float("nan")
    div_residuals: np.ndarray | None = None

    def is_nonincreasing(self, tol: float = 1e-10) -> bool:
        return bool(np.all(np.diff(self.errors) <= tol * self.ideal_norm))


def decay_profile(
    disc: Discretization,
    T: int,
    v: np.ndarray,
    k_max: int,
    backend: str = "stream",
    tol: float = DEFAULT_TOL,
) -> DecayReport:
    """Truncation errors ``|||G^T v - G^T_k v|||`` for ``k = 1..k_max``.

    The per-layer rate comes from a least-squares fit of ``log d_k`` against
    ``k / lambda(H/h)`` over the layers that have not reached solver accuracy.
    """
    if k_max < 1:
        raise DomainError("k_max must be at least 1")
    hier = disc.hierarchy
    k_sat = hier.saturation_layers
    ideal = element_corrector(disc, T, k_sat, v, backend, tol)
    ideal_norm = disc.energy(ideal)
    ks = np.arange(1, k_max + 1)
    errs, l2s, divs = [], [], []
    for k in ks:
        w = element_corrector(disc, T, int(k), v, backend, tol)
        errs.append(disc.energy(ideal - w))
        l2s.append(disc.l2(ideal - w))
        divs.append(float(np.linalg.norm(disc.B.matrix @ w)))
    errs = np.array(errs)
    lam = fem.lambda_factor(hier.H / hier.h, "two")
    usable = errs > 1e3 * tol * max(ideal_norm, 1e-300)
    theta = float("nan")
    if usable.sum() >= 2:
        slope = np.polyfit(ks[usable] / lam, np.log(errs[usable]), 1)[0]
        theta = float(math.exp(slope))
    return DecayReport(T, ks, errs, ideal_norm, theta, lam, np.array(l2s), disc.l2(ideal), np.array(divs))


def hdiv_norm_matrix(disc: Discretization) -> sp.csr_matrix:
    """``||v||_L2^2 + ||div v||_L2^2`` on the fine flux space."""
    B = disc.B.matrix
    return (disc.l2_mass().matrix + B.T @ sp.diags(1.0 / disc.fine.areas) @ B).tocsr()


def infsup_estimate(B, flux_norm, pressure_mass, rel_tol: float = 1e-10) -> float:
    """Smallest nonzero value of ``sup_v b(v, q) / (||v|| ||q||)`` (dense).

    Eigenvalues of ``B N^-1 B^T q = s^2 M_p q``; the zero eigenvalue of the
    constant pressure is skipped.  Returns 0.0 when no nonzero value exists.
    """
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    N = flux_norm.toarray() if sp.issparse(flux_norm) else np.asarray(flux_norm)
    Mp = pressure_mass.toarray() if sp.issparse(pressure_mass) else np.asarray(pressure_mass)
    if B.shape[1] != N.shape[0] or B.shape[0] != Mp.shape[0]:
        raise SpaceMismatchError(f"B {B.shape}, flux norm {N.shape}, pressure mass {Mp.shape}")
    if B.shape[0] == 0 or B.shape[1] == 0:
        return 0.0
    S = B @ np.linalg.solve(N, B.T)
    S = 0.5 * (S + S.T)
    vals = scipy.linalg.eigh(S, Mp, eigvals_only=True)
    top = max(float(vals.max()), 0.0)
    nonzero = vals[vals > rel_tol * top] if top > 0 else np.zeros(0)
    if len(nonzero) == 0:
        return 0.0
    return float(math.sqrt(nonzero.min()))


def multiscale_infsup(disc: Discretization, basis: CorrectorBasis | None) -> float:
    """Inf-sup probe of (multiscale or, with ``basis=None``, standard coarse flux, Q_H)."""
    Phi = disc.P.matrix if basis is None else multiscale_matrix(disc, basis)
    N = (Phi.T @ hdiv_norm_matrix(disc) @ Phi).toarray()
    return infsup_estimate(disc.BH.matrix, N, disc.QH.mass().matrix)
