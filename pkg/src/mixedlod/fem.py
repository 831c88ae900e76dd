"""Lowest-order Raviart-Thomas / piecewise-constant spaces and operators.

On a triangle ``t`` with vertices ``P_0, P_1, P_2`` the local basis function
attached to the edge ``e_i`` opposite ``P_i`` is

    phi_i(x) = s_i |e_i| / (2 |t|) * (x - P_i),

with ``s_i = +1`` when the global normal of ``e_i`` points out of ``t``.  Its
mean normal flux is one on ``e_i`` (w.r.t. the global normal) and zero on the
two other edges.  Only interior edges carry degrees of freedom, which enforces
zero normal flux on the domain boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, DomainError, SpaceMismatchError
from .mesh import MeshHierarchy, TriMesh

FINE_FLUX = "flux:fine"
COARSE_FLUX = "flux:coarse"
FINE_PRESSURE = "pressure:fine"
COARSE_PRESSURE = "pressure:coarse"


@dataclass(frozen=True)
class Operator:
    """Sparse matrix tagged with the spaces of its rows and columns."""

    matrix: sp.csr_matrix
    rows: str
    cols: str

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def T(self) -> Operator:
        return Operator(self.matrix.T.tocsr(), self.cols, self.rows)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            if self.cols != other.rows:
                raise SpaceMismatchError(
                    f"cannot apply {self.rows}<-{self.cols} to {other.rows}<-{other.cols}"
                )
            return Operator((self.matrix @ other.matrix).tocsr(), self.rows, other.cols)
        return self.matrix @ other

    def __mul__(self, scalar):
        return Operator(self.matrix * scalar, self.rows, self.cols)

    __rmul__ = __mul__

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dump(self, path) -> None:
        """Coordinate text format, one ``row col value`` line per stored entry."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")


class RTSpace:
    def __init__(self, mesh: TriMesh, tag: str = FINE_FLUX):
        self.mesh = mesh
        self.tag = tag
        self.dofs = np.flatnonzero(~mesh.boundary)
        self.edge_to_dof = np.full(mesh.n_edges, -1, dtype=np.int64)
        self.edge_to_dof[self.dofs] = np.arange(len(self.dofs))

    @property
    def dim(self) -> int:
        return len(self.dofs)

    @cached_property
    def local_dofs(self) -> np.ndarray:
        """(n_triangles, 3) dof index of each local edge, -1 on the boundary."""
        return self.edge_to_dof[self.mesh.tri_edges]

    @cached_property
    def basis_scale(self) -> np.ndarray:
        """``s_i |e_i| / (2|t|)`` for every triangle and local edge."""
        m = self.mesh
        return m.tri_edge_signs * m.edge_lengths[m.tri_edges] / (2.0 * m.areas[:, None])

    def local_values(self, v: np.ndarray) -> np.ndarray:
        ld = self.local_dofs
        out = np.where(ld >= 0, v[np.maximum(ld, 0)], 0.0)
        return out

    def evaluate(self, v: np.ndarray, triangles: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Flux vectors at ``points[i]`` inside ``triangles[i]``."""
        p = self.mesh.vertices[self.mesh.triangles[triangles]]
        coeff = self.local_values(v)[triangles] * self.basis_scale[triangles]
        diff = points[:, None, :] - p
        return np.einsum("ti,tid->td", coeff, diff)

    def at_centroids(self, v: np.ndarray) -> np.ndarray:
        t = np.arange(self.mesh.n_triangles)
        return self.evaluate(v, t, self.mesh.centroids)


class PressureSpace:
    """Piecewise constants; solves pin the area-weighted mean to zero."""

    def __init__(self, mesh: TriMesh, tag: str = FINE_PRESSURE):
        self.mesh = mesh
        self.tag = tag

    @property
    def dim(self) -> int:
        return self.mesh.n_triangles

    @property
    def gauge_weights(self) -> np.ndarray:
        return self.mesh.areas

    def mass(self) -> Operator:
        return Operator(sp.diags(self.mesh.areas).tocsr(), self.tag, self.tag)


def element_mass_matrices(space: RTSpace, A) -> np.ndarray:
    """(n_triangles, 3, 3) local matrices of ``(A^-1 phi_i, phi_j)_t``.

    Uses the three-point edge-midpoint rule, exact for the quadratic
    integrands of products of RT0 functions on each triangle.
    """
    mesh = space.mesh
    A = np.broadcast_to(np.asarray(A, dtype=float), (mesh.n_triangles,))
    if np.any(A <= 0):
        raise DomainError("coefficient must be strictly positive")
    p = mesh.vertices[mesh.triangles]
    mids = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])
    # diff[t, j, i] = midpoint of local edge j minus vertex i
    diff = mids[:, :, None, :] - p[:, None, :, :]
    gram = np.einsum("tjid,tjkd->tik", diff, diff)
    c = space.basis_scale
    weight = mesh.areas / 3.0 / A
    return gram * c[:, :, None] * c[:, None, :] * weight[:, None, None]


def _scatter(space: RTSpace, local: np.ndarray, rows_space: RTSpace | None = None) -> sp.csr_matrix:
    ld = space.local_dofs
    rows = np.repeat(ld, 3, axis=1).ravel()
    cols = np.tile(ld, (1, 3)).ravel()
    vals = local.reshape(len(ld), 9).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(space.dim, space.dim)
    )


def assemble_weighted_mass(space: RTSpace, A) -> Operator:
    """Matrix of ``a(u, v) = (A^-1 u, v)`` on the interior-edge basis.

    ``A`` holds one positive value per triangle (or a scalar).
    """
    return Operator(_scatter(space, element_mass_matrices(space, A)), space.tag, space.tag)


def assemble_div(flux_space: RTSpace, pressure_space: PressureSpace) -> Operator:
    """``B[t, e] = (div phi_e, 1)_t = +-|e|``."""
    mesh = flux_space.mesh
    if pressure_space.mesh is not mesh:
        raise SpaceMismatchError("flux and pressure spaces live on different meshes")
    ld = flux_space.local_dofs
    vals = mesh.tri_edge_signs * mesh.edge_lengths[mesh.tri_edges]
    rows = np.repeat(np.arange(mesh.n_triangles), 3)
    keep = ld.ravel() >= 0
    B = sp.csr_matrix(
        (vals.ravel()[keep], (rows[keep], ld.ravel()[keep])),
        shape=(mesh.n_triangles, flux_space.dim),
    )
    return Operator(B, pressure_space.tag, flux_space.tag)


def divergence(B: Operator, v: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Piecewise-constant divergence values of ``v``."""
    return (B @ v) / mesh.areas


def coarse_spaces(hierarchy: MeshHierarchy):
    return (
        RTSpace(hierarchy.coarse, COARSE_FLUX),
        PressureSpace(hierarchy.coarse, COARSE_PRESSURE),
    )


def fine_spaces(hierarchy: MeshHierarchy):
    return RTSpace(hierarchy.fine, FINE_FLUX), PressureSpace(hierarchy.fine, FINE_PRESSURE)


def prolongation(hierarchy: MeshHierarchy) -> Operator:
    """Exact embedding V_H -> V_h: fine dofs are ``v_H(mid e) . n_e``."""
    fine, coarse = hierarchy.fine, hierarchy.coarse
    Vh = RTSpace(fine, FINE_FLUX)
    VH = RTSpace(coarse, COARSE_FLUX)
    e = Vh.dofs
    owner = hierarchy.parent[fine.edge_tris[e, 0]]
    p = coarse.vertices[coarse.triangles[owner]]
    diff = fine.midpoints[e][:, None, :] - p
    vals = np.einsum("eid,ed->ei", diff, fine.normals[e]) * VH.basis_scale[owner]
    cols = VH.local_dofs[owner]
    rows = np.repeat(np.arange(len(e))[:, None], 3, axis=1)
    keep = (cols >= 0) & (np.abs(vals) > 0)
    P = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(Vh.dim, VH.dim))
    return Operator(P, FINE_FLUX, COARSE_FLUX)


def interpolation_PiH(hierarchy: MeshHierarchy) -> Operator:
    """Nodal coarse RT interpolation: mean normal flux over each coarse edge."""
    fine, coarse = hierarchy.fine, hierarchy.coarse
    Vh = RTSpace(fine, FINE_FLUX)
    VH = RTSpace(coarse, COARSE_FLUX)
    ce = hierarchy.coarse_edge_of_fine
    fe = np.flatnonzero(ce >= 0)
    rows = VH.edge_to_dof[ce[fe]]
    cols = Vh.edge_to_dof[fe]
    keep = rows >= 0
    fe, rows, cols = fe[keep], rows[keep], cols[keep]
    vals = hierarchy.fine_edge_sign[fe] * fine.edge_lengths[fe] / coarse.edge_lengths[ce[fe]]
    Pi = sp.csr_matrix((vals, (rows, cols)), shape=(VH.dim, Vh.dim))
    return Operator(Pi, COARSE_FLUX, FINE_FLUX)


def projection_PH(hierarchy: MeshHierarchy) -> Operator:
    """L2 projection of fine piecewise constants onto coarse ones."""
    fine, coarse = hierarchy.fine, hierarchy.coarse
    t = np.arange(fine.n_triangles)
    T = hierarchy.parent
    vals = fine.areas / coarse.areas[T]
    P = sp.csr_matrix((vals, (T, t)), shape=(coarse.n_triangles, fine.n_triangles))
    return Operator(P, COARSE_PRESSURE, FINE_PRESSURE)


def injection(hierarchy: MeshHierarchy) -> Operator:
    """Coarse piecewise constants viewed on the fine mesh."""
    nf = hierarchy.fine.n_triangles
    I = sp.csr_matrix(
        (np.ones(nf), (np.arange(nf), hierarchy.parent)),
        shape=(nf, hierarchy.coarse.n_triangles),
    )
    return Operator(I, FINE_PRESSURE, COARSE_PRESSURE)


def prolong(hierarchy: MeshHierarchy, coarse_flux: np.ndarray) -> np.ndarray:
    return prolongation(hierarchy) @ coarse_flux


def energy_norm(M: Operator, v: np.ndarray) -> float:
    """``sqrt(v^T M v)``; M is any assembled weighted mass matrix."""
    q = float(v @ (M @ v))
    scale = float(v @ v) * (abs(M.matrix).max() if M.matrix.nnz else 0.0)
    if q < -1e-12 * max(scale, 1.0):
        raise AssemblyError(f"negative quadratic form {q:.3e}")
    return math.sqrt(max(q, 0.0))


def element_energies(space: RTSpace, local_mass: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Squared energy of ``v`` on every triangle separately."""
    vl = space.local_values(v)
    return np.einsum("ti,tij,tj->t", vl, local_mass, vl)


def subdomain_energy_norm(space: RTSpace, local_mass: np.ndarray, v: np.ndarray, triangles) -> float:
    e = element_energies(space, local_mass, v)[np.asarray(triangles)]
    return math.sqrt(max(float(e.sum()), 0.0))


def l2_norm_flux(space: RTSpace, v: np.ndarray) -> float:
    return math.sqrt(max(float(element_energies(space, element_mass_matrices(space, 1.0), v).sum()), 0.0))


def l2_norm_pressure(space: PressureSpace, q: np.ndarray) -> float:
    return math.sqrt(float(np.sum(space.mesh.areas * q * q)))


def div_l2_error(B: Operator, v: np.ndarray, mesh: TriMesh, target: np.ndarray) -> float:
    """``||div v - target||_L2`` with ``target`` given as per-triangle values."""
    d = divergence(B, v, mesh) - target
    return math.sqrt(float(np.sum(mesh.areas * d * d)))


def lambda_factor(H_over_h: float, base: str = "natural") -> float:
    """``(1 + log(H/h))**0.5`` with the logarithm in base e or 2."""
    if H_over_h < 1:
        raise DomainError(f"H/h must be >= 1, got {H_over_h}")
    if base == "natural":
        log = math.log(H_over_h)
    elif base == "two":
        log = math.log2(H_over_h)
    else:
        raise DomainError(f"unknown logarithm base {base!r}")
    return math.sqrt(1.0 + log)
