"""Structured triangulations, nested hierarchies and coarse element patches.

Every mesh is built from a grid of rectangular cells, each cell split into
two triangles by the diagonal running from its upper-left to its lower-right
corner.  Refining a cell into ``m x m`` sub-cells with the same diagonal
direction reproduces the red refinement for ``m = 2**n`` and keeps the fine
mesh nested in the coarse one for every integer ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import ConfigurationError


@dataclass(frozen=True)
class Domain:
    """Union of ``nx * ny`` base cells covering ``[0, width] x [0, height]``.

    ``excluded`` lists base cells ``(i, j)`` that are not part of the domain.
    """

    name: str
    nx: int
    ny: int
    width: float
    height: float
    excluded: tuple[tuple[int, int], ...] = ()

    @property
    def area(self) -> float:
        n_active = self.nx * self.ny - len(self.excluded)
        return n_active * (self.width / self.nx) * (self.height / self.ny)

    def cell_size(self, level: int) -> float:
        """Horizontal cell side length at ``level`` (the mesh-size label h or H)."""
        return self.width / self.nx / 2**level


UNIT_SQUARE = Domain("unit_square", 1, 1, 1.0, 1.0)
L_SHAPE = Domain("l_shape", 2, 2, 1.0, 1.0, excluded=((1, 0),))


def rect(nx: int, ny: int, width: float, height: float) -> Domain:
    if nx < 1 or ny < 1:
        raise ConfigurationError(f"rect needs nx, ny >= 1, got {nx}, {ny}")
    if width <= 0 or height <= 0:
        raise ConfigurationError("rect needs positive width and height")
    return Domain("rect", nx, ny, float(width), float(height))


# 6 x 22 coarse cells of 0.2 x 0.1; the 60 x 220 data grid is factor 10
SPE10_DOMAIN = rect(6, 22, 1.2, 2.2)


def domain_from_tag(tag: str | Domain) -> Domain:
    """Resolve ``unit_square``, ``l_shape``, ``spe10`` or ``rect:NXxNY:WxH``."""
    if isinstance(tag, Domain):
        return tag
    if tag == "unit_square":
        return UNIT_SQUARE
    if tag == "l_shape":
        return L_SHAPE
    if tag == "spe10":
        return SPE10_DOMAIN
    if tag.startswith("rect:"):
        try:
            _, counts, size = tag.split(":")
            nx, ny = (int(s) for s in counts.split("x"))
            w, h = (float(s) for s in size.split("x"))
        except ValueError as exc:
            raise ConfigurationError(f"malformed rect tag {tag!r}") from exc
        return rect(nx, ny, w, h)
    raise ConfigurationError(f"unsupported domain {tag!r}")


@dataclass(eq=False)
class TriMesh:
    """Conforming triangulation with oriented edges.

    Edge ``j`` of triangle ``t`` is the edge opposite its local vertex ``j``.
    Edges are stored with the lower vertex index first and sorted
    lexicographically; the edge normal is the unit tangent (lower to higher
    vertex) rotated 90 degrees counterclockwise.
    """

    domain: Domain
    factor: int
    vertices: np.ndarray
    triangles: np.ndarray
    grid_index: np.ndarray  # integer (ix, iy) of every vertex on the cell grid
    cell_of_triangle: np.ndarray  # (cx, cy, upper) per triangle
    edges: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    edge_tris: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        tri = self.triangles
        nv = len(self.vertices)
        a = tri[:, [1, 2, 0]].ravel()
        b = tri[:, [2, 0, 1]].ravel()
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys, inverse = np.unique(lo.astype(np.int64) * nv + hi, return_inverse=True)
        self.edges = np.column_stack([keys // nv, keys % nv]).astype(np.int64)
        self.tri_edges = inverse.reshape(-1, 3)

        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_tris = np.full((len(keys), 2), -1, dtype=np.int64)
        owners = order // 3
        edge_tris[sorted_edges[first], 0] = owners[first]
        edge_tris[sorted_edges[~first], 1] = owners[~first]
        self.edge_tris = edge_tris

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def normals(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        d /= self.edge_lengths[:, None]
        return np.column_stack([-d[:, 1], d[:, 0]])

    @cached_property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def tri_edge_signs(self) -> np.ndarray:
        """+1 where the global edge normal points out of the triangle."""
        tri = self.triangles
        a = tri[:, [1, 2, 0]]
        b = tri[:, [2, 0, 1]]
        # the interior of a counterclockwise triangle lies left of a -> b,
        # so the rotated lower->higher tangent is inward exactly when a < b
        return np.where(a < b, -1.0, 1.0)

    @cached_property
    def vertex_triangle(self) -> sp.csr_matrix:
        """Incidence matrix (vertices x triangles)."""
        nt = self.n_triangles
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(nt), 3)
        return sp.csr_matrix(
            (np.ones(3 * nt), (rows, cols)), shape=(self.n_vertices, nt)
        )

    @cached_property
    def vertex_neighbors(self) -> sp.csr_matrix:
        """Triangle adjacency through shared vertices (diagonal included)."""
        vt = self.vertex_triangle
        adj = (vt.T @ vt).tocsr()
        adj.data[:] = 1.0
        return adj

    def dump(self, path) -> None:
        """Write the plain-text ``v x y`` / ``t i j k`` debug format."""
        with open(path, "w") as fh:
            for x, y in self.vertices:
                fh.write(f"v {x!r} {y!r}\n")
            for i, j, k in self.triangles:
                fh.write(f"t {i} {j} {k}\n")


def _grid_mesh(domain: Domain, factor: int) -> TriMesh:
    nx, ny = domain.nx * factor, domain.ny * factor
    dx, dy = domain.width / nx, domain.height / ny
    active = np.ones((nx, ny), dtype=bool)
    for i, j in domain.excluded:
        active[i * factor:(i + 1) * factor, j * factor:(j + 1) * factor] = False

    # cells in row-major order, x fastest
    cy, cx = np.nonzero(active.T)
    used = np.zeros((nx + 1, ny + 1), dtype=bool)
    for ox in (0, 1):
        for oy in (0, 1):
            used[cx + ox, cy + oy] = True
    vy, vx = np.nonzero(used.T)
    number = np.full((nx + 1, ny + 1), -1, dtype=np.int64)
    number[vx, vy] = np.arange(len(vx))

    v00 = number[cx, cy]
    v10 = number[cx + 1, cy]
    v01 = number[cx, cy + 1]
    v11 = number[cx + 1, cy + 1]
    lower = np.column_stack([v00, v10, v01])
    upper = np.column_stack([v10, v11, v01])
    triangles = np.empty((2 * len(cx), 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    cells = np.empty((2 * len(cx), 3), dtype=np.int64)
    cells[0::2] = np.column_stack([cx, cy, np.zeros_like(cx)])
    cells[1::2] = np.column_stack([cx, cy, np.ones_like(cx)])

    vertices = np.column_stack([vx * dx, vy * dy]).astype(float)
    grid_index = np.column_stack([vx, vy])
    return TriMesh(domain, factor, vertices, triangles, grid_index, cells)


def build_structured_mesh(domain: str | Domain, level: int) -> TriMesh:
    """Mesh of ``domain`` whose cells have side ``2**-level`` times the base cell."""
    domain = domain_from_tag(domain)
    if level < 0:
        raise ConfigurationError(f"level must be nonnegative, got {level}")
    return _grid_mesh(domain, 2**level)


@dataclass(eq=False)
class MeshHierarchy:
    coarse: TriMesh
    fine: TriMesh
    levels: tuple[int | None, int | None]
    parent: np.ndarray = field(init=False)
    coarse_edge_of_fine: np.ndarray = field(init=False)
    fine_edge_sign: np.ndarray = field(init=False)
    coarse_vertex_to_fine: np.ndarray = field(init=False)

    def __post_init__(self):
        c, f = self.coarse, self.fine
        if f.factor % c.factor:
            raise ConfigurationError("fine factor must be a multiple of the coarse factor")
        m = f.factor // c.factor
        self.ratio = m

        # locate fine centroids in coarse cells, in units of fine cells
        g = f.grid_index[f.triangles].mean(axis=1)
        cell = np.floor(g / m).astype(np.int64)
        local = g / m - cell
        upper = (local.sum(axis=1) > 1.0).astype(np.int64)
        lookup = {
            (int(x), int(y), int(u)): t
            for t, (x, y, u) in enumerate(c.cell_of_triangle)
        }
        self.parent = np.array(
            [lookup[(x, y, u)] for x, y, u in zip(cell[:, 0], cell[:, 1], upper)],
            dtype=np.int64,
        )

        cg = c.grid_index * m
        fg = f.grid_index
        key = {(int(x), int(y)): i for i, (x, y) in enumerate(fg)}
        self.coarse_vertex_to_fine = np.array(
            [key[(int(x), int(y))] for x, y in cg], dtype=np.int64
        )

        # a fine edge lies on a coarse edge of its parent iff both endpoints
        # are collinear with that coarse edge (exact integer arithmetic)
        owner = self.parent[f.edge_tris[:, 0]]
        fa = fg[f.edges[:, 0]]
        fb = fg[f.edges[:, 1]]
        coarse_edge = np.full(f.n_edges, -1, dtype=np.int64)
        for j in range(3):
            ce = c.tri_edges[owner, j]
            ca = cg[c.edges[ce, 0]]
            cb = cg[c.edges[ce, 1]]
            d = cb - ca
            cross_a = d[:, 0] * (fa[:, 1] - ca[:, 1]) - d[:, 1] * (fa[:, 0] - ca[:, 0])
            cross_b = d[:, 0] * (fb[:, 1] - ca[:, 1]) - d[:, 1] * (fb[:, 0] - ca[:, 0])
            on = (cross_a == 0) & (cross_b == 0)
            coarse_edge[on] = ce[on]
        self.coarse_edge_of_fine = coarse_edge
        sign = np.zeros(f.n_edges)
        on = coarse_edge >= 0
        sign[on] = np.sign(
            np.einsum("ij,ij->i", f.normals[on], c.normals[coarse_edge[on]])
        )
        self.fine_edge_sign = sign

    def fine_edges_of(self, coarse_edge: int) -> tuple[np.ndarray, np.ndarray]:
        """Fine edges on ``coarse_edge`` ordered from its lower vertex, with signs."""
        idx = np.flatnonzero(self.coarse_edge_of_fine == coarse_edge)
        start = self.coarse.vertices[self.coarse.edges[coarse_edge, 0]]
        dist = np.linalg.norm(self.fine.midpoints[idx] - start, axis=1)
        idx = idx[np.argsort(dist)]
        return idx, self.fine_edge_sign[idx]

    @cached_property
    def children(self) -> sp.csr_matrix:
        """Incidence (coarse triangles x fine triangles)."""
        nf = self.fine.n_triangles
        return sp.csr_matrix(
            (np.ones(nf), (self.parent, np.arange(nf))),
            shape=(self.coarse.n_triangles, nf),
        )

    @cached_property
    def saturation_layers(self) -> int:
        """Smallest k for which every patch U_k(T) is the whole coarse mesh."""
        adj = self.coarse.vertex_neighbors
        dist = csgraph.shortest_path(adj, unweighted=True, directed=False)
        return max(int(dist.max()), 0)

    @property
    def H(self) -> float:
        return self.coarse.domain.width / self.coarse.domain.nx / self.coarse.factor

    @property
    def h(self) -> float:
        return self.fine.domain.width / self.fine.domain.nx / self.fine.factor


def build_hierarchy(domain: str | Domain, coarse_level: int, fine_level: int) -> MeshHierarchy:
    domain = domain_from_tag(domain)
    if coarse_level < 0:
        raise ConfigurationError(f"coarse level must be nonnegative, got {coarse_level}")
    if fine_level <= coarse_level:
        raise ConfigurationError(
            f"fine level {fine_level} must exceed coarse level {coarse_level}"
        )
    return MeshHierarchy(
        _grid_mesh(domain, 2**coarse_level),
        _grid_mesh(domain, 2**fine_level),
        (coarse_level, fine_level),
    )


def build_hierarchy_by_factor(domain: str | Domain, coarse_factor: int, fine_factor: int) -> MeshHierarchy:
    """Hierarchy with arbitrary integer subdivision of the base cells.

    Used where the refinement ratio is not a power of two (the SPE10 setup
    subdivides every coarse cell into 10 x 10 fine cells).
    """
    domain = domain_from_tag(domain)
    if coarse_factor < 1 or fine_factor <= coarse_factor or fine_factor % coarse_factor:
        raise ConfigurationError(
            f"fine factor {fine_factor} must be a proper multiple of coarse factor {coarse_factor}"
        )
    return MeshHierarchy(
        _grid_mesh(domain, coarse_factor), _grid_mesh(domain, fine_factor), (None, None)
    )


@dataclass(eq=False)
class Patch:
    hierarchy: MeshHierarchy
    seed: int
    k: int
    coarse_triangles: np.ndarray

    @cached_property
    def coarse_mask(self) -> np.ndarray:
        mask = np.zeros(self.hierarchy.coarse.n_triangles, dtype=bool)
        mask[self.coarse_triangles] = True
        return mask

    @cached_property
    def fine_mask(self) -> np.ndarray:
        return self.coarse_mask[self.hierarchy.parent]

    @cached_property
    def fine_triangles(self) -> np.ndarray:
        return np.flatnonzero(self.fine_mask)

    @cached_property
    def interior_fine_edges(self) -> np.ndarray:
        """Fine edges with both incident triangles inside the patch."""
        return _interior_edges(self.hierarchy.fine, self.fine_mask)

    @cached_property
    def interior_coarse_edges(self) -> np.ndarray:
        return _interior_edges(self.hierarchy.coarse, self.coarse_mask)

    @property
    def is_saturated(self) -> bool:
        return len(self.coarse_triangles) == self.hierarchy.coarse.n_triangles


def _interior_edges(mesh: TriMesh, mask: np.ndarray) -> np.ndarray:
    et = mesh.edge_tris
    inside = (et[:, 1] >= 0) & mask[et[:, 0]] & mask[np.maximum(et[:, 1], 0)]
    return np.flatnonzero(inside)


def patch_mask(mesh: TriMesh, seed: int, k: int) -> np.ndarray:
    if k < 0:
        raise ConfigurationError(f"layer count must be nonnegative, got {k}")
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[seed] = True
    adj = mesh.vertex_neighbors
    for _ in range(k):
        grown = (adj @ mask.astype(float)) > 0
        if grown.sum() == mask.sum():
            break
        mask = grown
    return mask


def patch(hierarchy: MeshHierarchy, T: int, k: int) -> Patch:
    """Coarse element patch U_k(T) by k-fold vertex-neighborhood closure."""
    if not 0 <= T < hierarchy.coarse.n_triangles:
        raise ConfigurationError(f"coarse triangle {T} out of range")
    mask = patch_mask(hierarchy.coarse, T, k)
    return Patch(hierarchy, T, k, np.flatnonzero(mask))
