"""Piecewise-constant coefficients and piecewise-affine sources.

Random coefficients use numpy's Philox4x64-10 counter-based bit generator
(``numpy.random.Philox``) seeded with the user seed, and draw the cell values
row by row (x fastest), so a given seed yields bit-identical fields on every
platform numpy supports.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, DomainError, ParseError
from .mesh import Domain, MeshHierarchy, TriMesh

ALIGN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CellGridField:
    """Scalar coefficient ``A``, constant on the cells of a rectangular grid.

    ``values[j, i]`` belongs to the cell in column ``i`` (x) and row ``j`` (y).
    A 1 x 1 field with ``width = height = inf`` is constant everywhere.
    """

    values: np.ndarray
    x0: float = 0.0
    y0: float = 0.0
    width: float = 1.0
    height: float = 1.0
    name: str = "field"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise DomainError("field values must be a nonempty 2D array")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise DomainError("coefficient values must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.width)

    @property
    def alpha(self) -> float:
        return 1.0 / float(self.values.max())

    @property
    def beta(self) -> float:
        return 1.0 / float(self.values.min())

    @property
    def contrast(self) -> float:
        return float(self.values.max() / self.values.min())

    def value_at(self, x: float, y: float) -> float:
        if self.unbounded:
            return float(self.values[0, 0])
        i = int(math.floor((x - self.x0) / self.width * self.nx))
        j = int(math.floor((y - self.y0) / self.height * self.ny))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise DomainError(f"point ({x}, {y}) outside the field grid")
        return float(self.values[j, i])

    def on_mesh(self, mesh: TriMesh) -> np.ndarray:
        """Value per triangle; every triangle must lie inside a single cell."""
        if self.unbounded:
            return np.full(mesh.n_triangles, float(self.values[0, 0]))
        dx, dy = self.width / self.nx, self.height / self.ny
        c = mesh.centroids
        i = np.floor((c[:, 0] - self.x0) / dx).astype(np.int64)
        j = np.floor((c[:, 1] - self.y0) / dy).astype(np.int64)
        outside = (i < 0) | (i >= self.nx) | (j < 0) | (j >= self.ny)
        if np.any(outside):
            t = int(np.flatnonzero(outside)[0])
            raise AlignmentError(f"triangle {t} lies outside the coefficient grid", t)
        p = mesh.vertices[mesh.triangles]
        lo_x = self.x0 + i * dx
        lo_y = self.y0 + j * dy
        tol_x, tol_y = ALIGN_TOL * max(dx, 1.0), ALIGN_TOL * max(dy, 1.0)
        bad = (
            (p[:, :, 0] < lo_x[:, None] - tol_x).any(axis=1)
            | (p[:, :, 0] > lo_x[:, None] + dx + tol_x).any(axis=1)
            | (p[:, :, 1] < lo_y[:, None] - tol_y).any(axis=1)
            | (p[:, :, 1] > lo_y[:, None] + dy + tol_y).any(axis=1)
        )
        if np.any(bad):
            t = int(np.flatnonzero(bad)[0])
            raise AlignmentError(
                f"fine triangle {t} straddles a coefficient cell boundary; "
                "refine the fine mesh to the coefficient grid",
                t,
            )
        return self.values[j, i].copy()


def make_constant(value: float) -> CellGridField:
    if not value > 0:
        raise DomainError(f"constant coefficient must be positive, got {value}")
    return CellGridField(np.array([[float(value)]]), width=math.inf, height=math.inf, name="constant")


def make_noise(n: int, amplitude: float = 10.0, seed: int = 0, width: float = 1.0, height: float = 1.0) -> CellGridField:
    """``exp(amplitude * w)`` per cell with ``w ~ U(0, 1)`` i.i.d."""
    if n <= 0:
        raise DomainError(f"grid size must be positive, got {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    omega = rng.random(n * n).reshape(n, n)
    return CellGridField(np.exp(amplitude * omega), width=width, height=height, name="noise")


@dataclass(frozen=True)
class ChannelSpec:
    """Horizontal high-conductivity channel segments with short vertical connectors.

    Grid row ``j`` belongs to a channel row when ``(j - row_offset) %
    row_period < row_thickness``.  Along the ``g``-th channel row, columns with
    ``(i - segment_offset + (g % 2) * segment_stagger) % segment_period <
    segment_length`` are high; ``segment_length = 0`` makes the row span the
    domain.  In the gap below the next row, columns with ``(i - connector_offset
    - (g % 2) * connector_period // 2) % connector_period < connector_width``
    are high over ``connector_length`` rows centered in the gap (0 fills the gap
    and joins the rows).
    """

    row_period: int = 16
    row_thickness: int = 2
    row_offset: int = 7
    segment_period: int = 64
    segment_length: int = 40
    segment_stagger: int = 24
    segment_offset: int = 4
    connector_period: int = 32
    connector_width: int = 2
    connector_offset: int = 3
    connector_length: int = 8

    def _gap(self) -> tuple[int, int]:
        gap = self.row_period - self.row_thickness
        length = gap if self.connector_length <= 0 else min(self.connector_length, gap)
        return self.row_thickness + (gap - length) // 2, length

    def expected_fraction(self) -> float:
        """High-cell fraction when the grid size is a multiple of every period."""
        seg = 1.0 if self.segment_length <= 0 else min(self.segment_length, self.segment_period) / self.segment_period
        rows = self.row_thickness / self.row_period * seg
        conn = self._gap()[1] / self.row_period * self.connector_width / self.connector_period
        return rows + conn


ALL_LOW = ChannelSpec(row_thickness=0, connector_width=0)


def make_channels(n: int, high: float = math.exp(10), spec: ChannelSpec = ChannelSpec()) -> CellGridField:
    if n <= 0:
        raise DomainError(f"grid size must be positive, got {n}")
    if not high > 0:
        raise DomainError("channel value must be positive")
    j = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    local = (j - spec.row_offset) % spec.row_period
    g = (j - spec.row_offset) // spec.row_period
    in_row = local < spec.row_thickness
    if spec.segment_length > 0:
        in_row = in_row & ((i - spec.segment_offset + (g % 2) * spec.segment_stagger) % spec.segment_period
                           < spec.segment_length)
    start, length = spec._gap()
    in_gap = (local >= start) & (local < start + length)
    conn = in_gap & ((i - spec.connector_offset - (g % 2) * (spec.connector_period // 2))
                     % spec.connector_period < spec.connector_width)
    values = np.where(in_row | conn, float(high), 1.0)
    return CellGridField(values, name="channels")


def make_instability_field() -> CellGridField:
    """High contrast lower half plus one small bump above the interface."""
    n = 2**5
    c = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(c, c)
    d = 2.0**-5
    bump = (x >= 0.5 - d) & (x <= 0.5 + d) & (y >= 0.5) & (y <= 0.5 + d)
    values = np.where((y < 0.5) | bump, math.exp(10), 1.0)
    return CellGridField(values, name="instability")


SPE10_SHAPE = (60, 220, 85)
SPE10_COMPONENTS = ("kx", "ky", "kz")


def load_spe10(path, layer: int = 85, component: str = "kx") -> CellGridField:
    """Read one layer of an SPE10 model-2 permeability file.

    The file holds whitespace-separated values ordered x fastest, then y,
    then layer, with the kx, ky, kz blocks following each other.  Files with
    a single component block or a single layer are accepted too.
    """
    nx, ny, nz = SPE10_SHAPE
    if component not in SPE10_COMPONENTS:
        raise DomainError(f"component must be one of {SPE10_COMPONENTS}, got {component!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"SPE10 permeability file {path!r} not found; download spe_perm.dat "
            "(SPE comparative solution project, model 2) and pass --spe10-file"
        )
    with open(path) as fh:
        try:
            data = np.array(fh.read().split(), dtype=float)
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric token ({exc})") from exc
    layer_size = nx * ny
    full, single_comp = 3 * nz * layer_size, nz * layer_size
    if data.size == full:
        block = data.reshape(3, nz, ny, nx)[SPE10_COMPONENTS.index(component)]
    elif data.size == single_comp:
        block = data.reshape(nz, ny, nx)
    elif data.size == layer_size:
        block = data.reshape(1, ny, nx)
    else:
        raise ParseError(
            f"{path}: expected {full}, {single_comp} or {layer_size} values, found {data.size}"
        )
    if not 1 <= layer <= block.shape[0]:
        raise DomainError(f"layer {layer} outside 1..{block.shape[0]}")
    return CellGridField(block[layer - 1], width=1.2, height=2.2, name=f"spe10-{component}-{layer}")


def write_cell_field(path, fields) -> None:
    """Write fields in the SPE10 ordering (x fastest, then y, then layer)."""
    if isinstance(fields, CellGridField):
        fields = [fields]
    with open(path, "w") as fh:
        for f in fields:
            for row in f.values:
                fh.write(" ".join(repr(float(v)) for v in row))
                fh.write("\n")


def eval_on_fine_triangle(field: CellGridField, hierarchy: MeshHierarchy, t: int) -> float:
    """Coefficient value on fine triangle ``t`` (with the alignment check)."""
    return float(field.on_mesh(hierarchy.fine)[t])


# --- sources ---------------------------------------------------------------

@dataclass(frozen=True)
class SourcePiece:
    """``c0 + cx*x + cy*y`` on the closed rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float
    c0: float
    cx: float = 0.0
    cy: float = 0.0


@dataclass(frozen=True)
class SourceField:
    pieces: tuple[SourcePiece, ...]
    name: str = "source"

    def integrate_triangles(self, mesh: TriMesh) -> np.ndarray:
        """Exact ``(f, 1)_t`` for every triangle of ``mesh``.

        Piece boundaries must follow mesh lines: a triangle lies inside or
        outside each rectangle (touching its boundary is allowed).
        """
        out = np.zeros(mesh.n_triangles)
        p = mesh.vertices[mesh.triangles]
        c = mesh.centroids
        scale = max(float(np.ptp(mesh.vertices[:, 0])), float(np.ptp(mesh.vertices[:, 1])), 1.0)
        tol = ALIGN_TOL * scale
        for pc in self.pieces:
            inside = (
                (c[:, 0] > pc.x0) & (c[:, 0] < pc.x1) & (c[:, 1] > pc.y0) & (c[:, 1] < pc.y1)
            )
            vin = (
                (p[:, :, 0] >= pc.x0 - tol) & (p[:, :, 0] <= pc.x1 + tol)
                & (p[:, :, 1] >= pc.y0 - tol) & (p[:, :, 1] <= pc.y1 + tol)
            ).all(axis=1)
            if np.any(inside & ~vin):
                t = int(np.flatnonzero(inside & ~vin)[0])
                raise AlignmentError(f"triangle {t} straddles the boundary of source piece {pc}", t)
            val = pc.c0 + pc.cx * c[:, 0] + pc.cy * c[:, 1]
            out[inside] += val[inside] * mesh.areas[inside]
        return out

    def projected(self, mesh: TriMesh) -> np.ndarray:
        """Piecewise-constant L2 projection values on ``mesh``."""
        return self.integrate_triangles(mesh) / mesh.areas

    def integral(self, domain: Domain) -> tuple[float, float]:
        """Analytic ``(int f, upper bound of int |f|)`` over ``domain``."""
        total, absolute = 0.0, 0.0
        bw, bh = domain.width / domain.nx, domain.height / domain.ny
        for i in range(domain.nx):
            for j in range(domain.ny):
                if (i, j) in domain.excluded:
                    continue
                for pc in self.pieces:
                    x0, x1 = max(pc.x0, i * bw), min(pc.x1, (i + 1) * bw)
                    y0, y1 = max(pc.y0, j * bh), min(pc.y1, (j + 1) * bh)
                    if x1 <= x0 or y1 <= y0:
                        continue
                    area = (x1 - x0) * (y1 - y0)
                    mx, my = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
                    total += area * (pc.c0 + pc.cx * mx + pc.cy * my)
                    corners = [pc.c0 + pc.cx * x + pc.cy * y for x in (x0, x1) for y in (y0, y1)]
                    absolute += area * max(abs(v) for v in corners)
        return total, absolute


def _checked(source: SourceField, domain: Domain | None) -> SourceField:
    if domain is not None:
        total, absolute = source.integral(domain)
        if abs(total) > 1e-12 * max(absolute, 1e-300):
            raise DomainError(f"source {source.name!r} violates int f = 0 (int f = {total:.3e})")
    return source


def make_source(tag: str, *args, domain: Domain | None = None) -> SourceField:
    """Sources of the four experiments.

    ``wells`` takes two rectangles ``(x0, x1, y0, y1)``: +1 on the first
    (injection) and -1 on the second (production).
    """
    inf = math.inf
    if tag == "checker_quarters":
        src = SourceField(
            (SourcePiece(0, 0.25, 0, 0.25, 1.0), SourcePiece(0.75, 1, 0.75, 1, -1.0)), tag
        )
    elif tag == "halfplane_pm1":
        src = SourceField(
            (SourcePiece(-inf, inf, -inf, 0.5, -1.0), SourcePiece(-inf, inf, 0.5, inf, 1.0)), tag
        )
    elif tag == "lshape_linear":
        src = SourceField(
            (
                SourcePiece(-inf, inf, -inf, 0.5, 0.5, 1.0, -1.0),
                SourcePiece(0.5, inf, 0.5, inf, -0.5, -1.0, 1.0),
            ),
            tag,
        )
    elif tag == "wells":
        if len(args) != 2:
            raise DomainError("wells needs two rectangles")
        lo, hi = args
        if domain is not None:
            for r in (lo, hi):
                if r[0] < 0 or r[2] < 0 or r[1] > domain.width or r[3] > domain.height or r[0] >= r[1] or r[2] >= r[3]:
                    raise DomainError(f"well rectangle {r} outside the domain")
        src = SourceField((SourcePiece(*lo, 1.0), SourcePiece(*hi, -1.0)), tag)
    else:
        raise DomainError(f"unknown source {tag!r}")
    return _checked(src, domain)


def spe10_wells(domain: Domain, fine_factor: int = 1) -> SourceField:
    """Unit injection in the lower-left and production in the upper-right fine cell."""
    dx = domain.width / domain.nx / fine_factor
    dy = domain.height / domain.ny / fine_factor
    lo = (0.0, dx, 0.0, dy)
    hi = (domain.width - dx, domain.width, domain.height - dy, domain.height)
    return make_source("wells", lo, hi, domain=domain)
