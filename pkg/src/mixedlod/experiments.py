"""Experiment runners, result rows, CSV and SVG output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import fem, fields, lod
from .errors import ConfigurationError, MixedLODError
from .mesh import (
    SPE10_DOMAIN,
    build_hierarchy,
    build_hierarchy_by_factor,
    domain_from_tag,
)
from .saddle import solve_dense

log = logging.getLogger(__name__)

SCENARIOS = ("convergence", "instability", "lshape", "spe10", "decay", "infsup", "oracle")
COEFFICIENTS = ("constant", "noise", "channels", "instability", "spe10")
CSV_HEADER = ("scenario", "H", "h", "k", "ell", "err_energy", "err_l2", "div_residual", "config_hash")
SPE10_FACTORS = (1, 10)


class ScenarioSkipped(MixedLODError):
    """Raised when a scenario cannot run in this environment (missing data)."""


@dataclass
class ExperimentConfig:
    scenario: str
    domain: str = "unit_square"
    coarse_levels: tuple[int, ...] = (2, 3, 4, 5)
    fine_levels: tuple[int, ...] = (7,)
    coeff: str = "noise"
    amplitude: float = 10.0
    coeff_cells: int | None = None
    seed: int = 0
    source: str = "checker_quarters"
    C: tuple[float, ...] = (0.5,)
    k: int | None = None
    ell: int | None = None
    tol: float = 1e-10
    spe10_file: str | None = None
    spe10_component: str = "kx"
    spe10_layer: int = 85
    full: bool = False
    # not part of the reproducibility hash
    threads: int = 1
    out: str = "results"

    _UNHASHED = ("threads", "out")

    def __post_init__(self):
        for name in ("coarse_levels", "fine_levels", "C"):
            v = getattr(self, name)
            setattr(self, name, tuple(v) if isinstance(v, (list, tuple)) else (v,))

    def validate(self) -> ExperimentConfig:
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.coeff not in COEFFICIENTS:
            raise ConfigurationError(f"unknown coefficient {self.coeff!r}")
        if self.scenario != "spe10":
            domain_from_tag(self.domain)
            if not self.coarse_levels or not self.fine_levels:
                raise ConfigurationError("level lists must be nonempty")
            if min(self.fine_levels) <= max(self.coarse_levels):
                raise ConfigurationError(
                    f"fine levels {self.fine_levels} must all exceed coarse levels {self.coarse_levels}"
                )
        if any(c <= 0 for c in self.C):
            raise ConfigurationError("C values must be positive")
        if self.k is not None and self.k < 0 or self.ell is not None and self.ell < 0:
            raise ConfigurationError("k and ell must be nonnegative")
        if self.tol <= 0:
            raise ConfigurationError("tol must be positive")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        return self

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        for name in self._UNHASHED:
            d.pop(name)
        return d

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def default_config(scenario: str, full: bool = False, **overrides) -> ExperimentConfig:
    """Desk-scale defaults per scenario; ``full=True`` selects the full sizes."""
    base: dict = {"scenario": scenario, "full": full}
    if scenario == "convergence":
        base.update(coarse_levels=tuple(range(2, 7 if full else 6)), fine_levels=(8 if full else 7,),
                    C=(0.25, 0.5) if full else (0.5,))
    elif scenario == "instability":
        base.update(coarse_levels=(2,), fine_levels=tuple(range(5, 10 if full else 9)),
                    coeff="instability", source="halfplane_pm1", k=2)
    elif scenario == "lshape":
        # base cells of the L-shape have size 1/2, so level L means h = 2^-(L+1)
        base.update(domain="l_shape", coarse_levels=tuple(range(1, 6 if full else 5)),
                    fine_levels=(7 if full else 6,), source="lshape_linear", C=(0.25, 0.5))
    elif scenario == "spe10":
        base.update(domain="spe10", coarse_levels=(0,), fine_levels=(1,), coeff="spe10", source="wells")
    elif scenario == "decay":
        base.update(coarse_levels=(3,), fine_levels=(6,), k=4)
    elif scenario == "infsup":
        base.update(coarse_levels=(2,), fine_levels=(5,))
    elif scenario == "oracle":
        base.update(coarse_levels=(2,), fine_levels=(5,))
    else:
        raise ConfigurationError(f"unknown scenario {scenario!r}")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**base).validate()


@dataclass
class ResultRow:
    scenario: str
    H: float
    h: float
    k: int
    ell: int | None
    err_energy: float
    err_l2: float
    div_residual: float
    config_hash: str
    corrector_count: int = field(default=0, compare=False)
    timings: dict = field(default_factory=dict, compare=False)
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def series(self) -> str:
        return self.scenario


# --- building blocks --------------------------------------------------------

def make_coefficient(config: ExperimentConfig, fine_cells: int = 128) -> fields.CellGridField:
    """Coefficient field for ``config``; ``fine_cells`` is the finest grid per unit length."""
    n = config.coeff_cells or min(128, fine_cells)
    if config.coeff == "constant":
        return fields.make_constant(1.0)
    if config.coeff == "noise":
        return fields.make_noise(n, config.amplitude, config.seed)
    if config.coeff == "channels":
        return fields.make_channels(n, math.exp(config.amplitude))
    if config.coeff == "instability":
        return fields.make_instability_field()
    if config.spe10_file is None:
        raise ScenarioSkipped(
            "SPE10 data not provided; download spe_perm.dat (SPE comparative solution "
            "project, model 2) and pass --spe10-file PATH"
        )
    if not os.path.exists(config.spe10_file):
        raise ScenarioSkipped(f"SPE10 file {config.spe10_file!r} not found; pass --spe10-file PATH")
    return fields.load_spe10(config.spe10_file, config.spe10_layer, config.spe10_component)


def _fine_cells_per_unit(domain, level) -> int:
    return int(round(domain.nx / domain.width * 2**level))


def _hierarchies(config: ExperimentConfig, pairs):
    """Build hierarchies and check coefficient alignment before any solve."""
    domain = domain_from_tag(config.domain)
    coeff = make_coefficient(config, _fine_cells_per_unit(domain, min(f for _, f in pairs)))
    out = {}
    for c, f in pairs:
        out[(c, f)] = build_hierarchy(domain, c, f)
    # alignment failures surface as AlignmentError here
    for hier in out.values():
        coeff.on_mesh(hier.fine)
    return coeff, out


def _source(config: ExperimentConfig, hierarchy=None) -> fields.SourceField:
    if config.source == "wells":
        return fields.spe10_wells(hierarchy.fine.domain, hierarchy.fine.factor)
    return fields.make_source(config.source, domain=domain_from_tag(config.domain))


def divergence_residual(disc: lod.Discretization, u: np.ndarray, target_integrals: np.ndarray) -> float:
    """``||div u + P f|| / ||P f||`` with ``P f`` given by fine-triangle integrals."""
    areas = disc.fine.areas
    target = -target_integrals / areas
    scale = math.sqrt(float(np.sum(areas * target**2)))
    return fem.div_l2_error(disc.B, u, disc.fine, target) / (scale if scale > 0 else 1.0)


def _coarse_target(disc: lod.Discretization, F: np.ndarray) -> np.ndarray:
    """Fine-triangle integrals of ``P_H f`` from fine-triangle integrals of ``f``."""
    hier = disc.hierarchy
    FT = hier.children @ F
    return FT[hier.parent] * disc.fine.areas / disc.coarse.areas[hier.parent]


def _failed_row(scenario, H, h, k, ell, cfg_hash, exc) -> ResultRow:
    log.error("%s H=%g h=%g k=%s failed: %s", scenario, H, h, k, exc)
    nan = float("nan")
    return ResultRow(scenario, H, h, k, ell, nan, nan, nan, cfg_hash, extras={"error": str(exc)})


class _BasisCache:
    def __init__(self, disc, config):
        self.disc, self.config, self.items, self.times = disc, config, {}, {}

    def get(self, k):
        if k not in self.items:
            t0 = time.perf_counter()
            self.items[k] = lod.corrector_basis(self.disc, k, tol=self.config.tol, threads=self.config.threads)
            self.times[k] = time.perf_counter() - t0
        return self.items[k]


def _multiscale_row(label, disc, ref, f, basis_cache, k, config, F, extras=None) -> ResultRow:
    hier = disc.hierarchy
    t0 = time.perf_counter()
    basis = basis_cache.get(k)
    t1 = time.perf_counter()
    ms = lod.solve_multiscale(disc, basis, f, tol=config.tol)
    t2 = time.perf_counter()
    e, l2 = lod.relative_errors(disc, ref.flux, ms.flux)
    div = divergence_residual(disc, ms.flux, _coarse_target(disc, F))
    row = ResultRow(
        label, hier.H, hier.h, k, None, e, l2, div, config.config_hash,
        corrector_count=basis.size,
        timings={"correctors": basis_cache.times.get(k, t1 - t0), "coarse": t2 - t1},
        extras=extras or {},
    )
    row.extras["flux"] = ms.flux
    return row


# --- scenario runners -------------------------------------------------------

def _run_sweep(config: ExperimentConfig, name: str) -> list[ResultRow]:
    """Shared body of the convergence and L-shape studies."""
    h_level = config.fine_levels[0]
    pairs = [(c, h_level) for c in config.coarse_levels]
    coeff, hiers = _hierarchies(config, pairs)
    rows, ref, F = [], None, None
    for c in config.coarse_levels:
        hier = hiers[(c, h_level)]
        disc = lod.Discretization(hier, coeff)
        f = _source(config, hier)
        if ref is None:
            t0 = time.perf_counter()
            ref = lod.solve_reference(disc, f, config.tol)
            t_ref = time.perf_counter() - t0
            F = disc.source_integrals(f)
            log.info("reference h=%g: %s", hier.h, ref.report)
        cache = _BasisCache(disc, config)
        for C in config.C:
            label = f"{name}/C={C}"
            try:
                k = config.k if config.k is not None else lod.choose_k(hier.H, hier.h, C, hier.saturation_layers)
                row = _multiscale_row(label, disc, ref, f, cache, k, config, F, {"C": C})
                row.timings["reference"] = t_ref
                row.extras.pop("flux")
                rows.append(row)
                log.info("%s H=%g k=%d energy=%.3e l2=%.3e", label, hier.H, k, row.err_energy, row.err_l2)
            except MixedLODError as exc:
                rows.append(_failed_row(label, hier.H, hier.h, -1, None, config.config_hash, exc))
        label = f"{name}/standard"
        try:
            t0 = time.perf_counter()
            std = lod.solve_standard_coarse(disc, f, config.tol)
            e, l2 = lod.relative_errors(disc, ref.flux, std.flux)
            div = divergence_residual(disc, std.flux, _coarse_target(disc, F))
            rows.append(ResultRow(label, hier.H, hier.h, 0, None, e, l2, div, config.config_hash,
                                  timings={"coarse": time.perf_counter() - t0}))
        except MixedLODError as exc:
            rows.append(_failed_row(label, hier.H, hier.h, 0, None, config.config_hash, exc))
    return rows


def run_convergence(config: ExperimentConfig) -> list[ResultRow]:
    """Multiscale and standard coarse errors against one fine reference, per ``H``."""
    return _run_sweep(config.validate(), "convergence")


def run_lshape(config: ExperimentConfig) -> list[ResultRow]:
    """Same sweep on the L-shaped domain with a source outside ``Q_H``."""
    return _run_sweep(config.validate(), "lshape")


def run_instability(config: ExperimentConfig) -> list[ResultRow]:
    """Fixed ``H`` and ``k`` while ``h`` shrinks, plus the ideal method per ``h``.

    Rows carry ``extras["peak"]`` and ``extras["reference_peak"]``: the
    largest flux magnitude at fine centroids of the two solutions.
    """
    config.validate()
    c = config.coarse_levels[0]
    pairs = [(c, f) for f in config.fine_levels]
    coeff, hiers = _hierarchies(config, pairs)
    k = 2 if config.k is None else config.k
    rows = []
    for _, fl in pairs:
        hier = hiers[(c, fl)]
        disc = lod.Discretization(hier, coeff)
        f = _source(config, hier)
        ref = lod.solve_reference(disc, f, config.tol)
        F = disc.source_integrals(f)
        ref_peak = float(np.linalg.norm(disc.Vh.at_centroids(ref.flux), axis=1).max())
        cache = _BasisCache(disc, config)
        for label, kk in ((f"instability/k={k}", k), ("instability/ideal", hier.saturation_layers)):
            try:
                row = _multiscale_row(label, disc, ref, f, cache, kk, config, F)
                flux = row.extras.pop("flux")
                row.extras["peak"] = float(np.linalg.norm(disc.Vh.at_centroids(flux), axis=1).max())
                row.extras["reference_peak"] = ref_peak
                rows.append(row)
                log.info("%s h=%g energy=%.3e peak=%.2f (reference %.2f)", label, hier.h,
                         row.err_energy, row.extras["peak"], ref_peak)
            except MixedLODError as exc:
                rows.append(_failed_row(label, hier.H, hier.h, kk, None, config.config_hash, exc))
    return rows


def spe10_hierarchy():
    return build_hierarchy_by_factor(SPE10_DOMAIN, *SPE10_FACTORS)


def run_spe10(config: ExperimentConfig) -> list[ResultRow]:
    """Wells problem on the 60 x 220 layer with source corrections.

    Rows for ``k`` in {1, 2, 3} and ``ell`` in {none, 0, k, k+1, saturation};
    the saturated case is labelled ``ell=inf``.  Raises
    :class:`ScenarioSkipped` without the data file.
    """
    config.validate()
    coeff = make_coefficient(config)
    hier = spe10_hierarchy()
    coeff.on_mesh(hier.fine)
    disc = lod.Discretization(hier, coeff)
    f = _source(config, hier)
    F = disc.source_integrals(f)
    ref = lod.solve_reference(disc, f, config.tol)
    sat = hier.saturation_layers
    ks = (config.k,) if config.k is not None else (1, 2, 3)
    cache = _BasisCache(disc, config)
    source_cache: dict[int, np.ndarray] = {}
    rows = []
    for k in ks:
        if config.ell is not None:
            ells = [config.ell]
        else:
            ells = [None, 0, k, k + 1, sat]
        for ell in dict.fromkeys(ells):
            label = "spe10/none" if ell is None else ("spe10/ell=inf" if ell >= sat else f"spe10/ell={ell}")
            try:
                basis = cache.get(k)
                t1 = time.perf_counter()
                corr = None
                if ell is not None:
                    if ell not in source_cache:
                        sc = [lod.source_corrector(disc, int(T), ell, lod.split_integrals(disc, F, int(T)), config.tol)
                              for T in lod.source_triangles(disc, f)]
                        source_cache[ell] = sum(s.flux for s in sc)
                    corr = source_cache[ell]
                t2 = time.perf_counter()
                ms = lod.solve_multiscale(disc, basis, f, source_correction=corr, tol=config.tol)
                t3 = time.perf_counter()
                e, l2 = lod.relative_errors(disc, ref.flux, ms.flux)
                target = F if ell is not None else _coarse_target(disc, F)
                div = divergence_residual(disc, ms.flux, target)
                rows.append(ResultRow(label, hier.H, hier.h, k, ell, e, l2, div, config.config_hash,
                                      corrector_count=basis.size,
                                      timings={"correctors": cache.times[k],
                                               "source": t2 - t1, "coarse": t3 - t2}))
                log.info("%s k=%d energy=%.4f l2=%.4f", label, k, e, l2)
            except MixedLODError as exc:
                rows.append(_failed_row(label, hier.H, hier.h, k, ell, config.config_hash, exc))
    return rows


def center_triangle(mesh) -> int:
    """Triangle whose centroid is closest to the domain center (lowest index on ties)."""
    d = mesh.domain
    c = np.array([d.width / 2, d.height / 2])
    dist = np.round(np.linalg.norm(mesh.centroids - c, axis=1), 12)
    return int(np.argmin(dist))


def run_decay(config: ExperimentConfig) -> list[ResultRow]:
    """Truncation error of one element corrector versus the patch size.

    Rows have ``err_energy = d_k / |||ideal|||`` (``err_l2`` likewise in L2)
    and the divergence norm of the truncated corrector; the fitted per-layer rate
    is stored in ``extras["theta"]`` of every row.
    """
    config.validate()
    pairs = [(config.coarse_levels[0], config.fine_levels[0])]
    coeff, hiers = _hierarchies(config, pairs)
    hier = hiers[pairs[0]]
    disc = lod.Discretization(hier, coeff)
    T = center_triangle(hier.coarse)
    E = int(disc.VH.local_dofs[T][disc.VH.local_dofs[T] >= 0][0])
    v = np.zeros(disc.VH.dim)
    v[E] = 1.0
    report = lod.decay_profile(disc, T, v, config.k or 4, tol=config.tol)
    rows = []
    for k, d, dl2, div in zip(report.ks, report.errors, report.l2_errors, report.div_residuals):
        rows.append(ResultRow("decay", hier.H, hier.h, int(k), None, float(d / report.ideal_norm),
                              float(dl2 / report.ideal_l2), float(div), config.config_hash,
                              extras={"theta": report.theta, "T": T, "E": E, "d": float(d)}))
    return rows


@dataclass
class InfSupRow:
    space: str
    H: float
    h: float
    k: int
    gamma: float


def run_infsup(config: ExperimentConfig) -> list[InfSupRow]:
    """Dense inf-sup probe of the standard and multiscale coarse pairs."""
    config.validate()
    pairs = [(config.coarse_levels[0], config.fine_levels[0])]
    coeff, hiers = _hierarchies(config, pairs)
    hier = hiers[pairs[0]]
    disc = lod.Discretization(hier, coeff)
    rows = [InfSupRow("standard", hier.H, hier.h, 0, lod.multiscale_infsup(disc, None))]
    for k in ((config.k,) if config.k is not None else (1, 2)):
        basis = lod.corrector_basis(disc, k, tol=config.tol, threads=config.threads)
        rows.append(InfSupRow("multiscale", hier.H, hier.h, k, lod.multiscale_infsup(disc, basis)))
    return rows


def dense_oracle_difference(tol: float = 1e-10) -> float:
    """Max difference between the sparse reference solve and a dense KKT solve.

    Uses the 8-triangle unit-square mesh, A = 1 and the half-plane source;
    the dense system carries the zero-mean pressure row explicitly.
    """
    hier = build_hierarchy("unit_square", 0, 1)
    disc = lod.Discretization(hier, 1.0)
    f = fields.make_source("halfplane_pm1")
    ref = lod.solve_reference(disc, f, tol)
    M = disc.M.toarray()
    B = disc.B.toarray()
    a = disc.fine.areas
    n, m = M.shape[0], B.shape[0]
    K = np.zeros((n + m + 1, n + m + 1))
    K[:n, :n] = M
    K[:n, n:n + m] = B.T
    K[n:n + m, :n] = B
    K[n:n + m, -1] = a
    K[-1, n:n + m] = a
    b = np.concatenate([np.zeros(n), -disc.source_integrals(f), [0.0]])
    x = solve_dense(K, b)
    return float(max(np.abs(x[:n] - ref.flux).max(), np.abs(x[n:n + m] - ref.pressure).max()))


def run_oracle(config: ExperimentConfig) -> list[ResultRow]:
    """Dense-oracle check and ideal-method exactness as result rows."""
    config.validate()
    h = config.config_hash
    diff = dense_oracle_difference(config.tol)
    rows = [ResultRow("oracle/dense", 0.5, 0.5, 0, None, diff, diff, 0.0, h)]
    pairs = [(config.coarse_levels[0], config.fine_levels[0])]
    coeff, hiers = _hierarchies(config, pairs)
    hier = hiers[pairs[0]]
    disc = lod.Discretization(hier, coeff)
    f = _source(config, hier)
    ref = lod.solve_reference(disc, f, config.tol)
    cache = _BasisCache(disc, config)
    row = _multiscale_row("oracle/ideal", disc, ref, f, cache, hier.saturation_layers, config,
                          disc.source_integrals(f))
    row.extras.pop("flux")
    rows.append(row)
    return rows


RUNNERS = {
    "convergence": run_convergence,
    "instability": run_instability,
    "lshape": run_lshape,
    "spe10": run_spe10,
    "decay": run_decay,
    "infsup": run_infsup,
    "oracle": run_oracle,
}


# --- output -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_csv(rows, path) -> None:
    """Write rows with the fixed header; refuses to write an empty table."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])


def parse_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ConfigurationError(f"unexpected CSV header {header}")
        rows = []
        for rec in reader:
            d = dict(zip(header, rec))
            rows.append(ResultRow(
                d["scenario"], float(d["H"]), float(d["h"]), int(d["k"]),
                None if d["ell"] == "" else int(d["ell"]),
                float(d["err_energy"]), float(d["err_l2"]), float(d["div_residual"]),
                d["config_hash"],
            ))
    return rows


def emit_infsup_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("space", "H", "h", "k", "gamma"))
        for r in rows:
            w.writerow((r.space, repr(r.H), repr(r.h), r.k, repr(r.gamma)))


def emit_svg_plot(rows, path, x: str = "H", y: str = "err_energy", reference_slope: float | None = 2.0,
                  width: int = 480, height: int = 360) -> None:
    """Self-contained log-log SVG: one polyline per scenario series.

    A dashed reference line of slope ``reference_slope`` is anchored at the
    first point of the first series.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to plot")
    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        xv, yv = getattr(r, x), getattr(r, y)
        if xv > 0 and yv > 0 and math.isfinite(xv) and math.isfinite(yv):
            series.setdefault(r.series, []).append((xv, yv))
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("no positive finite values to plot")
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x0, x1 = math.floor(min(lx) * 2) / 2, math.ceil(max(lx) * 2) / 2
    y0, y1 = math.floor(min(ly)), math.ceil(max(ly))
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    ml, mr, mt, mb = 60, 130, 20, 40
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (y1 - math.log10(v)) / (y1 - y0) * ph

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<defs><clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></clipPath></defs>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(y0, y1 + 1):
        yy = py(10.0**e)
        out.append(f'<line x1="{ml - 4}" y1="{yy:.2f}" x2="{ml}" y2="{yy:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 6}" y="{yy + 4:.2f}" text-anchor="end">1e{e}</text>')
    e2 = math.floor(x0 / math.log10(2))
    while e2 * math.log10(2) <= x1 + 1e-12:
        if e2 * math.log10(2) >= x0 - 1e-12:
            xx = px(2.0**e2)
            out.append(f'<line x1="{xx:.2f}" y1="{mt + ph}" x2="{xx:.2f}" y2="{mt + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{xx:.2f}" y="{mt + ph + 16}" text-anchor="middle">2^{e2}</text>')
        e2 += 1
    out.append(f'<text x="{ml + pw / 2}" y="{height - 6}" text-anchor="middle">{x}</text>')
    for i, (name, s) in enumerate(series.items()):
        s = sorted(s)
        c = colors[i % len(colors)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in s)
        out.append(f'<polyline class="series" data-series="{name}" points="{coords}" fill="none" stroke="{c}"/>')
        ty = mt + 14 * (i + 1)
        out.append(f'<text x="{ml + pw + 8}" y="{ty}" fill="{c}">{name}</text>')
    if reference_slope is not None:
        first = sorted(next(iter(series.values())))
        ax, ay = first[-1]
        a = 10.0**x0
        b = 10.0**x1
        ya = ay * (a / ax) ** reference_slope
        yb = ay * (b / ax) ** reference_slope
        out.append(
            f'<path class="reference" d="M {px(a):.2f} {py(ya):.2f} L {px(b):.2f} {py(yb):.2f}" '
            f'stroke="gray" stroke-dasharray="4 3" fill="none" clip-path="url(#plot)"/>'
        )
        out.append(f'<text x="{ml + pw + 8}" y="{mt + 14 * (len(series) + 1)}" fill="gray">'
                   f'slope {reference_slope:g}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def observed_order(rows, y: str = "err_energy") -> float:
    """Least-squares slope of ``log y`` against ``log H``."""
    H = np.array([r.H for r in rows])
    e = np.array([getattr(r, y) for r in rows])
    return float(np.polyfit(np.log(H), np.log(e), 1)[0])
