"""Command-line entry point: ``mixedlod <scenario> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from . import experiments as xp
from .errors import MixedLODError
from .fem import assemble_div, assemble_weighted_mass, fine_spaces
from .mesh import build_hierarchy

PLOT_AXES = {"convergence": "H", "lshape": "H", "instability": "h"}


def parse_levels(text: str) -> tuple[int, ...]:
    """``"4"``, ``"2,3,5"`` or an inclusive range ``"2:5"``."""
    try:
        if ":" in text:
            a, b = text.split(":")
            return tuple(range(int(a), int(b) + 1))
        return tuple(int(s) for s in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from exc


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixedlod", description=__doc__)
    sub = p.add_subparsers(dest="scenario", required=True)
    for name in xp.SCENARIOS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with ExperimentConfig fields")
        s.add_argument("--domain")
        s.add_argument("--coeff", choices=xp.COEFFICIENTS)
        s.add_argument("--seed", type=int)
        s.add_argument("--coarse-level", type=parse_levels, dest="coarse_levels")
        s.add_argument("--fine-level", type=parse_levels, dest="fine_levels")
        s.add_argument("--C", type=parse_floats, dest="C")
        s.add_argument("--k", type=int)
        s.add_argument("--ell", type=int)
        s.add_argument("--tol", type=float)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", help="output directory (default: results)")
        s.add_argument("--spe10-file", dest="spe10_file")
        s.add_argument("--spe10-component", choices=("kx", "ky", "kz"), dest="spe10_component")
        s.add_argument("--full", action="store_true", default=None, help="full problem sizes (finer meshes, more coarse levels)")
        s.add_argument("--dump-mesh", metavar="PATH", help="write the first fine mesh as text")
        s.add_argument("--dump-matrices", metavar="DIR", help="write fine M and B in coordinate format")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


CONFIG_FLAGS = (
    "domain", "coeff", "seed", "coarse_levels", "fine_levels", "C", "k", "ell", "tol",
    "threads", "out", "spe10_file", "spe10_component",
)


def config_from_args(args) -> xp.ExperimentConfig:
    """Scenario defaults, then the JSON file, then explicit flags."""
    file_values = {}
    if args.config:
        with open(args.config) as fh:
            file_values = json.load(fh)
        file_values.pop("scenario", None)
    full = args.full if args.full is not None else bool(file_values.get("full", False))
    cfg = xp.default_config(args.scenario, full)
    merged = {**cfg.__dict__, **file_values}
    merged.update({k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k) is not None})
    merged["full"] = full
    return xp.ExperimentConfig.from_dict(merged).validate()


def _dump(args, cfg) -> None:
    if not (args.dump_mesh or args.dump_matrices) or cfg.scenario == "spe10":
        return
    hier = build_hierarchy(cfg.domain, cfg.coarse_levels[0], cfg.fine_levels[0])
    if args.dump_mesh:
        hier.fine.dump(args.dump_mesh)
    if args.dump_matrices:
        os.makedirs(args.dump_matrices, exist_ok=True)
        coeff = xp.make_coefficient(cfg, xp._fine_cells_per_unit(hier.fine.domain, cfg.fine_levels[0]))
        V, Q = fine_spaces(hier)
        assemble_weighted_mass(V, coeff.on_mesh(hier.fine)).dump(os.path.join(args.dump_matrices, "M.txt"))
        assemble_div(V, Q).dump(os.path.join(args.dump_matrices, "B.txt"))


def _print_rows(rows) -> None:
    for r in rows:
        if isinstance(r, xp.InfSupRow):
            print(f"{r.space:<12} H={r.H:<9.4g} h={r.h:<9.4g} k={r.k} gamma={r.gamma:.6f}")
            continue
        ell = "-" if r.ell is None else r.ell
        line = (f"{r.scenario:<24} H={r.H:<9.4g} h={r.h:<9.4g} k={r.k:<2} ell={ell:<3} "
                f"energy={r.err_energy:.4e} l2={r.err_l2:.4e} div={r.div_residual:.1e}")
        if "theta" in r.extras:
            line += f" theta={r.extras['theta']:.4f}"
        if "peak" in r.extras:
            line += f" peak={r.extras['peak']:.3f} ref_peak={r.extras['reference_peak']:.3f}"
        print(line)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        _dump(args, cfg)
        rows = xp.RUNNERS[cfg.scenario](cfg)
    except xp.ScenarioSkipped as exc:
        print(f"SKIPPED {args.scenario}: {exc}")
        return 0
    except (MixedLODError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, f"{cfg.scenario}.csv")
    if cfg.scenario == "infsup":
        xp.emit_infsup_csv(rows, csv_path)
    else:
        xp.emit_csv(rows, csv_path)
        axis = PLOT_AXES.get(cfg.scenario)
        if axis and any(math.isfinite(r.err_energy) and r.err_energy > 0 for r in rows):
            slope = 2.0 if axis == "H" else None
            xp.emit_svg_plot(rows, os.path.join(cfg.out, f"{cfg.scenario}.svg"), x=axis, reference_slope=slope)
    _print_rows(rows)
    print(f"config {cfg.config_hash} -> {csv_path}")
    failed = [r for r in rows if not isinstance(r, xp.InfSupRow) and "error" in r.extras]
    return 1 if failed else 0
