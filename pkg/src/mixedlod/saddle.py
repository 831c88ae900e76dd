"""Symmetric indefinite constrained solves ``[[M, C^T], [C, 0]]``.

Constraint blocks are stacked below an SPD block ``M``.  Rows that are
linearly dependent are removed before factorization according to each
block's redundancy policy:

``"strict"``
    dependent rows are an error (:class:`RankError` naming the block).
``"drop"``
    one row per row-sum-free connected component (and exact duplicates) is
    removed; its multiplier is reported as zero.
``"gauge"``
    like ``"drop"``, and the multipliers of every such component are then
    shifted to zero weighted mean, which is the solution of the system
    bordered by one weighted-mean Lagrange row per component.

Dependencies spanning several blocks are declared explicitly with
``groups``: each group of rows of the block contains one redundant row.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .errors import RankError, SolverFailure, SpaceMismatchError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass
class Constraint:
    name: str
    matrix: sp.spmatrix
    rhs: np.ndarray | None = None
    redundancy: str = "strict"
    weights: np.ndarray | None = None
    groups: list[np.ndarray] | None = None


@dataclass
class SolveReport:
    residual: float
    n_primal: int
    n_constraints: int
    factor_nnz: int
    refinement_steps: int
    wall_time: float

    def __str__(self):
        return (
            f"residual={self.residual:.2e} n={self.n_primal} m={self.n_constraints} "
            f"nnz(LU)={self.factor_nnz} refine={self.refinement_steps} t={self.wall_time:.3f}s"
        )


@dataclass
class _BlockLayout:
    name: str
    n_rows: int
    kept: np.ndarray
    shifts: list[tuple[np.ndarray, np.ndarray]]  # (rows, weights) to zero-mean


@dataclass(eq=False)
class SaddleSystem:
    M: sp.csc_matrix
    C: sp.csr_matrix
    g: np.ndarray
    r: np.ndarray
    layout: list[_BlockLayout]
    policy: list[str]
    border: sp.csr_matrix | None = None
    _lu: object = field(default=None, repr=False)
    _K: sp.csc_matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def kkt_matrix(self) -> sp.csc_matrix:
        if self._K is None:
            if self.m == 0 and self.border is None:
                self._K = sp.csc_matrix(self.M)
                return self._K
            blocks = [[self.M, self.C.T], [self.C, None]]
            if self.border is not None:
                nb = self.border.shape[1]
                blocks = [
                    [self.M, self.C.T, None],
                    [self.C, None, self.border],
                    [None, self.border.T, sp.csr_matrix((nb, nb))],
                ]
            self._K = sp.bmat(blocks, format="csc")
        return self._K

    def factorize(self):
        if self._lu is None:
            K = self.kkt_matrix()
            try:
                self._lu = spla.splu(K, permc_spec="COLAMD")
            except RuntimeError as exc:
                names = ", ".join(b.name for b in self.layout) or "<none>"
                raise RankError(
                    f"KKT matrix is singular after redundancy elimination (blocks: {names})"
                ) from exc
        return self._lu

    def rhs(self, g=None, r=None) -> np.ndarray:
        g = self.g if g is None else g
        r = self.r if r is None else r
        parts = [np.asarray(g, dtype=float), np.asarray(r, dtype=float)]
        if self.border is not None:
            parts.append(np.zeros(self.border.shape[1]))
        return np.concatenate(parts)


def _zero_sum_components(C: sp.csr_matrix) -> list[np.ndarray]:
    """Row sets connected through shared columns whose rows add up to zero."""
    if C.shape[0] == 0:
        return []
    pattern = C.copy()
    pattern.data = np.ones_like(pattern.data)
    rr = (pattern @ pattern.T).tocsr()
    ncomp, labels = csgraph.connected_components(rr, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
    scale = abs(C).max() if C.nnz else 0.0
    sums = sp.csr_matrix(
        (np.ones(C.shape[0]), (labels, np.arange(C.shape[0]))), shape=(ncomp, C.shape[0])
    ) @ C
    sums = abs(sp.csr_matrix(sums))
    comp_max = np.zeros(ncomp)
    if sums.nnz:
        comp_max = np.asarray(sums.max(axis=1).toarray()).ravel()
    out = []
    for c in range(ncomp):
        rows = order[bounds[c]:bounds[c + 1]]
        if comp_max[c] <= 1e-12 * scale * np.sqrt(len(rows)):
            out.append(rows)
    return out


def _duplicate_rows(C: sp.csr_matrix) -> np.ndarray:
    """Rows that exactly repeat an earlier row."""
    if C.shape[0] < 2:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(12345)
    probe = C @ rng.standard_normal((C.shape[1], 2))
    order = np.lexsort((probe[:, 1], probe[:, 0]))
    dup = []
    for a, b in zip(order[:-1], order[1:]):
        if np.array_equal(probe[a], probe[b]):
            ra, rb = C.getrow(a), C.getrow(b)
            ra.sort_indices()
            rb.sort_indices()
            if np.array_equal(ra.indices, rb.indices) and np.array_equal(ra.data, rb.data):
                dup.append(max(a, b))
    return np.array(sorted(set(dup)), dtype=np.int64)


def build_constrained_system(M, blocks=(), g=None, gauge_mode: str = "eliminate") -> SaddleSystem:
    """Stack constraint blocks under ``M`` and remove redundant rows.

    ``gauge_mode="border"`` keeps every row of gauge blocks and appends one
    weighted-mean Lagrange row per redundant component instead; it yields
    the same solution at a higher factorization cost.
    """
    M = sp.csc_matrix(M.matrix if hasattr(M, "matrix") else M)
    n = M.shape[0]
    if M.shape != (n, n):
        raise SpaceMismatchError(f"M must be square, got {M.shape}")
    g = np.zeros(n) if g is None else np.asarray(g, dtype=float)
    if g.shape != (n,):
        raise SpaceMismatchError(f"flux rhs has shape {g.shape}, expected ({n},)")

    rows_out, rhs_out, layout, policy, border_cols = [], [], [], [], []
    for blk in blocks:
        C = sp.csr_matrix(blk.matrix.matrix if hasattr(blk.matrix, "matrix") else blk.matrix)
        if C.shape[1] != n:
            raise SpaceMismatchError(
                f"constraint {blk.name!r} has {C.shape[1]} columns, expected {n}"
            )
        r = np.zeros(C.shape[0]) if blk.rhs is None else np.asarray(blk.rhs, dtype=float)
        if r.shape != (C.shape[0],):
            raise SpaceMismatchError(f"rhs of {blk.name!r} has wrong shape {r.shape}")

        drop: set[int] = set()
        shifts = []
        if blk.groups is not None:
            for grp in blk.groups:
                if len(grp):
                    drop.add(int(grp[-1]))
            policy.append(f"{blk.name}: dropped one row in each of {len(blk.groups)} declared groups")
        else:
            dups = _duplicate_rows(C)
            drop.update(int(i) for i in dups)
            if len(dups):
                policy.append(f"{blk.name}: removed {len(dups)} duplicate rows")
            keep_mask = np.ones(C.shape[0], dtype=bool)
            keep_mask[dups] = False
            sub = np.flatnonzero(keep_mask)
            comps = [sub[c] for c in _zero_sum_components(C[sub])]
            if comps and blk.redundancy == "strict":
                raise RankError(
                    f"constraint block {blk.name!r} has {len(comps)} dependent row set(s); "
                    "add a gauge or choose a redundancy policy",
                    block=blk.name,
                )
            if comps and blk.redundancy == "gauge" and gauge_mode == "border":
                w = np.ones(C.shape[0]) if blk.weights is None else np.asarray(blk.weights)
                for rows in comps:
                    border_cols.append((len(layout), rows, w[rows]))
                policy.append(f"{blk.name}: bordered by {len(comps)} weighted-mean rows")
            elif comps:
                for rows in comps:
                    drop.add(int(rows[-1]))
                    if blk.redundancy == "gauge":
                        w = np.ones(C.shape[0]) if blk.weights is None else np.asarray(blk.weights)
                        shifts.append((rows, w[rows]))
                policy.append(f"{blk.name}: eliminated {len(comps)} redundant rows ({blk.redundancy})")
        keep = np.ones(C.shape[0], dtype=bool)
        keep[list(drop)] = False
        kept = np.flatnonzero(keep)
        rows_out.append(C[kept])
        rhs_out.append(r[kept])
        layout.append(_BlockLayout(blk.name, C.shape[0], kept, shifts))

    C_all = sp.vstack(rows_out, format="csr") if rows_out else sp.csr_matrix((0, n))
    r_all = np.concatenate(rhs_out) if rhs_out else np.zeros(0)
    border = None
    if border_cols:
        data = np.zeros((C_all.shape[0], len(border_cols)))
        for j, (bi, rows, w) in enumerate(border_cols):
            start = sum(len(bl.kept) for bl in layout[:bi])
            kept = layout[bi].kept
            col = np.zeros(layout[bi].n_rows)
            col[rows] = w
            data[start:start + len(kept), j] = col[kept]
        border = sp.csr_matrix(data)
    return SaddleSystem(M, C_all.tocsr(), g, r_all, layout, policy, border)


def _relative_residual(K, x, b) -> float:
    nb = np.linalg.norm(b)
    res = np.linalg.norm(K @ x - b)
    return 0.0 if nb == 0 and res == 0 else res / (nb if nb > 0 else 1.0)


def solve(system: SaddleSystem, tol: float = DEFAULT_TOL, g=None, r=None):
    """Return ``(primal, multipliers_by_block, SolveReport)``.

    ``g`` and ``r`` override the stored right-hand sides (``r`` in the
    reduced row numbering, see :func:`reduced_rhs`), reusing the
    factorization.
    """
    t0 = time.perf_counter()
    lu = system.factorize()
    K = system.kkt_matrix()
    b = system.rhs(g, r)
    if not np.any(b):
        x = np.zeros_like(b)
        res, steps = 0.0, 0
    else:
        x = lu.solve(b)
        res = _relative_residual(K, x, b)
        steps = 0
        while res > 0.01 * tol and steps < 3:
            x_new = x + lu.solve(b - K @ x)
            res_new = _relative_residual(K, x_new, b)
            steps += 1
            if res_new >= res:
                break
            x, res = x_new, res_new
    report = SolveReport(
        res, system.n, system.m, lu.L.nnz + lu.U.nnz, steps, time.perf_counter() - t0
    )
    if not np.isfinite(res) or res > tol:
        raise SolverFailure(f"KKT residual {res:.2e} exceeds tolerance {tol:.1e}", report)
    primal = x[: system.n]
    lam = x[system.n: system.n + system.m]
    multipliers = {}
    offset = 0
    for bl in system.layout:
        full = np.zeros(bl.n_rows)
        full[bl.kept] = lam[offset: offset + len(bl.kept)]
        offset += len(bl.kept)
        for rows, w in bl.shifts:
            full[rows] -= np.dot(w, full[rows]) / np.sum(w)
        multipliers[bl.name] = full
    return primal, multipliers, report


def reduced_rhs(system: SaddleSystem, full_rhs: dict[str, np.ndarray]) -> np.ndarray:
    """Map per-block constraint right-hand sides onto the kept rows."""
    parts = []
    for bl in system.layout:
        r = full_rhs.get(bl.name)
        parts.append(np.zeros(len(bl.kept)) if r is None else np.asarray(r)[bl.kept])
    return np.concatenate(parts) if parts else np.zeros(0)


def solve_dense(K: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense symmetric-indefinite (LDL^T) solve, used as a reference oracle."""
    import scipy.linalg

    return scipy.linalg.solve(K, b, assume_a="sym")
