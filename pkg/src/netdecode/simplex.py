"""Two-phase revised simplex for ``min c'z  s.t.  M z = b, z >= 0``.

The basis inverse is kept explicitly and updated by rank-one eta steps in
the pivot kernel; it is rebuilt from scratch every ``refactor_every`` pivots.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csc_matrix

from . import _kernels
from .errors import Infeasible, Unbounded

ZERO_TOL = 1e-9


@dataclass
class LPResult:
    z: np.ndarray
    objective: float
    basis: np.ndarray       # column index per row (>= cols means artificial)
    Binv: np.ndarray        # inverse of M[:, basis] in the caller's row orientation
    y: np.ndarray           # row duals, c_B' B^-1
    reduced_costs: np.ndarray
    pivots: int
    phase1_pivots: int
    core_time: float


def unit_columns(M):
    """For each row, the lowest-index column equal to +-e_row (or -1), with its sign."""
    rows, cols = M.shape
    nz = M != 0
    single = np.flatnonzero(nz.sum(axis=0) == 1)
    owner = np.full(rows, -1, dtype=np.int64)
    sign = np.zeros(rows)
    if single.size:
        r_of = nz[:, single].argmax(axis=0)
        vals = M[r_of, single]
        for j, r, v in zip(single[::-1], r_of[::-1], vals[::-1]):
            if abs(abs(v) - 1.0) < 1e-12:
                owner[r] = j
                sign[r] = v
    return owner, sign


def solve_lp(M, b, c, *, units=None, tol=ZERO_TOL, refactor_every=50, stall_limit=50,
             max_pivots=None, kernels=None) -> LPResult:
    """Solve the standard-form LP; raise :class:`Infeasible` or :class:`Unbounded`.

    ``units`` may pass a cached ``unit_columns(M)`` result.
    """
    k = kernels if kernels is not None else _kernels
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    rows, cols = M.shape
    flip = np.where(b < 0, -1.0, 1.0)
    bf = b * flip
    owner, usign = units if units is not None else unit_columns(M)
    usable = (owner >= 0) & (usign * flip > 0)
    art_rows = np.flatnonzero(~usable)
    n_art = art_rows.size

    Maug = np.zeros((rows, cols + n_art))
    Maug[:, :cols] = M * flip[:, None]
    Maug[art_rows, cols + np.arange(n_art)] = 1.0
    basis = np.where(usable, owner, 0).astype(np.int64)
    basis[art_rows] = cols + np.arange(n_art)
    Binv = np.eye(rows)
    xB = bf.copy()
    scale = max(1.0, float(np.abs(bf).max(initial=0.0)))
    ptol = tol * scale
    if max_pivots is None:
        max_pivots = 50 * (rows + cols)

    core = 0.0
    allowed = np.ones(cols + n_art, dtype=np.bool_)
    csc = _csc_arrays(Maug)

    def run(cost, allowed, basis, Binv, xB):
        nonlocal core
        total = 0
        bland, stall = False, 0
        while True:
            t0 = time.perf_counter()
            status, piv, bland, stall = k.simplex_pivots(
                Maug, cost, allowed, basis, Binv, xB, refactor_every, tol, bland, stall, stall_limit, csc)
            total += piv
            if status == _kernels.PIVOT_LIMIT:
                Binv[:] = basis_inverse(Maug[:, basis])
                xB[:] = Binv @ bf
            core += time.perf_counter() - t0
            if status != _kernels.PIVOT_LIMIT:
                return status, total
            if total >= max_pivots:
                raise RuntimeError("simplex pivot limit reached")

    phase1 = 0
    if n_art:
        c1 = np.zeros(cols + n_art)
        c1[cols:] = 1.0
        status, phase1 = run(c1, allowed, basis, Binv, xB)
        infeas = float(xB[basis >= cols].sum())
        if infeas > ptol * max(1, n_art):
            raise Infeasible(f"phase-1 optimum {infeas:.3e} > 0")
        t0 = time.perf_counter()
        _drive_out_artificials(Maug, cols, basis, Binv, xB, tol)
        core += time.perf_counter() - t0

    c2 = np.zeros(cols + n_art)
    c2[:cols] = c
    allowed[cols:] = False
    status, phase2 = run(c2, allowed, basis, Binv, xB)
    if status == _kernels.UNBOUNDED:
        raise Unbounded("no ratio-test limit for an improving column")

    # clean final state: fresh inverse, original row orientation
    t0 = time.perf_counter()
    Binv_f = basis_inverse(Maug[:, basis])
    core += time.perf_counter() - t0
    xB = Binv_f @ bf
    Binv_orig = Binv_f * flip[None, :]
    z = np.zeros(cols)
    real = basis < cols
    z[basis[real]] = xB[real]
    cB = np.where(real, c2[basis], 0.0)
    y = cB @ Binv_orig
    d = c - M.T @ y
    return LPResult(
        z=z,
        objective=float(c @ z),
        basis=basis.copy(),
        Binv=Binv_orig,
        y=y,
        reduced_costs=d,
        pivots=phase1 + phase2,
        phase1_pivots=phase1,
        core_time=core,
    )


def _csc_arrays(M):
    S = csc_matrix(M)
    S.sort_indices()
    return (S.indptr.astype(np.int64), S.indices.astype(np.int64),
            np.ascontiguousarray(S.data, dtype=np.float64))


def basis_inverse(B):
    """Inverse of a basis matrix, exploiting columns that are scaled unit vectors.

    With unit columns (rows R1) and the rest (rows R2) ordered first and last,
    B = [[D, B12], [0, B22]] and only the square block B22 needs a dense inverse.
    """
    rows = B.shape[0]
    nz = B != 0
    unit = np.flatnonzero(nz.sum(axis=0) == 1)
    r1 = nz[:, unit].argmax(axis=0)
    # a row can own at most one unit column in an invertible basis
    if np.unique(r1).size != r1.size:
        return np.linalg.inv(B)
    other = np.setdiff1d(np.arange(rows), unit, assume_unique=True)
    r2 = np.setdiff1d(np.arange(rows), r1, assume_unique=True)
    Binv = np.zeros_like(B)
    dinv = 1.0 / B[r1, unit]
    if other.size:
        B22inv = np.linalg.inv(B[np.ix_(r2, other)])
        Binv[np.ix_(other, r2)] = B22inv
        Binv[np.ix_(unit, r2)] = -(dinv[:, None] * B[np.ix_(r1, other)]) @ B22inv
    Binv[unit, r1] = dinv
    return Binv


def _drive_out_artificials(Maug, cols, basis, Binv, xB, tol):
    """Pivot zero-level artificials out of the basis where a real column allows it.

    An artificial that cannot leave sits on a redundant row; its value stays 0.
    """
    is_basic = np.zeros(Maug.shape[1], dtype=bool)
    is_basic[basis] = True
    for r in np.flatnonzero(basis >= cols):
        row = Binv[r] @ Maug[:, :cols]
        row[is_basic[:cols]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= 1e-7:
            continue
        col = Binv @ Maug[:, j]
        alpha = col[r]
        t = xB[r] / alpha
        xB -= t * col
        xB[r] = t
        piv = Binv[r] / alpha
        Binv -= np.outer(col, piv)
        Binv[r] = piv
        is_basic[basis[r]] = False
        is_basic[j] = True
        basis[r] = j
