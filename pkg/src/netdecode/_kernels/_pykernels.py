"""Reference (numpy) implementations of the hot kernels.

Every function here has a twin of the same name and signature in
``_ckernels.pyx``; the two must agree to rounding.
"""
import numpy as np

OPTIMAL = 0
UNBOUNDED = 1
PIVOT_LIMIT = 2


def simplex_pivots(M, c, allowed, basis, Binv, xB, max_pivots, tol, bland, stall, stall_limit, csc=None):
    """Run up to ``max_pivots`` revised-simplex pivots in place.

    ``M`` is the dense (rows x cols) constraint matrix, ``Binv`` the explicit
    basis inverse and ``xB`` the basic values.  Entering column: most negative
    reduced cost (Dantzig) until ``stall_limit`` consecutive degenerate pivots
    have been taken, then Bland's smallest-index rule for the rest of the solve.
    Leaving row: minimum ratio, ties to the smallest basic column index.

    ``csc`` (a sparse copy of ``M``) is accepted for signature parity with
    the compiled twin and ignored here.  Returns ``(status, pivots, bland, stall)``.
    """
    rows = M.shape[0]
    is_basic = np.zeros(M.shape[1], dtype=bool)
    is_basic[basis] = True
    pivots = 0
    while pivots < max_pivots:
        y = c[basis] @ Binv
        d = c - y @ M
        cand = allowed & ~is_basic & (d < -tol)
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return OPTIMAL, pivots, bland, stall
        if bland:
            j = int(idx[0])
        else:
            j = int(idx[np.argmin(d[idx])])
        col = Binv @ M[:, j]
        pos = col > tol
        if not pos.any():
            return UNBOUNDED, pivots, bland, stall
        ratios = np.full(rows, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / col[pos]
        tmin = ratios.min()
        ties = np.flatnonzero(ratios <= tmin)
        r = int(ties[np.argmin(basis[ties])])
        t = ratios[r]
        alpha = col[r]
        xB -= t * col
        xB[r] = t
        piv_row = Binv[r] / alpha
        Binv -= np.outer(col, piv_row)
        Binv[r] = piv_row
        is_basic[basis[r]] = False
        is_basic[j] = True
        basis[r] = j
        pivots += 1
        if t <= tol:
            stall += 1
            if stall >= stall_limit:
                bland = True
        else:
            stall = 0
    return PIVOT_LIMIT, pivots, bland, stall


def hard_threshold(v, k):
    """Keep the k largest-magnitude entries; ties go to the lowest index."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    if k <= 0:
        return out
    if k >= v.size:
        return v.copy()
    # stable sort on -|v| keeps lower indices first among equal magnitudes
    keep = np.argsort(-np.abs(v), kind="stable")[:k]
    out[keep] = v[keep]
    return out


def iht(Khat, rhs, k, step, max_iters, tol, u0=None):
    """Iterative hard thresholding for ``Khat.T @ u = rhs`` with ``|supp(u)| <= k``.

    Iterates ``u <- H_k(u + step * Khat @ (rhs - Khat.T @ u))`` from ``u0``
    (zero by default).  Returns ``(u, residual_norm, iterations)``.
    """
    Khat = np.asarray(Khat, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if Khat.ndim != 2 or rhs.shape != (Khat.shape[1],):
        raise ValueError("iht: rhs length must equal Khat.shape[1]")
    u = np.zeros(Khat.shape[0]) if u0 is None else np.array(u0, dtype=float)
    if u.shape != (Khat.shape[0],):
        raise ValueError("iht: u0 length must equal Khat.shape[0]")
    res = rhs - Khat.T @ u
    rnorm = float(np.linalg.norm(res))
    it = 0
    while rnorm > tol and it < max_iters:
        u = hard_threshold(u + step * (Khat @ res), k)
        res = rhs - Khat.T @ u
        rnorm = float(np.linalg.norm(res))
        it += 1
    return u, rnorm, it


def decode_nodal(mu_hat, c, eps):
    """Nodal status codes: 1 = at upper bound, -1 = at zero, 0 = interior."""
    gap = np.asarray(mu_hat, dtype=float) - np.asarray(c, dtype=float)
    out = np.zeros(gap.shape, dtype=np.int8)
    out[gap > eps] = 1
    out[gap < -eps] = -1
    return out
