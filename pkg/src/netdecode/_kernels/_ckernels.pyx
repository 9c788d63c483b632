# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Matrices arrive C-contiguous; BLAS sees them as their transposes in
column-major order, which is why the gemv/ger calls below look flipped.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY
from scipy.linalg.cython_blas cimport dgemv, dger

cnp.import_array()

DEF OPTIMAL = 0
DEF UNBOUNDED = 1
DEF PIVOT_LIMIT = 2


def simplex_pivots(const double[:, ::1] M, const double[::1] c, const cnp.npy_bool[::1] allowed,
                   cnp.int64_t[::1] basis, double[:, ::1] Binv, double[::1] xB,
                   int max_pivots, double tol, bint bland, int stall, int stall_limit, csc=None):
    # ``csc`` = (indptr, indices, data) of M; pricing and the entering column
    # use it, so only the rank-one inverse update touches dense memory.
    if csc is None:
        csc = _csc(M)
    cdef const cnp.int64_t[::1] Mp = csc[0]
    cdef const cnp.int64_t[::1] Mi = csc[1]
    cdef const double[::1] Mx = csc[2]
    cdef int rows = M.shape[0]
    cdef int cols = M.shape[1]
    cdef double[::1] y = np.empty(rows)
    cdef double[::1] cB = np.empty(rows)
    cdef double[::1] col = np.empty(rows)
    cdef double[::1] prow = np.empty(rows)
    cdef cnp.npy_bool[::1] is_basic = np.zeros(cols, dtype=np.bool_)
    cdef int i, j, r, pivots = 0, inc = 1
    cdef cnp.int64_t p, k
    cdef double one = 1.0, zero = 0.0, minus_one = -1.0
    cdef double best, t, ratio, alpha, xi, dj, dval, s
    cdef char trans_n_c = b'N'

    for i in range(rows):
        is_basic[basis[i]] = True
        cB[i] = c[basis[i]]
    # y = Binv^T cB ; Binv is (Binv^T) in column-major
    dgemv(&trans_n_c, &rows, &rows, &one, &Binv[0, 0], &rows, &cB[0], &inc, &zero, &y[0], &inc)

    while pivots < max_pivots:
        j = -1
        best = -tol
        dj = 0.0
        for i in range(cols):
            if not allowed[i] or is_basic[i]:
                continue
            s = c[i]
            for p in range(Mp[i], Mp[i + 1]):
                s -= Mx[p] * y[Mi[p]]
            if s < -tol:
                if bland:
                    j = i
                    dj = s
                    break
                if s < best:
                    best = s
                    dj = s
                    j = i
        if j < 0:
            return OPTIMAL, pivots, bland, stall

        # col = Binv a_j, a_j sparse
        for i in range(rows):
            dval = 0.0
            for p in range(Mp[j], Mp[j + 1]):
                dval += Binv[i, Mi[p]] * Mx[p]
            col[i] = dval

        r = -1
        t = INFINITY
        for i in range(rows):
            if col[i] > tol:
                xi = xB[i] if xB[i] > 0.0 else 0.0
                ratio = xi / col[i]
                if ratio < t or (ratio == t and basis[i] < basis[r]):
                    t = ratio
                    r = i
        if r < 0:
            return UNBOUNDED, pivots, bland, stall

        alpha = col[r]
        for i in range(rows):
            xB[i] -= t * col[i]
        xB[r] = t
        for i in range(rows):
            prow[i] = Binv[r, i] / alpha
            y[i] += dj * prow[i]
        col[r] -= 1.0
        # Binv -= (col - e_r) prow^T  (as column-major Binv^T: += -prow col'^T)
        dger(&rows, &rows, &minus_one, &prow[0], &inc, &col[0], &inc, &Binv[0, 0], &rows)
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


def _csc(M):
    from scipy.sparse import csc_matrix
    S = csc_matrix(np.asarray(M))
    S.sort_indices()
    return (S.indptr.astype(np.int64), S.indices.astype(np.int64), np.ascontiguousarray(S.data, dtype=np.float64))


def hard_threshold(v, Py_ssize_t k):
    cdef const double[::1] src = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t size = src.shape[0]
    out = np.zeros(size)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    if k <= 0:
        return out
    if k >= size:
        return np.array(src, copy=True)
    _threshold_into(src, k, o)
    return out


cdef void _threshold_into(const double[::1] src, Py_ssize_t k, double[::1] out):
    # stable selection: argsort on -|v| keeps lower indices first among ties
    order = np.argsort(-np.abs(np.asarray(src)), kind="stable")
    cdef cnp.int64_t[::1] idx = order.astype(np.int64)
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] = 0.0
    for i in range(k):
        out[idx[i]] = src[idx[i]]


def iht(Khat, rhs, Py_ssize_t k, double step, int max_iters, double tol, u0=None):
    cdef const double[:, ::1] K = np.ascontiguousarray(Khat, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef int m = K.shape[0]
    cdef int nr = K.shape[1]
    if b.shape[0] != nr:
        raise ValueError("iht: rhs length must equal Khat.shape[1]")
    u_arr = np.zeros(m) if u0 is None else np.array(u0, dtype=np.float64, copy=True)
    if u_arr.shape != (m,):
        raise ValueError("iht: u0 length must equal Khat.shape[0]")
    cdef double[::1] u = u_arr
    cdef double[::1] res = np.array(b, copy=True)
    cdef double[::1] g = np.empty(m)
    cdef double[::1] tmp = np.empty(m)
    cdef int it = 0, inc = 1, i
    cdef double one = 1.0, zero = 0.0, minus_one = -1.0, rnorm = 0.0
    cdef char trans_n = b'N', trans_t = b'T'
    if u0 is not None:
        dgemv(&trans_n, &nr, &m, &minus_one, &K[0, 0], &nr, &u[0], &inc, &one, &res[0], &inc)
    for i in range(nr):
        rnorm += res[i] * res[i]
    rnorm = sqrt(rnorm)
    if k >= m:
        k = m
    while rnorm > tol and it < max_iters:
        # g = K res ; K is (K^T) column-major with leading dim nr
        dgemv(&trans_t, &nr, &m, &one, &K[0, 0], &nr, &res[0], &inc, &zero, &g[0], &inc)
        for i in range(m):
            tmp[i] = u[i] + step * g[i]
        if k <= 0:
            for i in range(m):
                u[i] = 0.0
        else:
            _threshold_into(tmp, k, u)
        # res = b - K^T u
        for i in range(nr):
            res[i] = b[i]
        dgemv(&trans_n, &nr, &m, &minus_one, &K[0, 0], &nr, &u[0], &inc, &one, &res[0], &inc)
        rnorm = 0.0
        for i in range(nr):
            rnorm += res[i] * res[i]
        rnorm = sqrt(rnorm)
        it += 1
    return u_arr, rnorm, it


def decode_nodal(mu_hat, c, double eps):
    cdef const double[::1] mu = np.ascontiguousarray(mu_hat, dtype=np.float64)
    cdef const double[::1] cc = np.ascontiguousarray(c, dtype=np.float64)
    out = np.zeros(mu.shape[0], dtype=np.int8)
    cdef cnp.int8_t[::1] o = out
    cdef Py_ssize_t i
    cdef double gap
    for i in range(mu.shape[0]):
        gap = mu[i] - cc[i]
        if gap > eps:
            o[i] = 1
        elif gap < -eps:
            o[i] = -1
    return out
