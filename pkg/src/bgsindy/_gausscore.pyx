# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gaussian subset-scoring kernel.

Scores a least-squares fit restricted to a column subset of a
precomputed Gram matrix: Cholesky factorization with a relative pivot
guard, log-determinant and residual sum of squares.  This is the hot
inner operation of the model-space samplers; bgsindy._gausscore_py holds
the drop-in numpy fallback.
"""

from libc.math cimport log, sqrt

STATUS_OK = 0
STATUS_RANK_DEFICIENT = 1
STATUS_TOO_FEW_ROWS = 2
STATUS_TOO_LARGE = 3

# stack scratch bounds the subset size; larger subsets use the fallback
DEF MAX_P = 64


def subset_score(double[:, ::1] gram, double[::1] xty, double yty,
                 Py_ssize_t n_rows, long long[::1] cols, double rel_tol):
    """Score the LS fit on gram[cols, cols].

    Returns (status, logdet, rss).  status 0 = ok, 1 = a Cholesky pivot
    fell to or below rel_tol times the largest subset diagonal,
    2 = n_rows <= p, 3 = subset too large for the compiled kernel.
    """
    cdef Py_ssize_t p = cols.shape[0]
    cdef Py_ssize_t i, j, k, ci
    cdef double A[MAX_P * MAX_P]
    cdef double w[MAX_P]
    cdef double maxdiag, tol, s, d, logdet, rss

    if n_rows <= p:
        return (STATUS_TOO_FEW_ROWS, 0.0, 0.0)
    if p > MAX_P:
        return (STATUS_TOO_LARGE, 0.0, 0.0)

    maxdiag = 0.0
    for i in range(p):
        ci = cols[i]
        d = gram[ci, ci]
        if d > maxdiag:
            maxdiag = d
        for j in range(i + 1):
            A[i * p + j] = gram[ci, cols[j]]
    tol = rel_tol * maxdiag

    logdet = 0.0
    for k in range(p):
        d = A[k * p + k]
        for j in range(k):
            d -= A[k * p + j] * A[k * p + j]
        if d <= tol:
            return (STATUS_RANK_DEFICIENT, 0.0, 0.0)
        logdet += log(d)
        d = sqrt(d)
        A[k * p + k] = d
        for i in range(k + 1, p):
            s = A[i * p + k]
            for j in range(k):
                s -= A[i * p + j] * A[k * p + j]
            A[i * p + k] = s / d

    rss = yty
    for i in range(p):
        s = xty[cols[i]]
        for j in range(i):
            s -= A[i * p + j] * w[j]
        w[i] = s / A[i * p + i]
        rss -= w[i] * w[i]
    if rss < 0.0:
        rss = 0.0
    return (STATUS_OK, logdet, rss)
