"""Pure-numpy fallback for the compiled subset-scoring kernel.

Same contract as bgsindy._gausscore.subset_score; used when the Cython
extension is unavailable (or forced via BGNLM_SINDY_KERNEL=python).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

STATUS_OK = 0
STATUS_RANK_DEFICIENT = 1
STATUS_TOO_FEW_ROWS = 2


def subset_score(gram, xty, yty, n_rows, cols, rel_tol):
    """Score the LS fit on gram[cols, cols]; returns (status, logdet, rss)."""
    cols = np.asarray(cols)
    p = len(cols)
    if n_rows <= p:
        return STATUS_TOO_FEW_ROWS, 0.0, 0.0
    sub = gram[np.ix_(cols, cols)]
    maxdiag = sub.diagonal().max()
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        return STATUS_RANK_DEFICIENT, 0.0, 0.0
    diag = np.diagonal(chol)
    pivots = diag * diag
    if pivots.min() <= rel_tol * maxdiag:
        return STATUS_RANK_DEFICIENT, 0.0, 0.0
    w = solve_triangular(chol, xty[cols], lower=True, check_finite=False)
    rss = yty - float(w @ w)
    if rss < 0.0:
        rss = 0.0
    logdet = float(2.0 * np.log(diag).sum())
    return STATUS_OK, logdet, rss
