"""Scoring-kernel backend selection.

Prefers the compiled Cython kernel; falls back to the numpy twin when
the extension is missing.  BGNLM_SINDY_KERNEL=python forces the
fallback (useful for the kernel benchmark and parity tests).
"""

from __future__ import annotations

import os

from bgsindy import _gausscore_py

_forced = os.environ.get("BGNLM_SINDY_KERNEL", "").lower()

if _forced == "python":
    _impl = _gausscore_py
    BACKEND = "python"
else:
    try:
        from bgsindy import _gausscore as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "BGNLM_SINDY_KERNEL=cython but the compiled kernel is not built"
            ) from None
        _impl = _gausscore_py
        BACKEND = "python"

subset_score = _impl.subset_score

STATUS_OK = 0
STATUS_RANK_DEFICIENT = 1
STATUS_TOO_FEW_ROWS = 2
STATUS_TOO_LARGE = 3
