import numpy as np
import pytest

from bgsindy import _gausscore_py, kernels

try:
    from bgsindy import _gausscore

    HAVE_CYTHON = True
except ImportError:
    HAVE_CYTHON = False

needs_cython = pytest.mark.skipif(not HAVE_CYTHON, reason="compiled kernel not built")


def random_problem(rng, n=200, q=12):
    Z = np.column_stack([np.ones(n), rng.normal(size=(n, q))])
    beta = np.zeros(q + 1)
    beta[1:4] = [1.5, -2.0, 0.5]
    y = Z @ beta + rng.normal(size=n)
    gram = np.ascontiguousarray(Z.T @ Z)
    xty = np.ascontiguousarray(Z.T @ y)
    return gram, xty, float(y @ y), n, q


@needs_cython
class TestBackendParity:
    def test_random_subsets_agree(self):
        rng = np.random.default_rng(77)
        gram, xty, yty, n, q = random_problem(rng)
        for _ in range(300):
            mask = int(rng.integers(0, 1 << q))
            cols = np.array([0] + [i + 1 for i in range(q) if mask >> i & 1], dtype=np.int64)
            s_c, ld_c, rss_c = _gausscore.subset_score(gram, xty, yty, n, cols, 1e-10)
            s_p, ld_p, rss_p = _gausscore_py.subset_score(gram, xty, yty, n, cols, 1e-10)
            assert s_c == s_p == 0
            assert ld_c == pytest.approx(ld_p, rel=1e-12, abs=1e-12)
            assert rss_c == pytest.approx(rss_p, rel=1e-10, abs=1e-10)

    def test_rank_deficient_agreement(self):
        rng = np.random.default_rng(78)
        n = 100
        col = rng.normal(size=n)
        Z = np.column_stack([np.ones(n), col, col])
        y = rng.normal(size=n)
        gram = np.ascontiguousarray(Z.T @ Z)
        xty = np.ascontiguousarray(Z.T @ y)
        cols = np.arange(3, dtype=np.int64)
        s_c, *_ = _gausscore.subset_score(gram, xty, float(y @ y), n, cols, 1e-10)
        s_p, *_ = _gausscore_py.subset_score(gram, xty, float(y @ y), n, cols, 1e-10)
        assert s_c == s_p == 1

    def test_too_few_rows(self):
        gram = np.eye(3)
        xty = np.ones(3)
        cols = np.arange(3, dtype=np.int64)
        s_c, *_ = _gausscore.subset_score(gram, xty, 1.0, 3, cols, 1e-10)
        s_p, *_ = _gausscore_py.subset_score(gram, xty, 1.0, 3, cols, 1e-10)
        assert s_c == s_p == 2

    def test_oversized_subset_reports_status(self):
        n = 200
        q = 70
        rng = np.random.default_rng(79)
        Z = np.column_stack([np.ones(n), rng.normal(size=(n, q))])
        y = rng.normal(size=n)
        gram = np.ascontiguousarray(Z.T @ Z)
        xty = np.ascontiguousarray(Z.T @ y)
        cols = np.arange(q + 1, dtype=np.int64)
        s_c, *_ = _gausscore.subset_score(gram, xty, float(y @ y), n, cols, 1e-10)
        assert s_c == kernels.STATUS_TOO_LARGE
        s_p, *_ = _gausscore_py.subset_score(gram, xty, float(y @ y), n, cols, 1e-10)
        assert s_p == kernels.STATUS_OK


class TestBackendSelection:
    def test_active_backend_exposed(self):
        assert kernels.BACKEND in ("cython", "python")
        assert callable(kernels.subset_score)

    def test_python_fallback_env(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", "from bgsindy import kernels; print(kernels.BACKEND)"],
            env={"PATH": "/usr/bin:/bin", "BGNLM_SINDY_KERNEL": "python"},
            capture_output=True,
            text=True,
        )
        assert out.stdout.strip() == "python"
