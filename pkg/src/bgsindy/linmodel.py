"""Gaussian evidence for feature subsets under unit noise variance.

The probability model per equation j: responses y_i ~ N(f_j(x_i), 1)
with f_j a linear combination of included feature columns plus an
always-on, unpenalized intercept.  Coefficients carry a flat (improper)
prior, so the coefficient-integrated evidence has the closed form

    log p(y | model) = -((n - p)/2) log(2 pi) - 1/2 log det(X'X) - 1/2 RSS

with p the number of design columns (intercept included).  The improper
prior constant is dropped; only ratios across models on the same data
matter.  Model priors are independent Bernoulli penalties
exp(-psi * complexity) per included feature.

Noise variance is fixed at 1 regardless of the injected noise level;
that deliberate misspecification is part of the reproduced protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bgsindy import kernels
from bgsindy import _gausscore_py
from bgsindy.features import Feature, complexity, evaluate_rows, key

LOG_2PI = math.log(2.0 * math.pi)

#: Relative Cholesky pivot tolerance of the rank guard.
RANK_RTOL = 1e-10

#: Default complexity-prior weight.
DEFAULT_PSI = 2.0

NEG_INF = float("-inf")


class InvalidFeatureError(ValueError):
    """A feature hits a domain guard somewhere on the requested rows."""

    def __init__(self, feature_key: str, bad_rows: int):
        super().__init__(f"feature {feature_key} invalid on {bad_rows} rows")
        self.feature_key = feature_key
        self.bad_rows = bad_rows


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray  # intercept first, then one entry per feature
    rss: float
    logdet_gram: float
    n_used: int


@dataclass
class ModelGamma:
    """One inclusion configuration over an ordered feature-key list."""

    feature_keys: tuple[str, ...]
    gamma: int  # bit k set -> feature k included
    log_marginal: float | None = None
    log_prior: float | None = None

    @property
    def log_posterior(self) -> float:
        if self.log_marginal is None or self.log_prior is None:
            raise ValueError("model not scored yet")
        return self.log_marginal + self.log_prior

    def included_keys(self) -> frozenset[str]:
        return frozenset(
            k for i, k in enumerate(self.feature_keys) if self.gamma >> i & 1
        )


def build_design(features, dataset, split: str, equation: int):
    """Design matrix (ones column first) and response for one equation.

    Raises InvalidFeatureError if any feature hits a domain guard on the
    split's states; callers must exclude such features (models holding
    them score -inf).
    """
    states = dataset.split_states(split)
    y = dataset.split_responses(split, equation)
    X = design_matrix(features, states)
    return X, y


def design_matrix(features, states) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    X = np.empty((n, len(features) + 1))
    X[:, 0] = 1.0
    for k, f in enumerate(features):
        col, valid = evaluate_rows(f, states)
        if not valid.all():
            raise InvalidFeatureError(key(f), int((~valid).sum()))
        X[:, k + 1] = col
    return X


def _score_gram(gram, xty, yty, n, cols):
    status, logdet, rss = kernels.subset_score(
        gram, xty, float(yty), n, cols, RANK_RTOL
    )
    if status == kernels.STATUS_TOO_LARGE:
        status, logdet, rss = _gausscore_py.subset_score(
            gram, xty, float(yty), n, cols, RANK_RTOL
        )
    return status, logdet, rss


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray) -> float:
    """Closed-form evidence of the design; -inf when n <= p or the
    rank guard fires (smallest pivot <= 1e-10 x largest diagonal)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    gram = np.ascontiguousarray(X.T @ X)
    xty = np.ascontiguousarray(X.T @ y)
    cols = np.arange(p, dtype=np.int64)
    status, logdet, rss = _score_gram(gram, xty, float(y @ y), n, cols)
    if status != kernels.STATUS_OK:
        return NEG_INF
    return -0.5 * (n - p) * LOG_2PI - 0.5 * logdet - 0.5 * rss


def log_model_prior(gamma, complexities, psi: float = DEFAULT_PSI) -> float:
    """Sum over included features of -psi * complexity (constant dropped).

    gamma may be an int bitmask or an iterable of 0/1 flags aligned with
    complexities.
    """
    if isinstance(gamma, int):
        return -psi * sum(
            c for i, c in enumerate(complexities) if gamma >> i & 1
        )
    return -psi * sum(c for g, c in zip(gamma, complexities) if g)


def fit_posterior_mode(X: np.ndarray, y: np.ndarray) -> FitResult:
    """Posterior-mode coefficients: the least-squares solution via QR.

    Raises RankDeficientError when the rank guard fires.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p:
        raise RankDeficientError(f"n={n} <= p={p}")
    q, r = np.linalg.qr(X)
    rdiag = np.abs(np.diagonal(r))
    gram_diag = (X * X).sum(axis=0)
    if (rdiag * rdiag).min() <= RANK_RTOL * gram_diag.max():
        raise RankDeficientError("design is rank-deficient at tolerance 1e-10")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    logdet = float(2.0 * np.log(rdiag).sum())
    return FitResult(beta=beta, rss=rss, logdet_gram=logdet, n_used=n)


class GaussianEvidence:
    """Evidence oracle for one (states, response) problem.

    Caches feature columns and per-key-set scores so that the same model
    rediscovered by any chain or generation is never recomputed.  Safe
    for get-or-compute sharing: values are deterministic, so a benign
    duplicate computation stores an identical result.
    """

    def __init__(self, states, y, psi: float = DEFAULT_PSI):
        self.states = np.asarray(states, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.states.shape[0] != len(self.y):
            raise ValueError("states and y row counts differ")
        self.n = len(self.y)
        self.yty = float(self.y @ self.y)
        self.psi = float(psi)
        self._columns: dict[str, np.ndarray | None] = {}
        self._scores: dict[frozenset, tuple[float, float]] = {}

    def column(self, feature: Feature):
        """Evaluated column, or None if any row violates a guard."""
        k = key(feature)
        if k not in self._columns:
            col, valid = evaluate_rows(feature, self.states)
            self._columns[k] = col if valid.all() else None
        return self._columns[k]

    def feature_valid(self, feature: Feature) -> bool:
        return self.column(feature) is not None

    def cached_score(self, keyset: frozenset):
        return self._scores.get(keyset)

    def store_score(self, keyset: frozenset, log_ml: float, log_prior: float):
        self._scores[keyset] = (log_ml, log_prior)

    def score_features(self, features) -> tuple[float, float]:
        """(log marginal likelihood, log prior) for a feature set."""
        keyset = frozenset(key(f) for f in features)
        hit = self._scores.get(keyset)
        if hit is not None:
            return hit
        cols = [self.column(f) for f in features]
        log_prior = -self.psi * sum(complexity(f) for f in features)
        if any(c is None for c in cols):
            out = (NEG_INF, log_prior)
        else:
            X = np.column_stack([np.ones(self.n)] + cols)
            out = (log_marginal_likelihood(X, self.y), log_prior)
        self._scores[keyset] = out
        return out

    def log_unnormalized_posterior(self, model: ModelGamma) -> float:
        """Score a model and cache the parts on it; -inf propagates."""
        from bgsindy.features import parse

        feats = [
            parse(k)
            for i, k in enumerate(model.feature_keys)
            if model.gamma >> i & 1
        ]
        log_ml, log_prior = self.score_features(feats)
        model.log_marginal = log_ml
        model.log_prior = log_prior
        return log_ml + log_prior


def evidence_for(dataset, split: str, equation: int, psi: float = DEFAULT_PSI) -> GaussianEvidence:
    return GaussianEvidence(
        dataset.split_states(split),
        dataset.split_responses(split, equation),
        psi=psi,
    )
