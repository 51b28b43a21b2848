import math

import numpy as np
import pytest

from bgsindy.features import Variable, parse
from bgsindy.linmodel import (
    NEG_INF,
    GaussianEvidence,
    InvalidFeatureError,
    ModelGamma,
    RankDeficientError,
    build_design,
    design_matrix,
    fit_posterior_mode,
    log_marginal_likelihood,
    log_model_prior,
)
from bgsindy.systems import build_dataset, get_system

from oracles import grid_log_evidence, random_tiny_problem

HAND_VALUE_1 = -0.5 * math.log(2 * math.pi) - 0.5 * math.log(2.0)  # -1.2655121...


@pytest.fixture(scope="module")
def toy_dataset():
    """Three-variable toy trajectory with easy splits."""
    return build_dataset(
        get_system("Linear3D"),
        dt=1e-3,
        horizon=2.0,
        noise_sd=0.1,
        noise_seed=5,
        split_sizes=(120, 60, 30),
        split_seed=6,
    )


class TestBuildDesign:
    def test_literal_columns(self):
        states = np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        X = design_matrix([Variable(0)], states)
        assert np.array_equal(X, np.array([[1.0, 1], [1, 2], [1, 3]]))

    def test_empty_feature_set_is_intercept_only(self):
        X = design_matrix([], np.zeros((4, 3)))
        assert np.array_equal(X, np.ones((4, 1)))

    def test_guard_violation_flags_feature(self):
        states = np.array([[1.0, 0, 0], [0.0, 0, 0]])
        with pytest.raises(InvalidFeatureError) as err:
            design_matrix([parse("pow-1(x0)")], states)
        assert err.value.feature_key == "pow-1(x0)"

    def test_dataset_signature(self, toy_dataset):
        X, y = build_design([Variable(2)], toy_dataset, "train", 2)
        assert X.shape == (120, 2)
        assert len(y) == 120
        assert np.array_equal(X[:, 1], toy_dataset.split_states("train")[:, 2])


class TestLogMarginalLikelihood:
    def test_hand_case_zero_rss(self):
        X = np.ones((2, 1))
        assert log_marginal_likelihood(X, np.array([1.0, 1.0])) == pytest.approx(
            HAND_VALUE_1, abs=1e-6
        )

    def test_hand_case_rss_two(self):
        X = np.ones((2, 1))
        assert log_marginal_likelihood(X, np.array([0.0, 2.0])) == pytest.approx(
            HAND_VALUE_1 - 1.0, abs=1e-6
        )

    def test_decreases_with_rss(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        rng = np.random.default_rng(0)
        y = X @ np.array([1.0, 2.0])
        low = log_marginal_likelihood(X, y + 0.01 * rng.normal(size=10))
        high = log_marginal_likelihood(X, y + 2.0 * rng.normal(size=10))
        assert high < low

    def test_duplicate_column_hits_rank_guard(self):
        rng = np.random.default_rng(1)
        col = rng.normal(size=20)
        X = np.column_stack([np.ones(20), col, col])
        assert log_marginal_likelihood(X, rng.normal(size=20)) == NEG_INF

    def test_n_le_p_sentinel(self):
        X = np.ones((2, 2))
        X[:, 1] = [1.0, 2.0]
        assert log_marginal_likelihood(X, np.array([1.0, 2.0])) == NEG_INF

    def test_grid_quadrature_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            X, y = random_tiny_problem(rng)
            closed = log_marginal_likelihood(X, y)
            quad = grid_log_evidence(X, y)
            assert closed == pytest.approx(quad, abs=1e-5)


class TestModelPrior:
    def test_empty_model(self):
        assert log_model_prior(0, [1, 2, 3], psi=2.0) == 0.0

    def test_single_feature(self):
        assert log_model_prior(0b1, [2], psi=2.0) == -4.0

    def test_monotone_decrease(self):
        comp = [1, 2, 3]
        for mask in range(8):
            for k in range(3):
                if not mask >> k & 1:
                    assert log_model_prior(mask | 1 << k, comp, 2.0) < log_model_prior(
                        mask, comp, 2.0
                    )

    def test_iterable_gamma(self):
        assert log_model_prior([1, 0, 1], [1, 2, 3], psi=1.0) == -4.0


class TestFitPosteriorMode:
    def test_exact_line(self):
        X = np.array([[1.0, 1], [1, 2], [1, 3]])
        fit = fit_posterior_mode(X, np.array([2.0, 4.0, 6.0]))
        assert fit.beta == pytest.approx([0.0, 2.0], abs=1e-12)
        assert fit.rss == pytest.approx(0.0, abs=1e-20)

    def test_intercept_only_mean(self):
        fit = fit_posterior_mode(np.ones((2, 1)), np.array([0.0, 2.0]))
        assert fit.beta == pytest.approx([1.0])
        assert fit.rss == pytest.approx(2.0)

    def test_rank_deficient_raises(self):
        col = np.arange(5.0)
        X = np.column_stack([np.ones(5), col, col])
        with pytest.raises(RankDeficientError):
            fit_posterior_mode(X, col)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(50), rng.normal(size=(50, 3))])
        y = rng.normal(size=50)
        fit = fit_posterior_mode(X, y)
        resid = y - X @ fit.beta
        assert np.abs(X.T @ resid).max() < 1e-6

    def test_noiseless_linear_eq2_recovers_coefficient(self):
        dataset = build_dataset(
            get_system("Linear3D"),
            dt=1e-4,
            horizon=2.0,
            noise_sd=0.0,
            noise_seed=0,
            split_sizes=(1000, 200, 100),
            split_seed=1,
        )
        X, y = build_design([Variable(2)], dataset, "train", 2)
        fit = fit_posterior_mode(X, y)
        assert fit.beta[0] == pytest.approx(0.0, abs=1e-6)
        assert fit.beta[1] == pytest.approx(-3.0, abs=1e-6)


class TestNestedModels:
    def test_rss_monotone_in_columns(self):
        rng = np.random.default_rng(9)
        X = np.column_stack([np.ones(40), rng.normal(size=(40, 4))])
        y = rng.normal(size=40)
        prev = None
        for p in range(1, 6):
            fit = fit_posterior_mode(X[:, :p], y)
            if prev is not None:
                assert fit.rss <= prev + 1e-9
            prev = fit.rss


class TestGaussianEvidence:
    def test_cache_coherence(self):
        rng = np.random.default_rng(21)
        states = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        ev = GaussianEvidence(states, y, psi=2.0)
        feats = [Variable(0), Variable(1)]
        first = ev.score_features(feats)
        fresh = GaussianEvidence(states, y, psi=2.0).score_features(feats)
        assert first == ev.score_features(feats)
        assert first[0] == pytest.approx(fresh[0], abs=1e-10)
        assert first[1] == fresh[1]

    def test_model_gamma_posterior(self):
        rng = np.random.default_rng(22)
        states = rng.normal(size=(25, 3))
        y = states[:, 0] * 2 + rng.normal(size=25) * 0.1
        ev = GaussianEvidence(states, y, psi=2.0)
        model = ModelGamma(feature_keys=("x0", "x1"), gamma=0b01)
        lp = ev.log_unnormalized_posterior(model)
        X = np.column_stack([np.ones(25), states[:, 0]])
        assert model.log_marginal == pytest.approx(log_marginal_likelihood(X, y), abs=1e-10)
        assert model.log_prior == -2.0
        assert lp == model.log_posterior

    def test_invalid_feature_gives_neg_inf(self):
        states = np.array([[1.0, 0, 0], [0.0, 1, 0], [2.0, 2, 1], [3.0, 1, 2]])
        y = np.array([1.0, 2, 3, 4])
        ev = GaussianEvidence(states, y, psi=2.0)
        model = ModelGamma(feature_keys=("pow-1(x0)",), gamma=0b1)
        assert ev.log_unnormalized_posterior(model) == NEG_INF

    def test_empty_model_equals_intercept_only(self):
        rng = np.random.default_rng(30)
        states = rng.normal(size=(12, 3))
        y = rng.normal(size=12)
        ev = GaussianEvidence(states, y, psi=2.0)
        log_ml, log_prior = ev.score_features([])
        assert log_prior == 0.0
        assert log_ml == pytest.approx(
            log_marginal_likelihood(np.ones((12, 1)), y), abs=1e-12
        )

    def test_three_feature_exhaustive_recompute(self):
        rng = np.random.default_rng(33)
        states = rng.normal(size=(40, 3))
        y = states[:, 1] - 0.5 * states[:, 2] + 0.05 * rng.normal(size=40)
        ev = GaussianEvidence(states, y, psi=2.0)
        feats = [Variable(0), Variable(1), Variable(2)]
        for mask in range(8):
            chosen = [f for i, f in enumerate(feats) if mask >> i & 1]
            log_ml, log_prior = ev.score_features(chosen)
            X = np.column_stack([np.ones(40)] + [states[:, f.index] for f in chosen])
            assert log_ml == pytest.approx(log_marginal_likelihood(X, y), abs=1e-10)
            assert log_prior == -2.0 * len(chosen)
