import numpy as np
import pytest
from scipy.stats import multivariate_normal

from lvggm.consistency import algebraic_consistency, covariance_error, kl_gaussian, parametric_error
from lvggm.linalg import NotPositiveDefinite
from lvggm.lvmodel import sample_covariance
from lvggm.solver import DecompositionEstimate, SolverConfig, fit, lambda_schedule

from conftest import random_spd


def as_estimate(S, L, gamma=0.35, support_tol=1e-8, rank_tol=1e-8):
    return DecompositionEstimate(np.array(S, float), np.array(L, float), np.nan, 0, 0.0, 0.0, True,
                                 0.1, gamma, support_tol, rank_tol)


def first_edge(S):
    i, j = np.argwhere(np.triu(S, 1) != 0)[0]
    return int(i), int(j)


class TestVerdict:
    def test_truth_is_consistent(self, cycle_truth):
        v = algebraic_consistency(as_estimate(cycle_truth.S_true, cycle_truth.L_true), cycle_truth)
        assert v.sign_pattern_match and v.rank_match and v.realizable and v.algebraically_consistent
        assert v.g_gamma_error == 0.0 and v.sign_mismatches == 0
        assert v.covariance_error_spectral < 1e-10
        assert abs(v.kl_vs_truth) < 1e-10
        assert v.estimated_rank == v.true_rank == 2

    def test_flipped_sign(self, cycle_truth):
        S = cycle_truth.S_true.copy()
        i, j = first_edge(S)
        S[i, j] = S[j, i] = -S[i, j]
        v = algebraic_consistency(as_estimate(S, cycle_truth.L_true), cycle_truth)
        assert not v.sign_pattern_match and not v.algebraically_consistent
        assert v.sign_mismatches == 2
        assert v.rank_match

    def test_extra_rank(self, cycle_truth):
        u = np.zeros(36)
        u[0] = 1.0
        L = cycle_truth.L_true + 1e-3 * np.outer(u, u)
        v = algebraic_consistency(as_estimate(cycle_truth.S_true, L), cycle_truth)
        assert v.estimated_rank == 3 and not v.rank_match
        assert v.sign_pattern_match and not v.algebraically_consistent

    def test_unrealizable(self, cycle_truth):
        L = cycle_truth.L_true + 50.0 * np.eye(36)
        v = algebraic_consistency(as_estimate(cycle_truth.S_true, L, rank_tol=100.0), cycle_truth)
        assert not v.realizable and not v.algebraically_consistent
        assert v.covariance_error_spectral == np.inf and v.kl_vs_truth == np.inf

    def test_composition_law(self, cycle_model, cycle_truth):
        lam = lambda_schedule(36, 3000, scale=8.0)
        for seed in range(6):
            est = fit(sample_covariance(cycle_model, 3000, seed=seed), SolverConfig(lam=lam, gamma=0.35))
            v = algebraic_consistency(est, cycle_truth)
            assert v.algebraically_consistent == (v.sign_pattern_match and v.rank_match and v.realizable)
            assert v.support_tol == est.support_tol and v.rank_tol == est.rank_tol

    def test_threshold_monotonicity(self, cycle_truth):
        S = cycle_truth.S_true.copy()
        S[0, 18] = S[18, 0] = 1e-5  # a spurious small entry
        est = as_estimate(S, cycle_truth.L_true)
        assert not algebraic_consistency(est, cycle_truth).sign_pattern_match
        assert algebraic_consistency(est, cycle_truth, support_tol=1e-4).sign_pattern_match
        # raising the threshold never rescues a genuine sign flip
        i, j = first_edge(S)
        S[i, j] = S[j, i] = -S[i, j]
        for tol in (1e-8, 1e-4, 1e-3):
            assert not algebraic_consistency(as_estimate(S, cycle_truth.L_true), cycle_truth,
                                             support_tol=tol).sign_pattern_match

    def test_shape_mismatch(self, cycle_truth):
        with pytest.raises(ValueError):
            algebraic_consistency(as_estimate(np.eye(3), np.zeros((3, 3))), cycle_truth)

    def test_serializable(self, cycle_truth):
        doc = algebraic_consistency(as_estimate(cycle_truth.S_true, cycle_truth.L_true), cycle_truth).to_dict()
        assert set(doc) >= {"sign_pattern_match", "rank_match", "realizable", "algebraically_consistent",
                            "g_gamma_error", "covariance_error_spectral", "kl_vs_truth"}


class TestErrors:
    def test_parametric_error_examples(self, cycle_truth):
        gamma = 0.35
        assert parametric_error(as_estimate(cycle_truth.S_true, cycle_truth.L_true), cycle_truth, gamma) == 0.0
        S = cycle_truth.S_true.copy()
        S[0, 0] += gamma
        assert parametric_error(as_estimate(S, cycle_truth.L_true), cycle_truth, gamma) == pytest.approx(1.0)

    def test_parametric_error_uses_estimate_gamma(self, cycle_truth):
        S = cycle_truth.S_true.copy()
        S[0, 0] += 0.2
        assert parametric_error(as_estimate(S, cycle_truth.L_true, gamma=0.4), cycle_truth) == pytest.approx(0.5)

    def test_covariance_error_ordering(self, cycle_model, cycle_truth):
        assert covariance_error(as_estimate(cycle_truth.S_true, cycle_truth.L_true), cycle_truth) < 1e-10
        est = fit(sample_covariance(cycle_model, 5000, seed=0),
                  SolverConfig(lam=lambda_schedule(36, 5000, scale=8.0), gamma=0.35))
        corrupted = as_estimate(est.S + 0.5 * np.eye(36), est.L)
        assert covariance_error(corrupted, cycle_truth) > covariance_error(est, cycle_truth)

    def test_covariance_error_singular(self, cycle_truth):
        with pytest.raises(NotPositiveDefinite):
            covariance_error(as_estimate(np.diag([1.0] * 35 + [0.0]), np.zeros((36, 36))), cycle_truth)


class TestKL:
    def test_examples(self, rng):
        A = random_spd(rng, 4)
        assert kl_gaussian(A, A) == pytest.approx(0.0, abs=1e-12)
        assert kl_gaussian([[2.0]], [[1.0]]) == pytest.approx(0.5 * (1 - np.log(2)))
        assert kl_gaussian([[2.0]], [[1.0]]) == pytest.approx(0.15342640972002736)

    def test_monte_carlo_oracle(self, rng):
        # KL(a || b) = E_a[log p_a(x) - log p_b(x)]
        A, B = random_spd(rng, 3), random_spd(rng, 3)
        x = multivariate_normal(cov=A).rvs(size=400_000, random_state=7)
        mc = np.mean(multivariate_normal(cov=A).logpdf(x) - multivariate_normal(cov=B).logpdf(x))
        assert kl_gaussian(A, B) == pytest.approx(mc, abs=0.02)

    def test_nonnegative_and_asymmetric(self):
        rng = np.random.default_rng(99)
        asym = 0
        for _ in range(1000):
            p = int(rng.integers(1, 6))
            A, B = random_spd(rng, p, floor=0.1), random_spd(rng, p, floor=0.1)
            ab, ba = kl_gaussian(A, B), kl_gaussian(B, A)
            assert ab >= -1e-10 and ba >= -1e-10
            asym += abs(ab - ba) > 1e-9
        assert asym > 990

    def test_rejects_bad_input(self):
        with pytest.raises(NotPositiveDefinite):
            kl_gaussian(np.eye(2), np.diag([1.0, 0.0]))
        with pytest.raises(ValueError):
            kl_gaussian(np.eye(2), np.eye(3))
