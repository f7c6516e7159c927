"""Compare an estimate with the ground-truth decomposition."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import g_gamma
from .linalg import as_symmetric, logdet_pd, min_eig, psd_inverse, spectral_norm
from .lvmodel import MarginalDecomposition
from .solver import DecompositionEstimate, rank_of, sign_pattern

REALIZABILITY_SLACK = 1e-10


@dataclass(frozen=True)
class ConsistencyVerdict:
    sign_pattern_match: bool
    rank_match: bool
    realizable: bool
    algebraically_consistent: bool
    g_gamma_error: float
    covariance_error_spectral: float
    kl_vs_truth: float
    sign_mismatches: int
    estimated_rank: int
    true_rank: int
    support_tol: float
    rank_tol: float

    def to_dict(self) -> dict:
        return asdict(self)


def kl_gaussian(Sigma_a, Sigma_b) -> float:
    """``KL(N(0, Sigma_a) || N(0, Sigma_b))``."""
    A = as_symmetric(Sigma_a, "Sigma_a")
    B = as_symmetric(Sigma_b, "Sigma_b")
    if A.shape != B.shape:
        raise ValueError("covariances must have the same shape")
    p = A.shape[0]
    value = 0.5 * (np.sum(psd_inverse(B) * A) - p + logdet_pd(B) - logdet_pd(A))
    return float(value)


def parametric_error(est: DecompositionEstimate, truth: MarginalDecomposition, gamma: float | None = None) -> float:
    gamma = est.gamma if gamma is None else gamma
    return g_gamma(est.S - truth.S_true, est.L - truth.L_true, gamma)


def covariance_error(est: DecompositionEstimate, truth: MarginalDecomposition) -> float:
    return spectral_norm(psd_inverse(est.S - est.L) - truth.Sigma_marg)


def algebraic_consistency(est: DecompositionEstimate, truth: MarginalDecomposition,
                          support_tol: float | None = None, rank_tol: float | None = None,
                          true_support_tol: float = 1e-8) -> ConsistencyVerdict:
    """Sign pattern, rank and realizability of ``est`` against ``truth``.

    The estimate is thresholded at ``support_tol`` / ``rank_tol`` (the
    estimate's own thresholds when omitted). The truth is read with
    ``true_support_tol`` since constructed models carry exact zeros.
    """
    if est.S.shape != truth.S_true.shape:
        raise ValueError("estimate and truth dimensions differ")
    support_tol = est.support_tol if support_tol is None else support_tol
    rank_tol = est.rank_tol if rank_tol is None else rank_tol

    mismatches = int(np.sum(sign_pattern(est.S, support_tol) != sign_pattern(truth.S_true, true_support_tol)))
    est_rank = rank_of(est.L, rank_tol)
    true_rank = rank_of(truth.L_true, 1e-10 * max(1.0, spectral_norm(truth.L_true)))
    realizable = min_eig(est.S - est.L) > 0 and min_eig(est.L) >= -REALIZABILITY_SLACK

    if realizable:
        fitted = psd_inverse(est.S - est.L)
        cov_err = spectral_norm(fitted - truth.Sigma_marg)
        kl = kl_gaussian(fitted, truth.Sigma_marg)
    else:
        cov_err = kl = float("inf")

    sign_ok = mismatches == 0
    rank_ok = est_rank == true_rank
    return ConsistencyVerdict(
        sign_pattern_match=sign_ok,
        rank_match=rank_ok,
        realizable=bool(realizable),
        algebraically_consistent=bool(sign_ok and rank_ok and realizable),
        g_gamma_error=parametric_error(est, truth),
        covariance_error_spectral=float(cov_err),
        kl_vs_truth=float(kl),
        sign_mismatches=mismatches,
        estimated_rank=est_rank,
        true_rank=true_rank,
        support_tol=float(support_tol),
        rank_tol=float(rank_tol),
    )
