"""Fisher information ``N -> Sigma N Sigma`` and the identifiability gains.

Quantities on the sparse tangent space are computed exactly: in the entry
coordinates of a symmetric matrix the entrywise max norm is the vector
infinity norm, so the restricted operator's ``inf -> inf`` gains are row
sums. Quantities on tangent spaces near ``T`` are Monte-Carlo estimates and
are labelled as such.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (
    RankTangentSpace,
    SupportSpace,
    g_gamma,
    random_support_element,
    random_tangent_element,
    rho,
    sup_norm,
)
from .linalg import InputError, NotPositiveDefinite, as_symmetric, psd_inverse, spectral_norm


class AlphaZero(ArithmeticError):
    """The Fisher operator is singular on the sparse tangent space."""


@dataclass(frozen=True)
class FisherOperator:
    sigma: np.ndarray

    def __post_init__(self):
        S = as_symmetric(self.sigma, "sigma")
        if np.linalg.eigvalsh(S)[0] <= 0:
            raise NotPositiveDefinite("Fisher covariance must be positive definite")
        S.setflags(write=False)
        object.__setattr__(self, "sigma", S)

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @property
    def psi(self) -> float:
        return spectral_norm(self.sigma)

    def __call__(self, N) -> np.ndarray:
        return fisher_apply(self, N)


def fisher_apply(op: FisherOperator, N) -> np.ndarray:
    N = np.asarray(N, dtype=float)
    if N.shape != op.sigma.shape:
        raise InputError(f"dimension mismatch: {N.shape} vs {op.sigma.shape}")
    return op.sigma @ N @ op.sigma


def _unit(p, i, j):
    E = np.zeros((p, p))
    E[i, j] = 1.0
    E[j, i] = 1.0
    return E


def restricted_entry_matrix(op: FisherOperator, omega: SupportSpace) -> tuple[np.ndarray, np.ndarray]:
    """Columns of the operator for each free support coordinate, in entry coordinates.

    Returns ``(A_in, A_out)``: rows indexed by the support coordinates and by
    the complementary upper-triangular coordinates respectively.
    """
    p = op.p
    cols = omega.coordinates()
    iu = np.triu_indices(p)
    in_rows = omega.mask[iu]
    out = np.empty((len(iu[0]), len(cols)))
    for c, (i, j) in enumerate(cols):
        out[:, c] = fisher_apply(op, _unit(p, i, j))[iu]
    return out[in_rows], out[~in_rows]


@dataclass(frozen=True)
class OmegaGains:
    alpha: float
    delta: float
    beta: float
    beta_upper: float
    exact: dict = field(default_factory=lambda: {"alpha": True, "delta": True, "beta": False})


def _beta_omega(op: FisherOperator, omega: SupportSpace, restarts: int, steps: int, rng) -> float:
    """Best ``||Sigma M Sigma||_2 / ||M||_2`` found over ``M`` on the support."""
    Sig, p = op.sigma, op.p
    starts = [_unit(p, i, i) / 2.0 for i in range(p)]
    w, V = np.linalg.eigh(Sig)
    starts.append(omega.project(np.outer(V[:, -1], V[:, -1])))
    starts.extend(random_support_element(omega, rng) for _ in range(restarts))
    best = 0.0
    for M in starts:
        for step in range(steps + 1):
            s = spectral_norm(M)
            if s == 0:
                break
            M = M / s
            ev, EV = np.linalg.eigh(Sig @ M @ Sig)
            k = int(np.argmax(np.abs(ev)))
            best = max(best, abs(ev[k]))
            if step == steps:
                break
            x = Sig @ EV[:, k]
            G = omega.project(np.sign(ev[k]) * np.outer(x, x))
            gn = np.linalg.norm(G)
            if gn == 0:
                break
            M = M + (0.5 / (1 + step)) * G / gn
    return best


def omega_gains(op: FisherOperator, omega: SupportSpace, restarts: int = 8, steps: int = 20,
                seed: int = 0) -> OmegaGains:
    """Exact ``alpha_Omega``, ``delta_Omega``; lower estimate of ``beta_Omega`` (upper bound ``psi^2``)."""
    if omega.p != op.p:
        raise InputError("support space and operator dimensions differ")
    A_in, A_out = restricted_entry_matrix(op, omega)
    if A_in.size == 0:
        raise AlphaZero("empty support")
    cond = np.linalg.cond(A_in)
    if not np.isfinite(cond) or cond > 1e14:
        raise AlphaZero("restricted Fisher operator is singular on the support")
    inv_norm = np.abs(np.linalg.inv(A_in)).sum(axis=1).max()
    alpha = 1.0 / inv_norm
    delta = float(np.abs(A_out).sum(axis=1).max()) if A_out.size else 0.0
    psi2 = op.psi**2
    beta = min(_beta_omega(op, omega, restarts, steps, np.random.default_rng(seed)), psi2)
    return OmegaGains(float(alpha), delta, float(beta), psi2)


def tangent_basis(space: RankTangentSpace) -> np.ndarray:
    """Frobenius-orthonormal basis of the symmetric tangent space, shape ``(d, p, p)``."""
    p, r = space.p, space.rank
    gens = []
    for a in range(r):
        u = space.U[:, a]
        for k in range(p):
            e = np.zeros(p)
            e[k] = 1.0
            gens.append((np.outer(u, e) + np.outer(e, u)).ravel())
    if not gens:
        return np.zeros((0, p, p))
    U_, s, _ = np.linalg.svd(np.array(gens).T, full_matrices=False)
    d = int(np.sum(s > 1e-10 * s[0]))
    return U_[:, :d].T.reshape(d, p, p)


def perturb_tangent(space: RankTangentSpace, target: float, rng, bisect_steps: int = 14,
                    rho_restarts: int = 2) -> tuple[RankTangentSpace, float]:
    """Random nearby tangent space with ``rho(T', T)`` close to (and not above) ``target``."""
    p, r = space.p, space.rank
    W = rng.standard_normal((p, r))
    W = W - space.P_U @ W
    W /= np.linalg.norm(W, 2)

    def make(t):
        Q, _ = np.linalg.qr(space.U + t * W)
        return RankTangentSpace(Q)

    def dist(T2):
        return rho(space, T2, restarts=rho_restarts, tol=1e-7, power_iters=2000,
                   seed=int(rng.integers(2**31))).value

    lo, hi = 0.0, 1.0
    while dist(make(hi)) < target and hi < 1e6:
        lo, hi = hi, 2 * hi
    best = (space, 0.0)
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        T2 = make(mid)
        d = dist(T2)
        if d <= target:
            lo = mid
            best = (T2, d)
        else:
            hi = mid
    return best


def _t_candidates(op, T2, basis, rng, n_random):
    """Candidate elements of ``T'``: Frobenius extremal eigenvectors plus random draws."""
    d = basis.shape[0]
    flat = basis.reshape(d, -1)
    images = np.array([fisher_apply(op, B).ravel() for B in basis])
    G = flat @ images.T
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    k = min(4, d)
    mins = [(V[:, i] @ flat).reshape(op.p, op.p) for i in range(k)]
    cross = images - (images @ flat.T) @ flat  # components in T'^perp
    _, _, Vt = np.linalg.svd(cross.T, full_matrices=False)
    tops = [(Vt[i] @ flat).reshape(op.p, op.p) for i in range(min(4, Vt.shape[0]))]
    rand = [random_tangent_element(T2, rng) for _ in range(n_random)]
    mixes = [(rng.standard_normal(k) @ np.array(mins).reshape(k, -1)).reshape(op.p, op.p) for _ in range(n_random)]
    return mins + mixes + rand, tops + rand


@dataclass(frozen=True)
class TGains:
    alpha: float
    delta: float
    beta: float
    samples: int
    max_rho: float
    exact: dict = field(default_factory=lambda: {"alpha": False, "delta": False, "beta": False})
    bound_side: dict = field(default_factory=lambda: {"alpha": "upper", "delta": "lower", "beta": "lower"})


def _gains_at(op: FisherOperator, T2: RankTangentSpace, rng, n_random: int) -> tuple[float, float, float]:
    basis = tangent_basis(T2)
    low_cands, cross_cands = _t_candidates(op, T2, basis, rng, n_random)
    alpha = np.inf
    for M in low_cands:
        s = spectral_norm(M)
        if s > 0:
            alpha = min(alpha, spectral_norm(T2.project(fisher_apply(op, M))) / s)
    delta = 0.0
    for M in cross_cands:
        s = spectral_norm(M)
        if s > 0:
            delta = max(delta, spectral_norm(T2.project(fisher_apply(op, M), orthogonal=True)) / s)
    beta = 0.0
    p = op.p
    iu = np.triu_indices(p)
    for i, j in zip(*iu):
        M = T2.project(_unit(p, i, j))
        m = sup_norm(M)
        if m > 0:
            beta = max(beta, sup_norm(fisher_apply(op, M)) / m)
    for B in basis[:8]:
        m = sup_norm(B)
        beta = max(beta, sup_norm(fisher_apply(op, B)) / m)
    return float(alpha), float(delta), float(beta)


def t_gains(op: FisherOperator, t_space: RankTangentSpace, xi_upper: float, nearby_samples: int = 16,
            seed: int = 0, n_random: int = 16) -> TGains:
    """Worst-case gains over sampled tangent spaces within ``rho <= xi_upper / 2`` of ``T``.

    The first sample is ``T`` itself. Each estimate is one-sided: ``alpha``
    over-estimates the true infimum, ``delta`` and ``beta`` under-estimate
    the true suprema.
    """
    if nearby_samples < 1:
        raise ValueError("nearby_samples must be >= 1")
    if t_space.rank == 0:
        return TGains(np.inf, 0.0, 0.0, 0, 0.0)
    rng = np.random.default_rng(seed)
    target = min(xi_upper / 2.0, 0.999)
    alpha, delta, beta, max_rho = np.inf, 0.0, 0.0, 0.0
    for s in range(nearby_samples):
        if s == 0:
            T2, d = t_space, 0.0
        else:
            T2, d = perturb_tangent(t_space, target, rng)
        a, dl, b = _gains_at(op, T2, rng, n_random)
        alpha, delta, beta = min(alpha, a), max(delta, dl), max(beta, b)
        max_rho = max(max_rho, d)
    return TGains(alpha, delta, beta, nearby_samples, max_rho)


@dataclass(frozen=True)
class FisherDiagnostics:
    alpha_omega: float
    delta_omega: float
    beta_omega: float
    alpha_t: float
    delta_t: float
    beta_t: float
    alpha: float
    delta: float
    beta: float
    psi: float
    mu: float
    xi: float
    nu: float | None
    gamma_range: tuple[float, float] | None
    assumption_holds: bool
    product_condition_holds: bool
    identifiable: bool
    exact: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["gamma_range"] = list(self.gamma_range) if self.gamma_range else None
        for key, val in list(doc.items()):
            if isinstance(val, float) and not np.isfinite(val):
                doc[key] = None
        return doc


def largest_nu(alpha: float, delta: float) -> float | None:
    """Largest ``nu in (0, 1/2]`` with ``delta / alpha <= 1 - 2 nu``; ``None`` if there is none."""
    if alpha <= 0:
        return None
    nu = 0.5 * (1.0 - delta / alpha)
    if nu <= 0:
        return None
    return min(nu, 0.5)


def gamma_interval(alpha: float, beta: float, nu: float, mu: float, xi: float) -> tuple[float, float]:
    c = beta * (2.0 - nu) / (nu * alpha)
    low = 3.0 * c * xi
    high = np.inf if mu == 0 else 1.0 / (2.0 * c * mu)
    return low, high


def diagnostics(op: FisherOperator, omega: SupportSpace, t_space: RankTangentSpace, mu: float,
                xi_bracket: tuple[float, float], omega_g: OmegaGains | None = None,
                t_g: TGains | None = None, nearby_samples: int = 16, seed: int = 0,
                mu_exact: bool = True) -> FisherDiagnostics:
    """Aggregate the gains, pick ``nu`` and evaluate the admissible ``gamma`` interval.

    ``xi`` is taken as the upper end of the bracket (conservative).
    """
    xi = float(xi_bracket[1])
    notes = ["xi taken as the certified upper bound 2*inc",
             "alpha_T/delta_T/beta_T are Monte-Carlo estimates over sampled nearby tangent spaces"]
    if omega_g is None:
        omega_g = omega_gains(op, omega, seed=seed)
    if t_g is None:
        t_g = t_gains(op, t_space, xi, nearby_samples=nearby_samples, seed=seed)
    alpha = min(omega_g.alpha, t_g.alpha)
    delta = max(omega_g.delta, t_g.delta)
    beta = max(omega_g.beta, t_g.beta)
    identifiable = alpha > 0
    nu = largest_nu(alpha, delta) if identifiable else None
    assumption = nu is not None
    product = False
    grange = None
    if assumption:
        product = mu * xi <= (nu * alpha / (beta * (2.0 - nu))) ** 2 / 6.0
        low, high = gamma_interval(alpha, beta, nu, mu, xi)
        if low <= high:
            grange = (low, high)
    if not mu_exact:
        notes.append("mu is not exact")
    exact = {"alpha_omega": True, "delta_omega": True, "beta_omega": False,
             "alpha_t": False, "delta_t": False, "beta_t": False, "mu": mu_exact,
             "xi": xi_bracket[0] == xi_bracket[1]}
    return FisherDiagnostics(
        omega_g.alpha, omega_g.delta, omega_g.beta, t_g.alpha, t_g.delta, t_g.beta,
        alpha, delta, beta, op.psi, mu, xi, nu, grange, assumption, product, identifiable,
        exact, {"nearby_samples": t_g.samples, "max_rho": t_g.max_rho}, notes,
    )


def taylor_remainder(K, Delta) -> np.ndarray:
    """Second-order remainder ``(K + D)^-1 - K^-1 + K^-1 D K^-1``."""
    K = as_symmetric(K)
    Delta = as_symmetric(Delta)
    Ki = psd_inverse(K)
    return psd_inverse(K + Delta) - Ki + Ki @ Delta @ Ki


@dataclass(frozen=True)
class GainCheck:
    min_gain: float
    max_ratio: float
    lower_bound: float
    ratio_bound: float
    samples: int
    gain_ok: bool
    ratio_ok: bool


def fisher_gain_check(op: FisherOperator, omega: SupportSpace, t_space: RankTangentSpace, gamma: float,
                      alpha: float, nu: float, samples: int = 500, slack: float = 0.05,
                      seed: int = 0) -> GainCheck:
    """Empirical check of the two gain conclusions on ``Omega x T'``.

    For random ``S in Omega`` with ``||S||_inf = gamma`` and ``L in T'`` with
    ``||L||_2 = 1``, with ``F = Sigma (S + L) Sigma``: the on-space part
    ``g_gamma(P_Omega F, P_T F)`` should be at least ``alpha / 2`` and the
    off-space part ``g_gamma(P_Omega^perp F, P_T^perp F)`` at most
    ``(1 - nu)`` times the on-space part. ``slack`` is relative.
    """
    rng = np.random.default_rng(seed)
    gains = np.empty(samples)
    ratios = np.empty(samples)
    for k in range(samples):
        S = random_support_element(omega, rng, gamma)
        L = random_tangent_element(t_space, rng)
        F = fisher_apply(op, S + L)
        on = g_gamma(omega.project(F), t_space.project(F), gamma)
        off = g_gamma(omega.project(F, orthogonal=True), t_space.project(F, orthogonal=True), gamma)
        gains[k] = on
        ratios[k] = off / on
    gain_ok = bool(gains.min() >= (alpha / 2.0) * (1.0 - slack))
    ratio_ok = bool(ratios.max() <= (1.0 - nu) * (1.0 + slack))
    return GainCheck(float(gains.min()), float(ratios.max()), alpha / 2.0, 1.0 - nu, samples, gain_ok, ratio_ok)
