"""Tangent spaces of the sparse and low-rank matrix varieties.

All spaces live inside the symmetric matrices. ``SupportSpace`` is the set of
symmetric matrices supported on a mask; ``RankTangentSpace`` is
``{U Y^T + Y U^T}`` for an orthonormal basis ``U`` of a column space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .linalg import InputError, as_symmetric, spectral_norm, sym_eig


def sup_norm(M) -> float:
    """Entrywise max norm."""
    M = np.asarray(M)
    return float(np.max(np.abs(M))) if M.size else 0.0


@dataclass(frozen=True)
class SupportSpace:
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
            raise InputError("support mask must be square")
        if not np.array_equal(mask, mask.T):
            raise InputError("support mask must be symmetric")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_matrix(cls, M, tol: float = 0.0) -> "SupportSpace":
        M = as_symmetric(M)
        return cls(np.abs(M) > tol)

    @property
    def p(self) -> int:
        return self.mask.shape[0]

    def coordinates(self) -> list[tuple[int, int]]:
        """Free (i <= j) coordinates of a symmetric matrix on the support."""
        i, j = np.nonzero(np.triu(self.mask))
        return list(zip(i.tolist(), j.tolist()))

    def degrees(self) -> tuple[int, int]:
        deg = self.mask.sum(axis=1)
        return int(deg.min()), int(deg.max())

    def project(self, N, orthogonal: bool = False) -> np.ndarray:
        N = np.asarray(N, dtype=float)
        if N.shape != self.mask.shape:
            raise InputError(f"dimension mismatch: {N.shape} vs {self.mask.shape}")
        return np.where(self.mask != orthogonal, N, 0.0)


@dataclass(frozen=True)
class RankTangentSpace:
    U: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if U.shape[1] and not np.allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-10):
            raise InputError("basis U must have orthonormal columns")
        U = U.copy()
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    @classmethod
    def from_matrix(cls, M, rank_tol: float = 1e-10) -> "RankTangentSpace":
        """Column space of a symmetric matrix (eigenvalues above ``rank_tol * max(1, ||M||)``)."""
        w, V = sym_eig(M)
        scale = max(abs(w[0]), abs(w[-1]), 1.0)
        return cls(V[:, np.abs(w) > rank_tol * scale])

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def P_U(self) -> np.ndarray:
        return self.U @ self.U.T

    def project(self, N, orthogonal: bool = False) -> np.ndarray:
        N = np.asarray(N, dtype=float)
        if N.shape != (self.p, self.p):
            raise InputError(f"dimension mismatch: {N.shape} vs {(self.p, self.p)}")
        Q = np.eye(self.p) - self.P_U
        QNQ = Q @ N @ Q
        return QNQ if orthogonal else N - QNQ

    def random_element(self, rng) -> np.ndarray:
        Y = rng.standard_normal((self.p, self.rank))
        return self.U @ Y.T + Y @ self.U.T


def project_support(space: SupportSpace, N) -> np.ndarray:
    return space.project(N)


def project_tangent(space: RankTangentSpace, N, orthogonal: bool = False) -> np.ndarray:
    return space.project(N, orthogonal)


def incoherence(space: RankTangentSpace) -> float:
    """``max_i ||P_U e_i||``, the largest row norm of ``U``."""
    if space.rank == 0:
        return 0.0
    return float(np.sqrt(np.max(np.sum(space.U**2, axis=1))))


def xi_bracket(space: RankTangentSpace, refine_iters: int = 4, seed: int = 0,
               ascent_steps: int = 30) -> tuple[float, float]:
    """Certified bracket ``(lower, upper)`` for ``max |N_ij|`` over ``N in T, ||N||_2 <= 1``.

    ``upper = 2 inc``. ``lower`` is the best feasible value found: the
    constructive elements ``u e_i^T + e_i u^T`` (with ``u`` the normalized
    projection of ``e_i``) always reach at least ``inc``; projected
    supergradient ascent from those and from ``refine_iters`` random starts
    improves on them.
    """
    if space.rank == 0:
        return 0.0, 0.0
    p, U = space.p, space.U
    inc = incoherence(space)
    rng = np.random.default_rng(seed)

    starts = []
    row_norms = np.sqrt(np.sum(U**2, axis=1))
    for i in np.argsort(row_norms)[::-1][: min(p, 4)]:
        if row_norms[i] == 0:
            break
        u = U @ U[i] / row_norms[i]
        e = np.zeros(p)
        e[i] = 1.0
        starts.append(np.outer(u, e) + np.outer(e, u))
    starts.extend(space.random_element(rng) for _ in range(refine_iters))

    best = 0.0
    for N in starts:
        for step in range(ascent_steps + 1):
            w, V = np.linalg.eigh(N)
            k = int(np.argmax(np.abs(w)))
            s = abs(w[k])
            if s == 0:
                break
            N = N / s
            best = max(best, sup_norm(N))
            if step == ascent_steps:
                break
            i, j = np.unravel_index(np.argmax(np.abs(N)), N.shape)
            # supergradient of |N_ij| - ||N||_2 at a unit-norm point, kept inside T
            G = -np.sign(w[k]) * np.outer(V[:, k], V[:, k])
            G[i, j] += 0.5 * np.sign(N[i, j])
            G[j, i] += 0.5 * np.sign(N[i, j])
            G = space.project(G)
            gnorm = np.linalg.norm(G)
            if gnorm < 1e-14:
                break
            N = N + (0.5 / (1 + step)) * G / gnorm
    return max(inc, best), 2.0 * inc


def xi_monte_carlo(space: RankTangentSpace, samples: int, seed: int = 0, batch: int = 4096) -> float:
    """Largest entry over random unit-spectral-norm elements of ``T`` (a lower estimate of xi)."""
    if space.rank == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    p, r = space.p, space.rank
    best = 0.0
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        Y = rng.standard_normal((b, p, r))
        UY = np.einsum("pr,bqr->bpq", space.U, Y)
        N = UY + np.swapaxes(UY, 1, 2)
        s = np.max(np.abs(np.linalg.eigvalsh(N)), axis=1)
        best = max(best, float(np.max(np.max(np.abs(N), axis=(1, 2)) / s)))
        done += b
    return best


def _vertex_norms(coords, signs, p):
    """Spectral norms of the symmetric sign matrices for a batch of sign vectors."""
    b = signs.shape[0]
    N = np.zeros((b, p, p))
    for k, (i, j) in enumerate(coords):
        N[:, i, j] = signs[:, k]
        N[:, j, i] = signs[:, k]
    return np.max(np.abs(np.linalg.eigvalsh(N)), axis=1)


def _free_signs(coords, p) -> list[int]:
    """Coordinates whose signs must be enumerated; the rest can be fixed to +1.

    ``D N D`` with ``D = diag(+-1)`` has the spectrum of ``N`` and flips the
    off-diagonal signs across any cut, so the edges of a spanning forest can
    be made positive. Negating ``N`` then fixes one diagonal sign.
    """
    parent = list(range(p))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    free, diag_fixed = [], False
    for k, (i, j) in enumerate(coords):
        if i == j:
            if diag_fixed:
                free.append(k)
            diag_fixed = True
            continue
        a, b = root(i), root(j)
        if a == b:
            free.append(k)
        else:
            parent[a] = b
    return free


def mu_value(space: SupportSpace, exact_limit: int = 22, samples: int = 4096,
             seed: int = 0, chunk: int = 8192) -> tuple[float, bool]:
    """``max ||N||_2`` over symmetric ``N`` on the support with ``||N||_inf <= 1``.

    The maximum of a convex function over the box is attained at a vertex,
    so for at most ``exact_limit`` free coordinates all sign patterns are
    enumerated up to sign symmetries and the result is exact. Otherwise a
    random-vertex lower bound, floored at ``deg_min``, is returned; it is
    flagged exact only when it reaches the certified upper bound ``deg_max``.
    """
    coords = space.coordinates()
    k = len(coords)
    if k == 0:
        return 0.0, True
    p = space.p
    if k <= exact_limit:
        free = _free_signs(coords, p)
        f = len(free)
        best = 0.0
        bits = np.arange(f)
        for start in range(0, 1 << f, chunk):
            idx = np.arange(start, min(start + chunk, 1 << f))
            signs = np.ones((idx.size, k))
            signs[:, free] = 1.0 - 2.0 * ((idx[:, None] >> bits) & 1)
            best = max(best, float(_vertex_norms(coords, signs, p).max()))
        return best, True
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(samples, k))
    signs[0] = 1.0
    deg_min, deg_max = space.degrees()
    value = max(float(_vertex_norms(coords, signs, p).max()), float(deg_min))
    # the degree sandwich pins mu when the bounds meet (e.g. regular graphs)
    return value, value >= deg_max


@dataclass(frozen=True)
class RhoResult:
    value: float
    residual: float
    iterations: int


def rho(space_a: RankTangentSpace, space_b: RankTangentSpace, power_iters: int | None = None,
        restarts: int = 5, tol: float = 1e-8, seed: int = 0) -> RhoResult:
    """Operator norm of ``P_Ta - P_Tb`` on symmetric matrices by power iteration.

    The operator is self-adjoint in the trace inner product; the iteration
    never forms it. The value is a lower bound on the norm; ``residual`` is
    ``||D(x) - lam x||_F`` at the returned iterate.
    """
    if space_a.p != space_b.p:
        raise InputError("tangent spaces live in different dimensions")
    if space_a.rank != space_b.rank:
        raise InputError(f"rho needs equal ranks, got {space_a.rank} and {space_b.rank}")
    p = space_a.p
    cap = power_iters if power_iters is not None else 10 * p * p
    rng = np.random.default_rng(seed)

    def D(N):
        return space_a.project(N) - space_b.project(N)

    best = RhoResult(0.0, 0.0, 0)
    for _ in range(restarts):
        X = rng.standard_normal((p, p))
        X = X + X.T
        X /= np.linalg.norm(X)
        lam, it = 0.0, 0
        for it in range(1, cap + 1):
            Y = D(D(X))
            nrm = np.linalg.norm(Y)
            if nrm == 0:
                lam = 0.0
                break
            new = np.sqrt(nrm)
            X = Y / nrm
            if abs(new - lam) <= tol * max(new, 1e-300):
                lam = new
                break
            lam = new
        DX = D(X)
        lam_signed = float(np.sum(DX * X))
        res = float(np.linalg.norm(DX - lam_signed * X))
        if lam > best.value:
            best = RhoResult(float(lam), res, it)
    return best


def gamma_norms(S, L, gamma: float) -> tuple[float, float]:
    """``f = gamma ||S||_1 + ||L||_*`` and its dual ``g = max(||S||_inf / gamma, ||L||_2)``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    S = np.asarray(S, dtype=float)
    L = np.asarray(L, dtype=float)
    f = gamma * float(np.abs(S).sum()) + float(np.abs(np.linalg.eigvalsh(0.5 * (L + L.T))).sum())
    g = max(sup_norm(S) / gamma, spectral_norm(L))
    return f, g


def g_gamma(S, L, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return max(sup_norm(S) / gamma, spectral_norm(L))


def chi_value(mu: float, xi: float, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if mu < 0 or xi < 0:
        raise ValueError("mu and xi must be non-negative")
    return max(xi / gamma, 2.0 * mu * gamma)


def random_support_element(space: SupportSpace, rng, sup: float = 1.0) -> np.ndarray:
    """Random symmetric element of the support space with ``||S||_inf = sup``."""
    A = rng.uniform(-1.0, 1.0, size=space.mask.shape)
    A = space.project(np.triu(A) + np.triu(A, 1).T)
    m = sup_norm(A)
    return A * (sup / m) if m > 0 else A


def random_tangent_element(space: RankTangentSpace, rng) -> np.ndarray:
    """Random element of ``T`` with unit spectral norm (zero when ``rank == 0``)."""
    if space.rank == 0:
        return np.zeros((space.p, space.p))
    N = space.random_element(rng)
    return N / spectral_norm(N)


@dataclass(frozen=True)
class AdditionGainReport:
    chi: float
    low: float
    high: float
    observed_min: float
    observed_max: float
    trials: int
    passed: bool
    certificate: bool  # chi < 1, i.e. the interval excludes zero


def addition_gain_check(omega: SupportSpace, t_space: RankTangentSpace, gamma: float, trials: int = 1000,
                        mu: float | None = None, xi: float | None = None, seed: int = 0,
                        slack: float = 1e-8) -> AdditionGainReport:
    """Sample ``g_gamma(S + P_Omega(L), P_T(S) + L)`` for ``||S||_inf = gamma``, ``||L||_2 = 1``.

    ``mu`` and ``xi`` default to certified upper bounds (exact or degree
    bound for mu, ``2 inc`` for xi), which only widens the interval.
    """
    if mu is None:
        mu_val, exact = mu_value(omega)
        mu = mu_val if exact else float(omega.degrees()[1])
    if xi is None:
        xi = 2.0 * incoherence(t_space)
    chi = chi_value(mu, xi, gamma)
    rng = np.random.default_rng(seed)
    vals = np.empty(trials)
    for k in range(trials):
        S = random_support_element(omega, rng, gamma)
        L = random_tangent_element(t_space, rng)
        vals[k] = g_gamma(S + omega.project(L), t_space.project(S) + L, gamma)
    lo, hi = 1.0 - chi, 1.0 + chi
    passed = bool(np.all(vals >= lo - slack) and np.all(vals <= hi + slack))
    return AdditionGainReport(chi, lo, hi, float(vals.min()), float(vals.max()), trials, passed, chi < 1)


@dataclass(frozen=True)
class GeometryReport:
    xi_lower: float
    xi_upper: float
    mu_value: float
    mu_exact: bool
    inc_value: float
    chi_value: float
    gamma: float
    rho_value: float | None = None
    rho_residual: float | None = None

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["exact"] = {
            "xi": self.xi_lower == self.xi_upper,
            "mu": self.mu_exact,
            "inc": True,
            "chi": False,  # built from the conservative xi_upper
            "rho": False,  # power-iteration lower bound
        }
        return doc


def geometry_report(omega: SupportSpace, t_space: RankTangentSpace, gamma: float,
                    other: RankTangentSpace | None = None, exact_limit: int = 22,
                    seed: int = 0) -> GeometryReport:
    xi_lo, xi_hi = xi_bracket(t_space, seed=seed)
    mu, exact = mu_value(omega, exact_limit=exact_limit, seed=seed)
    mu_for_chi = mu if exact else float(omega.degrees()[1])
    rho_val = rho_res = None
    if other is not None:
        r = rho(t_space, other, seed=seed)
        rho_val, rho_res = r.value, r.residual
    return GeometryReport(xi_lo, xi_hi, mu, exact, incoherence(t_space),
                          chi_value(mu_for_chi, xi_hi, gamma), gamma, rho_val, rho_res)

