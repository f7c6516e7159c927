"""Ground-truth latent-variable Gaussian models.

A model is the joint concentration matrix of observed and hidden variables.
Marginalizing the hidden block (a Schur complement) splits the observed
concentration matrix into a sparse conditional part ``S_true`` and a low-rank
part ``L_true`` induced by the latent variables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import (
    NotPositiveDefinite,
    as_symmetric,
    min_eig,
    mvn_sample,
    psd_inverse,
    spectral_norm,
    sym_eig,
)

MIN_EIG_TARGET = 0.1
MAX_LOADING_ROUNDS = 60


class ModelConstructionFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class LatentVariableModel:
    K_full: np.ndarray
    observed: tuple[int, ...]
    hidden: tuple[int, ...]
    seed: int | None = None
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        K = as_symmetric(self.K_full, "K_full")
        d = K.shape[0]
        if sorted(self.observed + self.hidden) != list(range(d)):
            raise ValueError("observed and hidden indices must partition 0..d-1")
        if min_eig(K) <= 0:
            raise NotPositiveDefinite("K_full must be positive definite")
        K.setflags(write=False)
        object.__setattr__(self, "K_full", K)

    @property
    def p(self) -> int:
        return len(self.observed)

    @property
    def h(self) -> int:
        return len(self.hidden)

    def to_dict(self) -> dict:
        return {
            "schema": "lvggm.model/1",
            "dim": int(self.K_full.shape[0]),
            "observed": list(self.observed),
            "hidden": list(self.hidden),
            "K_full": self.K_full.tolist(),
            "seed": self.seed,
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentVariableModel":
        K = np.asarray(doc["K_full"], dtype=float)
        if K.shape != (doc["dim"], doc["dim"]):
            raise ValueError("K_full shape does not match dim")
        return cls(K, tuple(doc["observed"]), tuple(doc["hidden"]), doc.get("seed"), doc.get("generator", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "LatentVariableModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MarginalDecomposition:
    S_true: np.ndarray
    L_true: np.ndarray
    K_marg: np.ndarray
    Sigma_marg: np.ndarray

    @property
    def p(self) -> int:
        return self.S_true.shape[0]


@dataclass(frozen=True)
class SampleCovariance:
    Sigma_n: np.ndarray
    n: int

    @property
    def p(self) -> int:
        return self.Sigma_n.shape[0]


@dataclass(frozen=True)
class ModelComplexity:
    deg_max: int
    deg_min: int
    inc: float
    rank: int
    sigma_min: float
    theta_min: float
    psi: float


def _cycle_edges(p: int) -> list[tuple[int, int]]:
    return [(i, (i + 1) % p) for i in range(p)] if p > 2 else [(0, 1)]


def _grid_edges(rows: int, cols: int) -> list[tuple[int, int]]:
    edges = set()
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.add((i, i + 1))
            if r + 1 < rows:
                edges.add((i, i + cols))
    return sorted(edges)


def _assemble(p, h, edges, edge_pc, latent_frac, latent_scale, rng):
    """Unit-diagonal joint concentration before positive-definiteness repair."""
    K = np.eye(p + h)
    for i, j in edges:
        K[i, j] = K[j, i] = -edge_pc
    fan_out = max(1, int(round(latent_frac * p)))
    for k in range(h):
        targets = rng.choice(p, size=fan_out, replace=False)
        coef = rng.uniform(-1.0, 1.0, size=fan_out) * latent_scale
        K[targets, p + k] = coef
        K[p + k, targets] = coef
    return K


def _repair(K, p, edges, edge_pc):
    """Diagonal loading, unit-diagonal rescaling, then reset the observed edges.

    The loading only survives on the latent couplings, so observed partial
    correlations stay exactly ``edge_pc``.
    """
    tau = 0.0
    for _ in range(MAX_LOADING_ROUNDS):
        loaded = K + tau * np.eye(K.shape[0])
        d = 1.0 / np.sqrt(np.diag(loaded))
        out = loaded * np.outer(d, d)
        for i, j in edges:
            out[i, j] = out[j, i] = -edge_pc
        if min_eig(out) >= MIN_EIG_TARGET:
            return out
        tau = 0.01 if tau == 0.0 else 2.0 * tau
    raise ModelConstructionFailed("could not reach a positive definite model by diagonal loading")


def _build(p, h, edges, edge_pc, latent_frac, latent_scale, seed, generator):
    if not 0 < abs(edge_pc) < 1:
        raise ValueError("edge_pc must satisfy 0 < |edge_pc| < 1")
    if not 0 < latent_frac <= 1:
        raise ValueError("latent_frac must lie in (0, 1]")
    if h < 0:
        raise ValueError("h must be non-negative")
    rng = np.random.default_rng(seed)
    for _ in range(20):
        K = _repair(_assemble(p, h, edges, edge_pc, latent_frac, latent_scale, rng), p, edges, edge_pc)
        model = LatentVariableModel(K, tuple(range(p)), tuple(range(p, p + h)), seed, generator)
        # generic draws give rank exactly h; redraw otherwise
        if h == 0 or np.linalg.matrix_rank(marginalize(model).L_true, tol=1e-10) == h:
            return model
    raise ModelConstructionFailed("degenerate latent couplings on every draw")


def build_cycle_model(p: int, h: int, edge_pc: float = 0.25, latent_frac: float = 0.8,
                      latent_scale: float = 0.35, seed: int = 0) -> LatentVariableModel:
    """Cycle conditional graph over ``p`` observed variables plus ``h`` latents."""
    if p < 3:
        raise ValueError("a cycle needs p >= 3")
    gen = {"name": "cycle", "p": p, "h": h, "edge_pc": edge_pc, "latent_frac": latent_frac,
           "latent_scale": latent_scale}
    return _build(p, h, _cycle_edges(p), edge_pc, latent_frac, latent_scale, seed, gen)


def build_grid_model(rows: int, cols: int, h: int, edge_pc: float = 0.15, latent_frac: float = 0.8,
                     latent_scale: float = 0.35, seed: int = 0) -> LatentVariableModel:
    """Nearest-neighbour grid conditional graph (degree at most 4)."""
    if rows * cols < 4 or rows < 1 or cols < 1:
        raise ValueError("grid needs rows * cols >= 4")
    gen = {"name": "grid", "rows": rows, "cols": cols, "h": h, "edge_pc": edge_pc,
           "latent_frac": latent_frac, "latent_scale": latent_scale}
    return _build(rows * cols, h, _grid_edges(rows, cols), edge_pc, latent_frac, latent_scale, seed, gen)


def build_model(spec: dict) -> LatentVariableModel:
    """Dispatch on ``spec["name"]`` (``cycle`` or ``grid``)."""
    spec = dict(spec)
    name = spec.pop("name")
    if name == "cycle":
        return build_cycle_model(**spec)
    if name == "grid":
        return build_grid_model(**spec)
    raise ValueError(f"unknown model generator {name!r}")


def marginalize(model: LatentVariableModel) -> MarginalDecomposition:
    K = model.K_full
    O, H = list(model.observed), list(model.hidden)
    S = K[np.ix_(O, O)].copy()
    if H:
        K_OH = K[np.ix_(O, H)]
        L = K_OH @ psd_inverse(K[np.ix_(H, H)]) @ K_OH.T
        L = 0.5 * (L + L.T)
    else:
        L = np.zeros_like(S)
    K_marg = S - L
    return MarginalDecomposition(S, L, K_marg, psd_inverse(K_marg))


def sample_covariance(model: LatentVariableModel, n: int, seed=None) -> SampleCovariance:
    """``(1/n) sum x x^T`` over ``n`` draws of the observed variables."""
    if n < 1:
        raise ValueError("n must be >= 1")
    X = mvn_sample(marginalize(model).Sigma_marg, n, seed)
    return SampleCovariance(X.T @ X / n, n)


def incoherence_of(L: np.ndarray, tol: float = 1e-10) -> tuple[float, int]:
    w, V = sym_eig(L)
    scale = max(abs(w[0]), abs(w[-1]))
    keep = np.abs(w) > tol * max(scale, 1.0)
    if not keep.any():
        return 0.0, 0
    U = V[:, keep]
    return float(np.sqrt(np.max(np.sum(U * U, axis=1)))), int(keep.sum())


def model_complexity(decomp: MarginalDecomposition, support_tol: float = 1e-8) -> ModelComplexity:
    S = decomp.S_true
    nz = np.abs(S) > support_tol
    deg = nz.sum(axis=1)
    inc, rank = incoherence_of(decomp.L_true)
    w = np.abs(np.linalg.eigvalsh(decomp.L_true))
    nonzero = w[w > 1e-10 * max(w.max(initial=0.0), 1.0)]
    return ModelComplexity(
        deg_max=int(deg.max()),
        deg_min=int(deg.min()),
        inc=inc,
        rank=rank,
        sigma_min=float(nonzero.min()) if nonzero.size else 0.0,
        theta_min=float(np.abs(S[nz]).min()),
        psi=spectral_norm(decomp.Sigma_marg),
    )
