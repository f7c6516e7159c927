"""Monte-Carlo consistency experiments over a ladder of sample sizes.

One ground-truth model is built per experiment and held fixed; every trial
draws fresh samples from it. Trial ``k`` at grid index ``i`` is seeded by
``SeedSequence([master_seed, i, k])``, so results do not depend on how
trials are scheduled across workers.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..consistency import ConsistencyVerdict, algebraic_consistency
from ..lvmodel import LatentVariableModel, build_model, marginalize, sample_covariance
from ..solver import SolverConfig, fit, gamma_sweep, lambda_schedule

SCHEMA = "lvggm.experiment/1"
CURVE_COLUMNS = ("n", "p_success", "ci_halfwidth", "mean_gerr", "mean_coverr")
Z95 = 1.959963984540054

_SOLVER_KEYS = {"rho_admm", "max_iters", "tol_primal", "tol_dual", "support_tol", "rank_tol", "adapt_rho"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    n_grid: tuple
    trials_per_n: int
    master_seed: int = 0
    lambda_scale: float = 1.0
    xi_hint: float | None = None
    gamma: float | tuple = 0.1  # a tuple means "sweep and take the recommended gamma"
    solver: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if "name" not in self.model:
            raise ConfigError("model needs a generator 'name'")
        grid = tuple(int(n) for n in self.n_grid)
        if not grid:
            raise ConfigError("n_grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n_grid must be strictly ascending")
        if grid[0] < 1:
            raise ConfigError("sample counts must be positive")
        if self.trials_per_n < 1:
            raise ConfigError("trials_per_n must be >= 1")
        unknown = set(self.solver) - _SOLVER_KEYS
        if unknown:
            raise ConfigError(f"unknown solver option(s): {sorted(unknown)}")
        gamma = tuple(float(g) for g in self.gamma) if isinstance(self.gamma, (list, tuple)) else float(self.gamma)
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "gamma", gamma)

    def solver_config(self, lam: float, gamma: float) -> SolverConfig:
        return SolverConfig(lam=lam, gamma=gamma, **self.solver)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["n_grid"] = list(self.n_grid)
        if isinstance(self.gamma, tuple):
            doc["gamma"] = list(self.gamma)
        return {"schema": SCHEMA, **doc}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        schema = doc.pop("schema", None)
        if schema != SCHEMA:
            raise ConfigError(f"expected schema {SCHEMA!r}, got {schema!r}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


@dataclass(frozen=True)
class TrialResult:
    n: int
    trial: int
    lam: float
    gamma: float
    converged: bool
    iters: int
    verdict: ConsistencyVerdict

    @property
    def success(self) -> bool:
        return self.converged and self.verdict.algebraically_consistent


@dataclass(frozen=True)
class CurveRow:
    n: int
    p_success: float
    ci_halfwidth: float
    mean_gerr: float
    mean_coverr: float
    trials: int
    nonconverged: int


@dataclass(frozen=True)
class ConsistencyCurve:
    rows: list
    config: ExperimentConfig
    trials: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> np.ndarray:
        return np.array([r.n for r in self.rows])

    @property
    def p_success(self) -> np.ndarray:
        return np.array([r.p_success for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for r in self.rows:
                w.writerow([r.n, repr(r.p_success), repr(r.ci_halfwidth), repr(r.mean_gerr), repr(r.mean_coverr)])

    def to_dict(self) -> dict:
        return {
            "schema": "lvggm.curve/1",
            "config": self.config.to_dict(),
            "rows": [asdict(r) for r in self.rows],
            "trials": [
                {"n": t.n, "trial": t.trial, "lambda": t.lam, "gamma": t.gamma, "converged": t.converged,
                 "iters": t.iters, "success": t.success, **t.verdict.to_dict()}
                for t in self.trials
            ],
        }


def worker_count() -> int:
    """Worker cap from ``LVGGM_THREADS`` (default: CPU count)."""
    raw = os.environ.get("LVGGM_THREADS")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"LVGGM_THREADS must be an integer, got {raw!r}") from None
        return max(1, value)
    return os.cpu_count() or 1


def trial_seed(master_seed: int, grid_index: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, grid_index, trial])


def run_trial(config: ExperimentConfig, model: LatentVariableModel, truth, grid_index: int,
              trial: int) -> TrialResult:
    n = config.n_grid[grid_index]
    rng = np.random.default_rng(trial_seed(config.master_seed, grid_index, trial))
    sample = sample_covariance(model, n, seed=rng)
    lam = lambda_schedule(model.p, n, xi_hint=config.xi_hint, scale=config.lambda_scale)
    if isinstance(config.gamma, tuple):
        report = gamma_sweep(sample, lam, config.gamma, config.solver_config(lam, config.gamma[0]))
        start, stop = report.best_run
        est = report.estimates[(start + stop - 1) // 2]
    else:
        est = fit(sample, config.solver_config(lam, config.gamma))
    verdict = algebraic_consistency(est, truth)
    return TrialResult(n, trial, lam, est.gamma, est.converged, est.iters, verdict)


def _aggregate(n: int, results: list) -> CurveRow:
    k = len(results)
    p = sum(r.success for r in results) / k
    return CurveRow(
        n=n,
        p_success=float(p),
        ci_halfwidth=float(Z95 * np.sqrt(p * (1.0 - p) / k)),
        mean_gerr=float(np.mean([r.verdict.g_gamma_error for r in results])),
        mean_coverr=float(np.mean([r.verdict.covariance_error_spectral for r in results])),
        trials=k,
        nonconverged=sum(not r.converged for r in results),
    )


def run_consistency_experiment(config: ExperimentConfig, workers: int | None = None,
                               model: LatentVariableModel | None = None) -> ConsistencyCurve:
    """Estimate the probability of algebraically consistent recovery at each ``n``.

    A trial succeeds when the fit converged and matches the true sign
    pattern and rank; non-converged fits count as failures and are tallied in
    ``CurveRow.nonconverged``.
    """
    model = model or build_model(config.model)
    truth = marginalize(model)
    jobs = [(i, k) for i in range(len(config.n_grid)) for k in range(config.trials_per_n)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1:
        results = [run_trial(config, model, truth, i, k) for i, k in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: run_trial(config, model, truth, *job), jobs))
    rows = []
    for i, n in enumerate(config.n_grid):
        rows.append(_aggregate(n, [r for (gi, _), r in zip(jobs, results) if gi == i]))
    return ConsistencyCurve(rows, config, results)


def meets_rate(successes: int, trials: int, target: float, level: float = 0.05) -> bool:
    """One-sided binomial allowance: ``False`` only when ``successes`` out of
    ``trials`` is significantly below ``target`` at ``level``."""
    from scipy.stats import binom

    return bool(binom.cdf(successes, trials, target) > level)
