"""Command line interface: ``lvggm {model,fit,sweep,diagnose,experiment}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver did not converge (fit).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..consistency import algebraic_consistency, kl_gaussian
from ..fisher import FisherOperator, diagnostics
from ..geometry import RankTangentSpace, SupportSpace, geometry_report, mu_value, xi_bracket
from ..linalg import InputError, NotPositiveDefinite, min_eig, mvn_sample, psd_inverse
from ..lvmodel import (
    LatentVariableModel,
    MarginalDecomposition,
    ModelConstructionFailed,
    build_cycle_model,
    build_grid_model,
    marginalize,
)
from ..solver import SolverConfig, fit, gamma_sweep, kkt_residual, lambda_schedule
from .plotting import PlottingUnavailable
from .experiment import ConfigError, ExperimentConfig, run_consistency_experiment
from .ingest import IngestError, _read_numeric, ingest_csv, write_edges_csv, write_matrix_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3

log = logging.getLogger("lvggm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, allow_nan=False, default=_jsonable) + "\n", encoding="utf-8")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_input(args):
    if args.mode == "covariance" and args.n is None:
        raise UsageError("--mode covariance needs --n")
    sample = ingest_csv(args.input, args.mode, args.n)
    names = _read_numeric(args.input)[0]
    return sample, names


def _lambda(args, p: int, n: int) -> float:
    if args.lam is not None:
        if args.lam <= 0:
            raise UsageError("--lambda must be positive")
        return args.lam
    return lambda_schedule(p, n, xi_hint=args.xi_hint, scale=args.lambda_scale)


def _solver_kwargs(args) -> dict:
    kw = {"max_iters": args.max_iters, "tol_primal": args.tol, "tol_dual": args.tol}
    if args.support_tol is not None:
        kw["support_tol"] = args.support_tol
    if args.rank_tol is not None:
        kw["rank_tol"] = args.rank_tol
    return kw


def _kl_vs_sample(est, Sigma_n):
    """KL(fitted Gaussian || sample Gaussian); ``None`` when the sample covariance is singular."""
    if min_eig(Sigma_n) <= 0:
        return None
    return kl_gaussian(psd_inverse(est.S - est.L), Sigma_n)


def _load_truth(path) -> MarginalDecomposition:
    return marginalize(LatentVariableModel.load(path))


def cmd_model(args) -> int:
    if args.kind == "cycle":
        if args.p is None:
            raise UsageError("cycle models need --p")
        model = build_cycle_model(args.p, args.h, edge_pc=args.edge_pc if args.edge_pc is not None else 0.25,
                                  latent_frac=args.latent_frac, latent_scale=args.latent_scale, seed=args.seed)
    else:
        if args.rows is None or args.cols is None:
            raise UsageError("grid models need --rows and --cols")
        model = build_grid_model(args.rows, args.cols, args.h,
                                 edge_pc=args.edge_pc if args.edge_pc is not None else 0.15,
                                 latent_frac=args.latent_frac, latent_scale=args.latent_scale, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"wrote {out}")
    if args.samples:
        if not args.samples_out:
            raise UsageError("--samples needs --samples-out")
        X = mvn_sample(marginalize(model).Sigma_marg, args.samples, seed=args.sample_seed)
        write_matrix_csv(args.samples_out, X)
        print(f"wrote {args.samples_out} ({args.samples} x {model.p})")
    return EXIT_OK


def cmd_fit(args) -> int:
    sample, names = _load_input(args)
    lam = _lambda(args, sample.p, sample.n)
    est = fit(sample, SolverConfig(lam=lam, gamma=args.gamma, **_solver_kwargs(args)))
    out = _out_dir(args)
    doc = est.to_dict()
    doc["n"] = sample.n
    doc["variables"] = names
    kkt = kkt_residual(est, sample)
    doc["kkt"] = {**vars(kkt), "max": kkt.max}
    doc["kl_vs_sample"] = _finite(_kl_vs_sample(est, sample.Sigma_n))
    if args.compare_sparse:
        sparse = fit(sample, SolverConfig(lam=lam, gamma=args.gamma, latent=False, **_solver_kwargs(args)))
        doc["sparse_only"] = {
            "objective": sparse.objective,
            "converged": sparse.converged,
            "edges": int(np.triu(sparse.sign_pattern != 0, 1).sum()),
            "kl_vs_sample": _finite(_kl_vs_sample(sparse, sample.Sigma_n)),
        }
    stem = args.prefix
    _write_json(out / f"{stem}.json", doc)
    edges = write_edges_csv(out / f"{stem}_edges.csv", est.S, est.support_tol, names)
    if args.truth:
        verdict = algebraic_consistency(est, _load_truth(args.truth))
        vd = {k: (_finite(v) if isinstance(v, float) else v) for k, v in verdict.to_dict().items()}
        _write_json(out / f"{stem}_verdict.json", vd)
    if args.plot:
        from .plotting import plot_estimate

        plot_estimate(est, out / f"{stem}.png")
    print(f"lambda={lam:.6g} gamma={args.gamma:g} rank={est.rank} edges={edges} iters={est.iters} "
          f"converged={est.converged}")
    return EXIT_OK if est.converged else EXIT_NONCONVERGED


def _gamma_grid(args) -> list[float]:
    if args.gammas:
        try:
            grid = [float(g) for g in args.gammas.split(",") if g.strip()]
        except ValueError:
            raise UsageError(f"--gammas must be a comma separated list of numbers, got {args.gammas!r}") from None
    else:
        if args.gamma_min <= 0 or args.gamma_max <= args.gamma_min or args.gamma_num < 1:
            raise UsageError("need 0 < --gamma-min < --gamma-max and --gamma-num >= 1")
        grid = list(np.geomspace(args.gamma_min, args.gamma_max, args.gamma_num))
    if not grid or any(g <= 0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("gamma grid must be positive and strictly ascending")
    return grid


def cmd_sweep(args) -> int:
    sample, _ = _load_input(args)
    grid = _gamma_grid(args)
    lam = _lambda(args, sample.p, sample.n)
    report = gamma_sweep(sample, lam, grid, SolverConfig(lam=lam, gamma=grid[0], **_solver_kwargs(args)))
    out = _out_dir(args)
    doc = report.to_dict()
    doc["lambda"] = lam
    doc["n"] = sample.n
    _write_json(out / f"{args.prefix}.json", doc)
    with open(out / f"{args.prefix}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "rank", "edges", "converged", "objective", "pattern_id"])
        for pt in report.points:
            w.writerow([repr(pt.gamma), pt.rank, pt.edges, int(pt.converged), repr(pt.objective), pt.pattern_id])
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(report, out / f"{args.prefix}.png")
    print(f"recommended gamma={report.recommended_gamma:.6g} (run {report.best_run[0]}..{report.best_run[1] - 1})")
    return EXIT_OK


def _matrix(path) -> np.ndarray:
    return _read_numeric(path)[1]


def cmd_diagnose(args) -> int:
    if args.model:
        decomp = _load_truth(args.model)
        S, L = decomp.S_true, decomp.L_true
    elif args.S and args.L:
        S, L = _matrix(args.S), _matrix(args.L)
        if S.shape != L.shape or S.shape[0] != S.shape[1]:
            raise IngestError("S and L must be square matrices of the same size")
    else:
        raise UsageError("diagnose needs --model or both --S and --L")
    K = S - L
    if min_eig(K) <= 0:
        raise NotPositiveDefinite("S - L is not positive definite")
    omega = SupportSpace.from_matrix(S, tol=args.support_tol)
    t_space = RankTangentSpace.from_matrix(L, rank_tol=args.rank_tol)
    mu, mu_exact = mu_value(omega, exact_limit=args.exact_limit, seed=args.seed)
    xi = xi_bracket(t_space, seed=args.seed)
    mu_for_range = mu if mu_exact else float(omega.degrees()[1])
    fisher = diagnostics(FisherOperator(psd_inverse(K)), omega, t_space, mu_for_range, xi,
                         nearby_samples=args.nearby, seed=args.seed, mu_exact=mu_exact)
    if args.gamma is not None:
        gamma = args.gamma
    elif fisher.gamma_range is not None:
        gamma = float(np.sqrt(fisher.gamma_range[0] * fisher.gamma_range[1]))
    else:
        gamma = 1.0
    geometry = geometry_report(omega, t_space, gamma, exact_limit=args.exact_limit, seed=args.seed)
    doc = {
        "schema": "lvggm.diagnose/1",
        "p": int(S.shape[0]),
        "rank": t_space.rank,
        "gamma_range": list(fisher.gamma_range) if fisher.gamma_range else None,
        "geometry": geometry.to_dict(),
        "fisher": fisher.to_dict(),
    }
    out = _out_dir(args)
    _write_json(out / f"{args.prefix}.json", doc)
    rng_txt = "empty" if fisher.gamma_range is None else f"[{fisher.gamma_range[0]:.4g}, {fisher.gamma_range[1]:.4g}]"
    print(f"mu={mu:.4g} xi in [{xi[0]:.4g}, {xi[1]:.4g}] alpha={fisher.alpha:.4g} delta={fisher.delta:.4g} "
          f"nu={fisher.nu} gamma_range={rng_txt}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = ExperimentConfig.load(args.config)
    out = Path(args.out_dir) if args.out_dir else Path(config.outputs.get("dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    stem = config.outputs.get("stem", Path(args.config).stem)
    curve = run_consistency_experiment(config, workers=args.workers)
    curve.write_csv(out / f"{stem}_curve.csv")
    summary = curve.to_dict()
    summary["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    _write_json(out / f"{stem}_summary.json", summary)
    if args.plot:
        from .plotting import plot_curve

        plot_curve(curve, out / f"{stem}_curve.png", title=config.label or None)
    for r in curve.rows:
        print(f"n={r.n:>7d}  p_success={r.p_success:.3f} +/- {r.ci_halfwidth:.3f}  "
              f"gerr={r.mean_gerr:.4g}  coverr={r.mean_coverr:.4g}  nonconverged={r.nonconverged}")
    return EXIT_OK


def _add_input(sp):
    sp.add_argument("--input", required=True, help="CSV file with a header row")
    sp.add_argument("--mode", choices=("samples", "covariance"), default="samples")
    sp.add_argument("--n", type=int, help="sample count (required in covariance mode)")


def _add_solver(sp):
    sp.add_argument("--lambda", dest="lam", type=float, help="explicit lambda (overrides the schedule)")
    sp.add_argument("--lambda-scale", type=float, default=1.0, help="lambda = scale / xi_hint * sqrt(p/n)")
    sp.add_argument("--xi-hint", type=float)
    sp.add_argument("--max-iters", type=int, default=5000)
    sp.add_argument("--tol", type=float, default=1e-7)
    sp.add_argument("--support-tol", type=float)
    sp.add_argument("--rank-tol", type=float)
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lvggm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("model", help="build a synthetic ground-truth model")
    sp.add_argument("--kind", choices=("cycle", "grid"), default="cycle")
    sp.add_argument("--p", type=int)
    sp.add_argument("--rows", type=int)
    sp.add_argument("--cols", type=int)
    sp.add_argument("--h", type=int, default=0)
    sp.add_argument("--edge-pc", type=float)
    sp.add_argument("--latent-frac", type=float, default=0.8)
    sp.add_argument("--latent-scale", type=float, default=0.35)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=0, help="also write this many observed samples")
    sp.add_argument("--samples-out")
    sp.add_argument("--sample-seed", type=int, default=0)
    sp.set_defaults(func=cmd_model)

    sp = sub.add_parser("fit", help="fit one (lambda, gamma)")
    _add_input(sp)
    _add_solver(sp)
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.add_argument("--truth", help="model JSON; writes a consistency verdict")
    sp.add_argument("--compare-sparse", action="store_true", help="also fit a sparse-only model (L = 0)")
    sp.add_argument("--prefix", default="fit")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("sweep", help="fit along a gamma grid and report stable runs")
    _add_input(sp)
    _add_solver(sp)
    sp.add_argument("--gammas", help="comma separated ascending list")
    sp.add_argument("--gamma-min", type=float, default=0.02)
    sp.add_argument("--gamma-max", type=float, default=2.0)
    sp.add_argument("--gamma-num", type=int, default=20)
    sp.add_argument("--prefix", default="sweep")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("diagnose", help="identifiability diagnostics for a model or an (S, L) pair")
    sp.add_argument("--model")
    sp.add_argument("--S")
    sp.add_argument("--L")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--support-tol", type=float, default=1e-8)
    sp.add_argument("--rank-tol", type=float, default=1e-10)
    sp.add_argument("--exact-limit", type=int, default=22)
    sp.add_argument("--nearby", type=int, default=16, help="sampled nearby tangent spaces")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--prefix", default="diagnose")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("experiment", help="run a consistency experiment from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir")
    sp.add_argument("--workers", type=int, help="overrides LVGGM_THREADS")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, PlottingUnavailable) as exc:
        print(f"lvggm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, ConfigError, NotPositiveDefinite, ModelConstructionFailed, OSError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"lvggm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
