"""PNG figures for the CLI report path.

matplotlib is optional: it is imported lazily, on the first call that
draws something, and a missing install raises :class:`PlottingUnavailable`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

RC = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


class PlottingUnavailable(RuntimeError):
    pass


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise PlottingUnavailable("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def plot_curve(curve, path, title: str | None = None) -> Path:
    """Success probability versus ``n`` with normal-approximation error bars."""
    plt = _pyplot()
    with plt.rc_context(RC):
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(7.5, 3.0))
        n = np.array([r.n for r in curve.rows])
        p = np.array([r.p_success for r in curve.rows])
        ci = np.array([r.ci_halfwidth for r in curve.rows])
        ax.errorbar(n, p, yerr=ci, marker="o", ms=4, capsize=2, color="k")
        ax.set_xscale("log")
        ax.set_ylim(-0.03, 1.03)
        ax.set_xlabel("n")
        ax.set_ylabel("P(consistent)")
        ax2.loglog(n, [r.mean_gerr for r in curve.rows], "o-", ms=4, label="g_gamma error")
        ax2.loglog(n, [r.mean_coverr for r in curve.rows], "s--", ms=4, label="covariance error")
        ax2.set_xlabel("n")
        ax2.legend()
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_sweep(report, path) -> Path:
    """Rank and edge count along the gamma grid, with the longest stable run shaded."""
    plt = _pyplot()
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        g = np.array([pt.gamma for pt in report.points])
        ax.step(g, [pt.rank for pt in report.points], where="mid", color="C0", label="rank(L)")
        ax.set_xscale("log")
        ax.set_xlabel("gamma")
        ax.set_ylabel("rank(L)", color="C0")
        twin = ax.twinx()
        twin.plot(g, [pt.edges for pt in report.points], "o", ms=3, color="C1")
        twin.set_ylabel("edges in S", color="C1")
        start, stop = report.best_run
        ax.axvspan(g[start], g[stop - 1], color="0.85", zorder=0)
        ax.axvline(report.recommended_gamma, color="k", lw=0.8, ls=":")
        return _save(fig, path)


def plot_estimate(est, path) -> Path:
    """Heat maps of the estimated sparse and low-rank components."""
    plt = _pyplot()
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
        for ax, M, name in zip(axes, (est.S, est.L), ("S", "L")):
            lim = max(float(np.abs(M).max()), 1e-12)
            im = ax.imshow(M, cmap="RdBu_r", vmin=-lim, vmax=lim)
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
            fig.colorbar(im, ax=ax, fraction=0.046)
        return _save(fig, path)
