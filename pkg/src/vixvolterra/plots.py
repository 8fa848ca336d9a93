"""Figure rendering for the CLI report paths (file output only)."""

import math

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def convergence_figure(result, path):
    """Price vs n with error bars, and the error decay on log-log axes.

    Where the error confidence band crosses zero only the upper bound is
    drawn; the CSV always carries both bounds.
    """
    rows = result.rows
    ns = np.array([r.n for r in rows], dtype=float)
    prices = np.array([r.price for r in rows])
    ses = np.array([r.std_error for r in rows])
    errs = np.array([r.abs_error for r in rows])

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax1.errorbar(ns, prices, yerr=3.0 * ses, fmt="o-", capsize=3,
                 label=f"{result.scheme} estimate")
    ax1.axhline(result.reference_price, color="k", lw=0.8, ls="--",
                label=f"reference n={result.reference_n}")
    ax1.set_xscale("log")
    ax1.set_xlabel("n")
    ax1.set_ylabel("price")
    ax1.legend(fontsize=8)

    for row in rows:
        lo, hi = row.error_ci
        if lo > 0.0:
            ax2.plot([row.n, row.n], [lo, hi], color="C0", lw=1.0)
    ax2.plot(ns, errs, "o-", color="C0", label="|error|")
    if result.slope is not None:
        fit = errs[0] * (ns / ns[0]) ** result.slope
        ax2.plot(ns, fit, "k--", lw=0.8,
                 label=f"slope {result.slope:.2f}")
    ax2.set_xscale("log")
    ax2.set_yscale("log")
    ax2.set_xlabel("n")
    ax2.set_ylabel("absolute error")
    ax2.legend(fontsize=8)
    fig.suptitle(f"{result.scheme} scheme, kappa={result.kappa}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def smile_figure(points, future, path, title="model VIX smile"):
    strikes = [p.strike for p in points]
    vols = [p.implied_vol for p in points]
    prices = [p.price for p in points]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax1.plot(strikes, prices, "o-")
    ax1.set_xlabel("strike")
    ax1.set_ylabel("call price")
    ok = [(k, v) for k, v in zip(strikes, vols) if not math.isnan(v)]
    if ok:
        ax2.plot([k for k, _ in ok], [v for _, v in ok], "o-")
    ax2.axvline(future, color="k", lw=0.8, ls="--", label="future")
    ax2.set_xlabel("strike")
    ax2.set_ylabel("implied vol")
    ax2.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def calibration_figure(quote_groups, fits, path):
    """Market vs model prices and implied vols, one row per maturity.

    ``fits`` maps maturity -> dict with 'strikes', 'model_prices',
    'model_vols', 'market_vols' arrays.
    """
    maturities = sorted(quote_groups)
    rows = len(maturities)
    fig, axes = plt.subplots(rows, 2, figsize=(9.0, 2.6 * rows),
                             squeeze=False)
    for i, mat in enumerate(maturities):
        quotes = quote_groups[mat]
        fit = fits[mat]
        ax_p, ax_v = axes[i]
        ax_p.plot([q.strike for q in quotes], [q.mid_price for q in quotes],
                  "kx", label="market")
        ax_p.plot(fit["strikes"], fit["model_prices"], "o-", ms=3,
                  label="model")
        ax_p.set_ylabel(f"{mat}d price")
        ax_p.legend(fontsize=7)
        market_vols = fit.get("market_vols")
        if market_vols is not None:
            ax_v.plot(fit["strikes"], market_vols, "kx", label="market")
        ax_v.plot(fit["strikes"], fit["model_vols"], "o-", ms=3,
                  label="model")
        ax_v.set_ylabel(f"{mat}d implied vol")
        ax_v.legend(fontsize=7)
    axes[-1][0].set_xlabel("strike")
    axes[-1][1].set_xlabel("strike")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
