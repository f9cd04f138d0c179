"""PNG figures rendered next to the CSV outputs.

Everything here reads finished result objects; nothing is recomputed. The
non-interactive Agg backend is selected so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_METADATA = {"Software": None}
_STYLE = {"figure.figsize": (6.4, 4.2), "axes.grid": True, "grid.alpha": 0.3,
          "axes.spines.top": False, "axes.spines.right": False, "legend.frameon": False}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_METADATA)
    plt.close(fig)
    return str(path)


def _band(ax, x, mid, se):
    se = np.asarray(se, dtype=float)
    if np.all(np.isfinite(se)):
        ax.fill_between(x, mid - 1.96 * se, mid + 1.96 * se, alpha=0.2, lw=0)


def plot_apo_table(table, path, boot=None, title=None):
    """Stratum APO estimates at interval midpoints, with bootstrap error bars when given."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        x = np.array([r.midpoint for r in table.rows])
        y = table.estimates
        yerr = None
        if boot is not None:
            yerr = 1.96 * boot.se[:len(x)]
        ax.errorbar(x, y, yerr=yerr, fmt="o", capsize=3)
        ax.set_xlabel("dose (stratum midpoint)")
        ax.set_ylabel("mean APO")
        ax.set_title(title or "Strata APO estimates")
        return _save(fig, path)


def plot_curve(curve, path, boot_se=None, title=None):
    """Fitted polynomial dose-response on its evaluation grid, APO points overlaid."""
    grid = np.array([g[0] for g in curve.eval_grid])
    mu = np.array([g[1] for g in curve.eval_grid])
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(grid, mu, lw=2, label=f"degree {curve.degree} fit")
        if boot_se is not None:
            _band(ax, grid, mu, boot_se)
        ax.plot(curve.moments[:, 1], curve.apo, "o", ms=4, alpha=0.7, label="strata APO")
        ax.set_xlabel("dose")
        ax.set_ylabel(r"$\hat\mu(d)$")
        ax.set_title(title or "Estimated dose-response")
        ax.legend()
        return _save(fig, path)


def plot_curve_study(study, path):
    """Run-averaged fitted curves for each estimator against the true dose-response."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(study.grid, study.truth, "k-", lw=2, label="truth")
        styles = ["--", ":", "-."]
        for k, (name, curve) in enumerate(study.mean_curves.items()):
            ax.plot(study.grid, curve, styles[k % len(styles)], lw=2, label=name)
        ax.set_xlabel("dose d")
        ax.set_ylabel(r"$\mu(d)$")
        ax.set_title("Mean fitted dose-response curves")
        ax.legend()
        return _save(fig, path)


def plot_strata_study(study, path):
    """Average estimates per stratum for each estimator, truth as a solid line."""
    mids = np.array(study.config.strata.midpoints)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(mids, study.truth, "k-", lw=2, label="truth")
        for name in study.names:
            ax.plot(mids, study.metric(name, "Av Est"), "o--", ms=4, label=name)
        ax.set_xlabel("stratum midpoint")
        ax.set_ylabel("average estimate")
        ax.set_title("Strata APO estimates averaged over runs")
        ax.legend(ncol=2, fontsize="small")
        return _save(fig, path)


def plot_wald_study(study, path):
    rates = study.rejection_rates
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        names = list(rates)
        ax.bar(names, [rates[n] for n in names], color="0.6")
        ax.axhline(100 * study.level, color="k", ls="--", lw=1)
        ax.set_ylim(0, 105)
        ax.set_ylabel("rejection rate (%)")
        ax.set_title(f"Wald test of phi = 0 at level {study.level:g}")
        return _save(fig, path)
