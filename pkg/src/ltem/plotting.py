"""Static figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed salt and no date so repeated runs produce identical SVG files.
_SVG_RC = {"svg.hashsalt": "ltem", "font.size": 10}
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_convergence(tables, path):
    """Log-log errors with reference slopes 1/2 and 1 through the finest point."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(5.5, 4.2))
        for scheme, table in tables.items():
            dt = np.array([r.dt for r in table.rows])
            err = np.array([r.error for r in table.rows])
            ax.loglog(dt, err, "o-", label=scheme.upper())
            i = int(np.argmin(dt))
            ax.loglog(dt, err[i] * (dt / dt[i]) ** 0.5, "k--", lw=0.8)
            ax.loglog(dt, err[i] * (dt / dt[i]), "k:", lw=0.8)
        ax.plot([], [], "k--", lw=0.8, label="slope 1/2")
        ax.plot([], [], "k:", lw=0.8, label="slope 1")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log", base=2)
        ax.set_xlabel(r"$\Delta$")
        ax.set_ylabel(r"$\mathbb{E}|y(T) - y_\Delta(T)|$")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_trajectories(grid, trajectories, path):
    """One panel per (scheme, component), TEM on the top row."""
    schemes = list(trajectories)
    d = next(iter(trajectories.values())).shape[2]
    with plt.rc_context(_SVG_RC):
        fig, axes = plt.subplots(len(schemes), d, figsize=(3.2 * d, 2.6 * len(schemes)),
                                 squeeze=False, sharex=True)
        for r, scheme in enumerate(schemes):
            states = trajectories[scheme]
            for c in range(d):
                ax = axes[r, c]
                ax.plot(grid, states[:, :, c], lw=0.7)
                ax.axhline(0.0, color="k", lw=0.6)
                ax.set_title(f"{scheme.upper()}  $y^{c + 1}_k$")
        for ax in axes[-1]:
            ax.set_xlabel("t")
        fig.tight_layout()
        _save(fig, path)
