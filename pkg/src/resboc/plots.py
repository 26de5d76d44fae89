"""Optional SVG figures for a simulation trace."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_plots(tr, out) -> list[Path]:
    out = Path(out)
    paths = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    e = tr.es_norm()
    for i in range(e.shape[1]):
        ax.semilogy(tr.times, e[:, i] + 1e-16, lw=1, label=f"f{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("|e_s|")
    ax.set_title(f"containment error ({tr.mode})")
    ax.legend(ncol=3, fontsize=7)
    fig.tight_layout()
    paths.append(out / "containment_error.svg")
    fig.savefig(paths[-1])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for r in range(tr.yl.shape[1]):
        for sgn, ls in ((1, "-"), (-1, ":")):
            ax.plot(sgn * tr.yl[:, r, 0], sgn * tr.yl[:, r, -1], "k", ls=ls, lw=0.8)
    for i in range(tr.y.shape[1]):
        ax.plot(tr.y[:, i, 0], tr.y[:, i, -1], lw=1, label=f"f{i + 1}")
    ax.set_aspect("equal")
    ax.set_title("outputs and +/- leader outputs")
    ax.legend(fontsize=7)
    fig.tight_layout()
    paths.append(out / "outputs.svg")
    fig.savefig(paths[-1])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i in range(tr.theta.shape[1]):
        ax.plot(tr.times, tr.theta[:, i], lw=1, label=f"theta f{i + 1}")
        ax.plot(tr.times, tr.rho[:, i], lw=1, ls="--", label=f"rho f{i + 1}")
    ax.set_xlabel("t")
    ax.set_title("adaptive gains (log scale)")
    ax.legend(ncol=4, fontsize=6)
    fig.tight_layout()
    paths.append(out / "gains.svg")
    fig.savefig(paths[-1])
    plt.close(fig)
    return paths
