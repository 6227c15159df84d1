"""PNG figures for convergence logs and sparsity patterns."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sparsity import SparsityPattern  # noqa: E402


def plot_convergence(records, path, title: str | None = None, eps: float | None = None) -> None:
    """Relative residuals (log scale) and sigma against the iteration number."""
    it = np.array([r.iter for r in records])
    fig, (ax, bx) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax.semilogy(it, [r.rel_rp for r in records], label="primal residual")
    ax.semilogy(it, [r.rel_rd for r in records], label="dual residual")
    if eps is not None:
        ax.axhline(eps, color="k", lw=0.8, ls="--")
    ax.set_ylabel("relative residual")
    ax.legend()
    bx.semilogy(it, [r.sigma for r in records], color="C2")
    bx.set_ylabel("sigma")
    bx.set_xlabel("iteration")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pattern(pattern: SparsityPattern, path, base: SparsityPattern | None = None,
                 title: str | None = None) -> None:
    """Spy plot; entries missing from ``base`` (the fill) are drawn in red."""
    rows, cols = pattern.rows, pattern.cols
    fill = np.zeros(len(rows), dtype=bool)
    if base is not None:
        fill = np.array([(i, j) not in base for i, j in pattern.entries])
    fig, ax = plt.subplots(figsize=(5, 5))
    ms = max(1.0, 200.0 / pattern.order)
    for mask, color in ((~fill, "k"), (fill, "r")):
        r, c = rows[mask], cols[mask]
        ax.plot(np.r_[c, r], np.r_[r, c], "s", color=color, ms=ms, mew=0, ls="none")
    ax.set_xlim(-0.5, pattern.order - 0.5)
    ax.set_ylim(pattern.order - 0.5, -0.5)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
