"""Report figures.  Rendered off-screen with the Agg backend."""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def weight_curves(curves: Dict[str, tuple], path, cutoff: Optional[float] = None) -> None:
    """Weights against predicted standard error, one line per setting.

    ``curves`` maps a label to ``(s, w)``.
    """
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for label, (s, w) in curves.items():
        order = np.argsort(s)
        ax.plot(np.asarray(s)[order], np.asarray(w)[order], marker=".", ms=3, lw=1, label=label)
    if cutoff is not None:
        ax.axhline(cutoff, color="0.5", ls=":", lw=1)
    ax.axhline(1.0, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("predicted standard error $S_m$")
    ax.set_ylabel("weight $w_m$")
    ax.legend(fontsize=8, frameon=False)
    _save(fig, path)


def analysis_panels(s, w, pvalues, rejected, path, coords=None, shape=None) -> None:
    """Weight against S with rejections marked; weight map for 2-D grids."""
    s, w = np.asarray(s, dtype=float), np.asarray(w, dtype=float)
    rejected = np.asarray(rejected, dtype=bool)
    with_map = coords is not None and shape is not None and len(shape) == 2
    fig, axes = plt.subplots(1, 2 if with_map else 1, figsize=(10 if with_map else 5.5, 4.0))
    ax = axes[0] if with_map else axes
    if np.isfinite(s).any():
        ax.scatter(s[~rejected], w[~rejected], s=6, c="0.6", label="not rejected")
        ax.scatter(s[rejected], w[rejected], s=8, c="C3", label="rejected")
        ax.set_xlabel("predicted standard error $S_m$")
    else:
        x = -np.log10(np.clip(np.asarray(pvalues, dtype=float), 1e-300, 1))
        ax.scatter(x[~rejected], w[~rejected], s=6, c="0.6", label="not rejected")
        ax.scatter(x[rejected], w[rejected], s=8, c="C3", label="rejected")
        ax.set_xlabel("$-\\log_{10} P_m$")
    ax.set_ylabel("weight $w_m$")
    ax.legend(fontsize=8, frameon=False)
    if with_map:
        grid = np.full(shape, np.nan)
        grid[tuple(np.asarray(coords).T)] = w
        im = axes[1].imshow(grid.T, origin="lower", cmap="viridis", interpolation="nearest")
        r = np.asarray(coords)[rejected]
        axes[1].scatter(r[:, 0], r[:, 1], s=4, c="C3", marker="s")
        fig.colorbar(im, ax=axes[1], label="weight")
        axes[1].set_xlabel("x")
        axes[1].set_ylabel("y")
    _save(fig, path)


def simulation_summary(rows: Sequence[dict], path) -> None:
    """FDR and power per procedure with two-standard-error bars."""
    names = [r["procedure"] for r in rows]
    x = np.arange(len(rows))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.8))
    for ax, key, label in ((a1, "fdr", "FDR"), (a2, "power", "power")):
        vals = np.array([r[key] for r in rows], dtype=float)
        err = 2 * np.array([r[f"{key}_se"] for r in rows], dtype=float)
        ax.bar(x, np.nan_to_num(vals), yerr=np.nan_to_num(err), color="C0", capsize=3)
        ax.set_xticks(x, names, rotation=30, ha="right")
        ax.set_ylabel(label)
    alpha = rows[0].get("alpha") if rows else None
    if alpha is not None:
        a1.axhline(alpha, color="C3", ls="--", lw=1)
    _save(fig, path)
