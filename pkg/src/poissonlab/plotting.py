"""SVG figures for experiment reports (matplotlib, Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "poissonlab"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def rate_plot(table, path, title: str = "") -> None:
    """Log-log gap against eps with the fitted line and the theoretical band."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    e = table.eps
    ax.loglog(e, table.gaps, "o", label="measured gap")
    lo, hi = table.band
    ee = np.geomspace(e.min(), e.max(), 50)
    if hi > 0:
        ax.fill_between(ee, lo * ee ** (2 / 3), hi * ee ** (2 / 3), alpha=0.15,
                        label="band C/3 .. 6C")
    if np.isfinite(table.slope):
        ax.loglog(ee, np.exp(table.intercept) * ee ** table.slope, "-",
                  label=f"fit slope {table.slope:.4f}")
    ax.set_xlabel("eps")
    ax.set_ylabel("gap")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def cloud_plot(clouds: dict, path, title: str = "", dims=(0, 1)) -> None:
    """Scatter of named point clouds projected on two coordinates."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, pts in clouds.items():
        pts = np.asarray(pts)
        ax.plot(pts[:, dims[0]], pts[:, dims[1]], ".", ms=1.5, label=name)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(title)
    ax.legend(fontsize=8, markerscale=6)
    _save(fig, path)


def curve_plot(x, curves: dict, path, title: str = "", xlabel: str = "", logy=False) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, y in curves.items():
        (ax.semilogy if logy else ax.plot)(x, y, label=name)
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)
