"""Figure rendering for the CLI report paths.

The CSVs are the data contract; these helpers render a companion PNG
next to each one. Uses the Agg backend so headless runs work.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "lines.linewidth": 1.6,
})


def plot_crlb_sweep(points, out_path: str | Path) -> Path:
    """Range/velocity RMSE vs sensing overhead on twin log axes."""
    overhead = [p.overhead_mbps for p in points]
    fig, ax_r = plt.subplots()
    ax_v = ax_r.twinx()
    ax_r.semilogy(overhead, [p.rmse_range_m for p in points],
                  color="tab:blue", label="Range RMSE")
    ax_v.semilogy(overhead, [p.rmse_velocity_mps for p in points],
                  color="tab:red", linestyle="--", label="Velocity RMSE")
    ax_r.set_xlabel("Sensing overhead [Mbps]")
    ax_r.set_ylabel("Range RMSE [m]", color="tab:blue")
    ax_v.set_ylabel("Velocity RMSE [m/s]", color="tab:red")
    ax_v.grid(False)
    lines = ax_r.get_lines() + ax_v.get_lines()
    ax_r.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


_CDF_STYLES = {
    "peak_m20": ("--", "tab:blue"),
    "peak_m60": ("-", "tab:blue"),
    "subspace_m20": ("--", "tab:red"),
    "subspace_m60": ("-", "tab:red"),
}


def plot_ranging_cdf(axis: np.ndarray, columns: dict, out_path: str | Path,
                     xmax_m: float = 2.0) -> Path:
    """Empirical CDF of range error per method/snapshot-count pair."""
    fig, ax = plt.subplots()
    for name, cdf in columns.items():
        style, color = _CDF_STYLES.get(name, ("-", None))
        label = name.replace("peak_m", "Peak report, M=").replace(
            "subspace_m", "Subspace dApp, M=")
        ax.plot(axis, cdf, linestyle=style, color=color, label=label)
    ax.set_xlim(0, xmax_m)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("Range estimation error [m]")
    ax.set_ylabel("Empirical CDF")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_tracks(track_rows, site_positions, target_xy,
                out_path: str | Path) -> Path:
    """Fused positions and sites in the plane."""
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    sx = [p[0] for p in site_positions]
    sy = [p[1] for p in site_positions]
    ax.scatter(sx, sy, marker="^", s=60, color="tab:green", label="sites")
    if target_xy is not None:
        ax.scatter([target_xy[0]], [target_xy[1]], marker="*", s=120,
                   color="tab:orange", label="target")
    if track_rows:
        xs = [r[2] for r in track_rows]
        ys = [r[3] for r in track_rows]
        ax.plot(xs, ys, "o-", ms=4, color="tab:blue", label="fused track")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
