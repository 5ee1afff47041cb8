"""Matplotlib report figures rendered next to the CSV artifacts.

All entry points write a file and return its path; nothing is shown
interactively (the Agg backend is forced so headless runs work).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .channel import AngleDelayGrid, MpcSet, padp
from .planning import CoverageMap


def save_pdp_figure(records, path, title: str = "Traced power-delay profile"):
    """Stem plot of path power versus delay, one color per reflection order."""
    fig, ax = plt.subplots(figsize=(7, 4))
    floor = min((r.power_db for r in records), default=-120.0) - 5.0
    for order in sorted({r.order for r in records}):
        sel = [r for r in records if r.order == order]
        taus = [r.tau * 1e9 for r in sel]
        pows = [r.power_db for r in sel]
        ax.vlines(taus, floor, pows, alpha=0.7)
        ax.plot(taus, pows, "o", label=f"order {order}")
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("power (dB)")
    ax.set_ylim(bottom=floor)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_padp_figure(
    grid: AngleDelayGrid,
    path,
    mpcs: MpcSet | None = None,
    dynamic_range_db: float = 40.0,
    max_delay_ns: float | None = None,
):
    """Power-angle-delay heatmap with optional extracted-peak markers."""
    mat = padp(grid)
    with np.errstate(divide="ignore"):
        mat_db = 10.0 * np.log10(mat)
    vmax = float(np.nanmax(mat_db[np.isfinite(mat_db)])) if np.isfinite(mat_db).any() else 0.0
    tau_ns = grid.delay_s * 1e9
    if max_delay_ns is None:
        max_delay_ns = float(tau_ns[min(len(tau_ns) - 1, len(tau_ns) // 4)])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    im = ax.pcolormesh(
        tau_ns,
        grid.azimuth_deg,
        mat_db.T,
        vmin=vmax - dynamic_range_db,
        vmax=vmax,
        shading="nearest",
        cmap="inferno",
    )
    if mpcs is not None:
        ax.plot(
            [m.tau * 1e9 for m in mpcs],
            [m.azimuth_deg for m in mpcs],
            "c^",
            markersize=7,
            markerfacecolor="none",
            label="extracted MPCs",
        )
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlim(0.0, max_delay_ns)
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("azimuth (deg)")
    ax.set_title("Power-angle-delay profile")
    fig.colorbar(im, ax=ax, label="power (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_coverage_map_figure(cmap: CoverageMap, path, tx_points=None):
    """SINR heatmap and transmitter-association map side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    sinr_ax, assoc_ax = axes
    im = sinr_ax.pcolormesh(cmap.x_m, cmap.y_m, cmap.sinr_db, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=sinr_ax, label="SINR (dB)")
    sinr_ax.set_title(f"SINR at z = {cmap.z_m:g} m")

    n_tx = int(max(cmap.assoc.max(), 0)) + 1
    assoc = np.ma.masked_where(cmap.assoc < 0, cmap.assoc)
    im2 = assoc_ax.pcolormesh(
        cmap.x_m, cmap.y_m, assoc, shading="nearest",
        cmap=plt.get_cmap("tab10", max(n_tx, 1)), vmin=-0.5, vmax=max(n_tx, 1) - 0.5,
    )
    fig.colorbar(im2, ax=assoc_ax, ticks=range(n_tx), label="associated Tx")
    assoc_ax.set_title("Association")

    for ax in axes:
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_aspect("equal")
        if tx_points is not None:
            pts = np.atleast_2d(np.asarray(tx_points, dtype=float))
            ax.plot(pts[:, 0], pts[:, 1], "rx", markersize=9, markeredgewidth=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def save_coverage_curves_figure(curves: dict, path, title: str = "Coverage probability"):
    """curves maps a label to a (thresholds_db, probabilities) pair."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for label, (thr, pc) in curves.items():
        ax.plot(thr, pc, label=label)
    ax.set_xlabel("SINR threshold (dB)")
    ax.set_ylabel("coverage probability")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
