"""
src/visualization.py

Figures for solver runs:

A) hysteresis_loop.png: M_parallel versus H for both sweep branches
B) magnetization_timeseries.png: mean magnetization components and total energy
C) dispersion_curve.png: spin-wave wavelength versus propagation angle

All figures use matplotlib (Agg backend) with plain defaults.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.utils import ensure_directories_exist, log  # noqa: E402


# =====================================================================
# Figure utilities
# =====================================================================
def _save_figure(fig: plt.Figure, path: Path) -> Path:
    """
    Save a matplotlib figure to disk and close it.

    Parameters
    ----------
    fig : plt.Figure
        Figure object to save.
    path : Path
        Destination path (should end in .png or .pdf).
    """
    path = Path(path)
    ensure_directories_exist([path.parent])
    fig.savefig(str(path), bbox_inches="tight", dpi=150)
    plt.close(fig)
    log(f"Figure saved: {path}")
    return path


# =====================================================================
# Figure A: hysteresis loop
# =====================================================================
def plot_hysteresis_loop(curve: pd.DataFrame, path: Path, H_c: Optional[float] = None) -> Path:
    """
    Plot an M-H loop.

    Parameters
    ----------
    curve : pd.DataFrame
        Columns: H, M_parallel, branch, converged.
    path : Path
        Output file.
    H_c : float, optional
        Coercive field to mark on the field axis.
    """
    log("Generating hysteresis loop figure")
    fig, ax = plt.subplots(figsize=(8, 6))

    for branch, group in curve.groupby("branch", sort=False):
        ax.plot(group["H"], group["M_parallel"], linewidth=2, marker="o", markersize=2, label=branch)
    flagged = curve[~curve["converged"].astype(bool)]
    if not flagged.empty:
        ax.scatter(flagged["H"], flagged["M_parallel"], color="red", zorder=3, label="unconverged")
    if H_c is not None and np.isfinite(H_c):
        for sign in (-1, 1):
            ax.axvline(sign * H_c, color="gray", linestyle="--", linewidth=1)

    ax.set_title("M-H Hysteresis Loop", fontsize=14, fontweight="bold")
    ax.set_xlabel("Applied field H (Oe)", fontsize=12)
    ax.set_ylabel("M_parallel / Ms", fontsize=12)
    ax.set_ylim([-1.1, 1.1])
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", framealpha=0.9)
    return _save_figure(fig, path)


# =====================================================================
# Figure B: time series
# =====================================================================
def plot_time_series(series: pd.DataFrame, path: Path) -> Path:
    """Mean magnetization components (top) and total energy (bottom) versus time."""
    log("Generating magnetization time series figure")
    fig, (ax_m, ax_e) = plt.subplots(2, 1, figsize=(10, 8), sharex=True)

    t_ns = series["t"] * 1e9
    for comp in ("Mx", "My", "Mz"):
        ax_m.plot(t_ns, series[comp], linewidth=1.5, label=f"<{comp}>")
    ax_m.set_ylabel("Magnetization (emu/cm³)", fontsize=12)
    ax_m.grid(True, alpha=0.3)
    ax_m.legend(loc="best")

    ax_e.plot(t_ns, series["E_total"], linewidth=1.5, color="black")
    ax_e.set_xlabel("Time (ns)", fontsize=12)
    ax_e.set_ylabel("Total energy (erg)", fontsize=12)
    ax_e.grid(True, alpha=0.3)

    fig.suptitle("Magnetization Dynamics", fontsize=14, fontweight="bold")
    return _save_figure(fig, path)


# =====================================================================
# Figure C: dispersion
# =====================================================================
def plot_dispersion_curve(curve: pd.DataFrame, path: Path) -> Path:
    """Spin-wave wavelength versus angle between wave vector and magnetization."""
    log("Generating dispersion curve figure")
    fig, ax = plt.subplots(figsize=(8, 6))

    ax.plot(np.degrees(curve["theta"]), curve["wavelength"] * 1e7, "o-",
            linewidth=2, color="black", markerfacecolor="none")

    ax.set_title("Spin-Wave Dispersion at Fixed Frequency", fontsize=14, fontweight="bold")
    ax.set_xlabel("θ (degrees)", fontsize=12)
    ax.set_ylabel("Wavelength (nm)", fontsize=12)
    ax.grid(True, alpha=0.3)
    return _save_figure(fig, path)
