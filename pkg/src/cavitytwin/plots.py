"""Figure rendering for the report paths (PNG files next to the CSV data).

Conventions follow the usual display format for this kind of data: the
time-series panel offsets the amplitude quadrature by +400 counts so the
two photocurrents do not overlap; the phasor panel marks the shared g = 0
point with a triangle, the quantum curve end with a circle and the
semiclassical curve end with an x.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

TIMESERIES_OFFSET = 400.0


def plot_timeseries(t, xa, xp, path, events=None, offset: float = TIMESERIES_OFFSET,
                    title: str | None = None) -> None:
    """Amplitude (offset) and phase quadratures versus time, with detected
    event spans shaded."""
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(t * 1e3, np.asarray(xa) + offset, lw=0.4, color="C0",
            label=f"amplitude quadrature (+{offset:.0f})")
    ax.plot(t * 1e3, xp, lw=0.4, color="C1", label="phase quadrature")
    if events:
        for ev in events:
            ax.axvspan(ev.start / ev.sample_rate * 1e3,
                       ev.end / ev.sample_rate * 1e3,
                       color="0.85", zorder=0)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("photocurrent (counts)")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_phasor(dot_sets, curves, scale: float, path, title: str | None = None) -> None:
    """Phasor dots over the quantum and semiclassical theory curves."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for dots in dot_sets:
        xy = dots.xy()
        ax.plot(xy[:, 0], xy[:, 1], ".", color="0.6", ms=4, zorder=1)
    q = curves.quantum * scale
    s = curves.semiclassical * scale
    ax.plot(q.real, q.imag, "-", color="C0", lw=1.2, label="quantum", zorder=2)
    ax.plot(s.real, s.imag, "-", color="C3", lw=1.2, label="semiclassical", zorder=2)
    ax.plot(q.real[0], q.imag[0], "^", color="k", ms=8, zorder=3)   # shared g = 0
    ax.plot(q.real[-1], q.imag[-1], "o", mfc="none", mec="C0", ms=9, zorder=3)
    ax.plot(s.real[-1], s.imag[-1], "x", color="C3", ms=9, zorder=3)
    ax.set_xlabel("amplitude quadrature (counts)")
    ax.set_ylabel("phase quadrature (counts)")
    ax.axhline(0.0, color="0.9", lw=0.5, zorder=0)
    ax.axvline(0.0, color="0.9", lw=0.5, zorder=0)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_tables(tables, path) -> None:
    """Steady-field, excitation, force scalar and diffusion scalar vs g."""
    g_mhz = tables.g_grid / (2e6 * np.pi)
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    axes[0, 0].plot(g_mhz, np.abs(tables.field), color="C0")
    axes[0, 0].set_ylabel("|<a>| (sqrt photons)")
    axes[0, 1].plot(g_mhz, tables.excitation, color="C1")
    axes[0, 1].set_ylabel("atomic excitation")
    axes[1, 0].plot(g_mhz, tables.force_scalar, color="C2")
    axes[1, 0].set_ylabel("force scalar")
    axes[1, 0].set_xlabel("g/2pi (MHz)")
    axes[1, 1].plot(g_mhz, tables.dipole_corr * 1e9, color="C3")
    axes[1, 1].set_ylabel("dipole correlation (ns)")
    axes[1, 1].set_xlabel("g/2pi (MHz)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(rows: list, path) -> None:
    """Endpoint curve separation and transit yield across the sweep grid."""
    ok = [r for r in rows if r.get("error") is None]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    deltas = sorted({r["delta_mhz"] for r in ok})
    for m in sorted({r["m_empty"] for r in ok}):
        sel = [r for r in ok if r["m_empty"] == m]
        sel.sort(key=lambda r: r["delta_mhz"])
        axes[0].plot([r["delta_mhz"] for r in sel],
                     [r["endpoint_separation"] for r in sel],
                     "o-", label=f"m = {m:g}")
        axes[1].plot([r["delta_mhz"] for r in sel],
                     [r["transit_yield"] for r in sel], "s--", label=f"m = {m:g}")
    axes[0].set_xlabel("detuning (MHz)")
    axes[0].set_ylabel("endpoint separation / empty radius")
    axes[1].set_xlabel("detuning (MHz)")
    axes[1].set_ylabel("transit yield")
    for ax in axes:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
