"""PNG figures written next to the CSV/JSON outputs (matplotlib, Agg backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def plot_equilibrium(res, path, title: str = "") -> None:
    """Density for 1D grids; node masses as a colour map for 2D grids."""
    from .equilibrium import density_1d

    fig, ax = plt.subplots(figsize=(6, 4))
    grid = res.grid
    if grid is not None and grid.edges is not None:
        x, dens = density_1d(res)
        ax.plot(x, dens, lw=1.2)
        finite = np.isfinite(x)
        lo, hi = np.percentile(x[finite & res.support_mask], [0.5, 99.5]) if res.support_mask.any() else (x.min(), x.max())
        pad = 0.1 * (hi - lo + 1e-12)
        ax.set_xlim(lo - pad, hi + pad)
        ax.set_xlabel("x")
        ax.set_ylabel("density")
    else:
        z = res.measure.plane_support()
        sc = ax.scatter(z.real, z.imag, c=res.measure.masses, s=4, cmap="viridis")
        fig.colorbar(sc, ax=ax, label="mass")
        ax.set_aspect("equal")
    ax.set_title(title or f"equilibrium measure, V_w = {res.V_w:.6g}")
    _save(fig, path)


def plot_frostman(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    z = report.nodes
    r = np.where(np.isfinite(report.residuals), report.residuals, np.nan)
    if np.all(z.imag == 0):
        ax.plot(z.real, r, ".", ms=2)
        ax.set_xlabel("x")
    else:
        ax.plot(np.abs(z), r, ".", ms=2)
        ax.set_xlabel("|z|")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_ylabel("U + Q - F_w")
    ax.set_title("Frostman residual")
    _save(fig, path)


def plot_points(points, path, title: str = "", eq=None) -> None:
    z = np.asarray(points, dtype=complex)
    fig, ax = plt.subplots(figsize=(6, 4))
    if np.all(z.imag == 0):
        ax.plot(z.real, np.zeros(len(z)), "o", ms=4)
        if eq is not None and eq.grid is not None and eq.grid.edges is not None:
            from .equilibrium import density_1d

            x, dens = density_1d(eq)
            ax.plot(x, dens / max(dens.max(), 1e-300), lw=1, alpha=0.6, label="equilibrium (scaled)")
            ax.legend()
        ax.set_xlabel("x")
    else:
        ax.plot(z.real, z.imag, "o", ms=3)
        ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)


def plot_delta(rows, path) -> None:
    ks = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [r["delta_k"] for r in rows], "o-", label="delta_k")
    target = rows[0].get("target_delta", math.nan)
    if math.isfinite(target):
        ax.axhline(target, color="k", ls="--", lw=0.8, label="exp(-V_w)")
    ax.set_xlabel("k")
    ax.legend()
    _save(fig, path)


def plot_sample_histogram(samples, path, reference=None, bins: int = 100) -> None:
    """Histogram of all sampled coordinates; ``reference`` is an optional callable density."""
    x = np.asarray(samples).ravel()
    fig, ax = plt.subplots(figsize=(6, 4))
    if np.iscomplexobj(x) and np.any(x.imag != 0):
        ax.hist2d(x.real, x.imag, bins=bins)
        ax.set_aspect("equal")
    else:
        x = x.real
        lo, hi = np.percentile(x, [0.5, 99.5])
        ax.hist(x, bins=bins, range=(lo, hi), density=True, alpha=0.6)
        if reference is not None:
            t = np.linspace(lo, hi, 400)
            ax.plot(t, reference(t), "k", lw=1)
        ax.set_xlabel("x")
    ax.set_title("sampled points")
    _save(fig, path)


def plot_zk(rows, path) -> None:
    ks = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [r["normalised"] for r in rows], "o-", label="log Z_k / (k(k-1))")
    target = rows[0]["target"]
    if math.isfinite(target):
        ax.axhline(target, color="k", ls="--", lw=0.8, label="-V_w")
    ax.set_xlabel("k")
    ax.legend()
    _save(fig, path)


def plot_bm(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(report.degrees, report.M_k_kth_root, "o-")
    ax.axhline(1.0, color="k", lw=0.6)
    ax.set_xlabel("degree k")
    ax.set_ylabel("M_k^(1/k)")
    _save(fig, path)


def plot_ldp(report, path) -> None:
    ks = np.array(report.k_list, dtype=float)
    logs = np.log(np.maximum(np.array(report.sigma_hat), 1e-300))
    fig, ax = plt.subplots(figsize=(6, 4))
    ok = np.array(report.sigma_hat) > 0
    ax.plot(ks[ok] ** 2, logs[ok], "o", label="log sigma_k")
    if report.fit_k2 is not None:
        t = np.linspace(0, ks.max() ** 2, 50)
        ax.plot(t, report.fit_k2.intercept + report.fit_k2.slope * t, "-", label="fit")
    ax.plot([0, ks.max() ** 2], [0, report.expected_slope * ks.max() ** 2], "k--", lw=0.8,
            label="-rate * k^2")
    ax.set_xlabel("k^2")
    ax.set_title(f"verdict: {report.verdict}")
    ax.legend()
    _save(fig, path)
