"""Figures for mapped meshes, partitions and run traces (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def _ball(ax, circles):
    t = np.linspace(0, 2 * np.pi, 400)
    ax.plot(np.cos(t), np.sin(t), color="k", lw=1.0)
    for c in circles:
        cx, cy, r = (c.center.real, c.center.imag, c.radius) if hasattr(c, "center") else c
        ax.fill(cx + r * np.cos(t), cy + r * np.sin(t), color="0.75", ec="k", lw=0.8)
    ax.set_aspect("equal")
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_xticks([])
    ax.set_yticks([])


def plot_mapping(mm, path, field="beltrami"):
    """Surface (top view) next to its ball-world image, faces coloured by ``field``."""
    mesh = mm.source
    vals = mm.beltrami if field == "beltrami" else mm.conformal_factor
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    for ax, pts, title in ((axes[0], mesh.vertices[:, :2], "surface"), (axes[1], np.column_stack([mm.image.real, mm.image.imag]), "ball world")):
        tri = Triangulation(pts[:, 0], pts[:, 1], mesh.faces)
        tpc = ax.tripcolor(tri, facecolors=vals, cmap="viridis", edgecolors="none")
        ax.triplot(tri, color="w", lw=0.15, alpha=0.5)
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(tpc, ax=axes, shrink=0.8, label="|mu|" if field == "beltrami" else "lambda")
    return _save(fig, path)


def plot_partition(circles, bars, agents=(), path=None, ax=None, density=None):
    own = ax is None
    if own:
        fig, ax = plt.subplots(figsize=(6, 6))
    if density is not None:
        x = np.linspace(-1, 1, 200)
        X, Y = np.meshgrid(x, x)
        Z = density(X + 1j * Y)
        Z = np.where(X**2 + Y**2 <= 1, Z, np.nan)
        ax.imshow(Z, extent=(-1, 1, -1, 1), origin="lower", cmap="Greens", alpha=0.6)
    _ball(ax, circles)
    segs = []
    for b in bars:
        pts = b.points if hasattr(b, "points") else np.array([complex(*xy) for xy in b])
        segs.append(np.column_stack([pts.real, pts.imag]))
    ax.add_collection(LineCollection(segs, colors="tab:red", lw=1.2))
    if len(agents):
        a = np.asarray([complex(*z) if not np.iscomplexobj(z) else z for z in agents])
        ax.plot(a.real, a.imag, "o", color="tab:blue", ms=6)
    if own:
        return _save(fig, path)
    return ax


def plot_workloads(trace, path):
    ids = trace.ids
    steps = [r["step"] for r in trace.rows]
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for aid in ids:
        ys = [r["m"][r["ids"].index(aid)] if aid in r["ids"] else np.nan for r in trace.rows]
        axes[0].plot(steps, ys, lw=1.0, label=f"agent {aid}")
    axes[0].set_ylabel("workload")
    axes[0].legend(fontsize=7, ncol=3)
    axes[1].plot(steps, [r["J"] for r in trace.rows], color="k")
    axes[1].set_ylabel("coverage cost J")
    axes[1].set_xlabel("step")
    for ev in trace.events:
        for ax in axes:
            ax.axvline(ev["step"], color="tab:red", ls="--", lw=0.8)
    return _save(fig, path)


def plot_error_decay(errors, dt, gamma, floor, path):
    e = np.asarray(errors, dtype=float)
    t = dt * np.arange(len(e))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(t, e, label="||e(t)||")
    ax.semilogy(t, e[0] * np.exp(-gamma * t) + floor, "--", label="ISS envelope")
    ax.set_xlabel("time")
    ax.legend()
    return _save(fig, path)
