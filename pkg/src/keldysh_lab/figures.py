"""Figure renderers for the report path; every plot lands next to the
delimited output it illustrates."""
from __future__ import annotations

import os
from typing import Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trotter_scan(Ns: Sequence[int], errors: Sequence[float], slope: float,
                      path: str) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.loglog(Ns, errors, "o-", label="|Z_N - Z_exact|")
    ref = errors[0] * (np.asarray(Ns, dtype=float) / Ns[0]) ** -1.0
    ax.loglog(Ns, ref, "k--", alpha=0.6, label="slope -1 reference")
    ax.set_xlabel("N")
    ax.set_ylabel("error")
    ax.set_title(f"product-formula convergence (fit slope {slope:.3f})")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_volume_scan(sizes: Sequence[int], alphas: Sequence[float], path: str,
                     ratio: float) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(sizes, alphas, "o-")
    ax.set_xlabel("|X|")
    ax.set_ylabel(r"numeric $\alpha_C$")
    ax.set_title(f"volume scan, max/min = {ratio:.3f}")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_covariance_magnitudes(cov, path: str, grid: int = 40) -> str:
    """Heatmaps of max-entry |C_bb'(t,t')| over the time square."""
    ts = np.linspace(0.0, cov.T, grid)
    fig, axes = plt.subplots(2, 2, figsize=(7.5, 6.4), constrained_layout=True)
    for ai, bra in enumerate("+-"):
        for aj, ket in enumerate("+-"):
            Z = np.empty((grid, grid))
            for i, t in enumerate(ts):
                for j, tp in enumerate(ts):
                    Z[i, j] = np.abs(cov.block(bra, ket, t, tp)).max()
            ax = axes[ai][aj]
            im = ax.imshow(Z, origin="lower", extent=(0, cov.T, 0, cov.T),
                           aspect="auto")
            ax.set_title(f"|C_{bra}{ket}|")
            ax.set_xlabel("t'")
            ax.set_ylabel("t")
            fig.colorbar(im, ax=ax, shrink=0.85)
    return _save(fig, path)


def plot_bound_margins(records: Sequence[dict], path: str) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    labels = [f"({r['m']},{r['mbar']})" for r in records]
    x = np.arange(len(records))
    lhs = [max(r["lhs"], 1e-300) for r in records]
    rhs = [max(r["rhs"], 1e-300) for r in records]
    ax.bar(x - 0.18, lhs, width=0.36, label="LHS")
    ax.bar(x + 0.18, rhs, width=0.36, label="RHS")
    ax.set_yscale("log")
    ax.set_xticks(x, labels)
    ax.set_xlabel("(m, mbar)")
    ax.set_title("cumulant bound, LHS vs RHS")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)


def plot_decay_vs_time(Ts: Sequence[float], numeric: Sequence[float],
                       bounds: Sequence[float], path: str,
                       limit: float | None = None) -> str:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(Ts, numeric, "o-", label=r"numeric $\alpha_C$")
    ax.plot(Ts, bounds, "s--", label="analytic bound")
    if limit is not None:
        ax.axhline(limit, color="k", ls=":", alpha=0.7, label="long-time limit")
    ax.set_xlabel("T")
    ax.set_ylabel(r"$\alpha_C$")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_cumulant_magnitudes(table, path: str) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    degrees = table.degrees()
    labels = [f"({m},{mb})" for (m, mb) in degrees]
    vals = []
    for d in degrees:
        t = table.gammaT[d]
        vals.append(float(np.abs(t).max()) if t.size else 0.0)
    x = np.arange(len(labels))
    ax.bar(x, [max(v, 1e-300) for v in vals])
    ax.set_yscale("log")
    ax.set_xticks(x, labels, rotation=45)
    ax.set_ylabel(r"max $|\gamma^T_{m,\bar m}|$")
    ax.set_title(f"connected tensors, coupling={table.coupling:g}")
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)
