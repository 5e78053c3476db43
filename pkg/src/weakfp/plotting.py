"""Figures rendered to files next to the CSV tables they display."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def drift_figure(header, rows, path) -> None:
    """Learned against true drift, one panel per axis."""
    a = np.array(rows, dtype=float)
    if header[0] == "x":
        a = np.column_stack([np.ones(len(a)), a])
    axes_ids = np.unique(a[:, 0]).astype(int)
    fig, axes = plt.subplots(1, axes_ids.size, figsize=(4.5 * axes_ids.size, 3.5), squeeze=False)
    for ax, k in zip(axes[0], axes_ids):
        sel = a[a[:, 0] == k]
        if np.isfinite(sel[:, 2]).any():
            ax.plot(sel[:, 1], sel[:, 2], "k-", label="true")
        ax.plot(sel[:, 1], sel[:, 3], "r--", label="learned")
        ax.set_xlabel(f"x{k}")
        ax.set_ylabel(f"mu{k}")
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def study_figure(rows, path) -> None:
    """Seed-averaged MRE against the swept parameter on log-log axes."""
    ok = [r for r in rows if np.isfinite(r["mean_mre"]) and r["mean_mre"] > 0]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    if ok:
        ax.loglog([r["value"] for r in ok], [r["mean_mre"] for r in ok], "o-")
        ax.set_xlabel(ok[0]["parameter"])
    ax.set_ylabel("mean MRE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bench_figure(rows, path) -> None:
    """Assembly time against each swept factor."""
    factors = sorted({r["factor"] for r in rows})
    fig, axes = plt.subplots(1, len(factors), figsize=(3.5 * len(factors), 3.2), squeeze=False)
    for ax, f in zip(axes[0], factors):
        sel = [r for r in rows if r["factor"] == f]
        ax.loglog([r[f] for r in sel], [r["assembly_s"] for r in sel], "o-")
        ax.set_xlabel(f)
        ax.set_ylabel("assembly time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def png_beside(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")
