"""Static SVG figures from result CSVs."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import read_csv  # noqa: E402

PLOT_COLUMNS = {
    "boxplot": ("group", "param_rmse"),
    "trajectories": ("t",),
    "scaling": ("n", "seconds"),
}


def plot(kind, csv_path, out_path):
    """Render ``csv_path`` as an SVG at ``out_path``.

    Raises ValueError naming the first missing column, or when the CSV has no
    data rows; nothing is written in either case.
    """
    if kind not in PLOT_COLUMNS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {sorted(PLOT_COLUMNS)}")
    rows = read_csv(csv_path, PLOT_COLUMNS[kind])
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    fig = {"boxplot": _boxplot, "trajectories": _trajectories, "scaling": _scaling}[kind](rows)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return out_path


def _boxplot(rows):
    groups = sorted({r["group"] for r in rows})
    data = [[float(r["param_rmse"]) for r in rows if r["group"] == g] for g in groups]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(groups)), 4))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(groups) + 1), groups, rotation=30, ha="right")
    ax.set_ylabel("parameter RMSE")
    fig.tight_layout()
    return fig


def _columns(rows, prefix):
    keys = [k for k in rows[0] if k.startswith(prefix)]
    return keys, np.array([[float(r[k]) for k in keys] for r in rows]) if keys else np.empty((len(rows), 0))


def _trajectories(rows):
    """Columns: t, then any of obs<i> (dots), truth<i> (dashed), path<j>_<i> (thin lines)."""
    t = np.array([float(r["t"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    path_keys, paths = _columns(rows, "path")
    for j, k in enumerate(path_keys):
        ax.plot(t, paths[:, j], color="tab:blue", alpha=0.25, lw=0.8)
    truth_keys, truth = _columns(rows, "truth")
    for j in range(len(truth_keys)):
        ax.plot(t, truth[:, j], "--", color="tab:orange", lw=1.5)
    obs_keys, obs = _columns(rows, "obs")
    for j in range(len(obs_keys)):
        ok = np.isfinite(obs[:, j])
        ax.plot(t[ok], obs[ok, j], "o", color="black", ms=3)
    ax.set_xlabel("t")
    fig.tight_layout()
    return fig


def _scaling(rows):
    n = np.array([float(r["n"]) for r in rows])
    s = np.array([float(r["seconds"]) for r in rows])
    order = np.argsort(n)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(n[order], s[order], "o-")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("seconds")
    fig.tight_layout()
    return fig
