"""SVG figures derived from the canonical CSV tables.

The SVG writer is pinned (fixed hash salt, no date) so identical tables give
identical files.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "thzbeam", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0)}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)


def _curves(rows, variable):
    """{strategy: (x, mean over seeds of mean_se)} for one sweep variable."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["sweep_variable"] == variable:
            acc[r["strategy"]][float(r["value"])].append(float(r["mean_se"]))
    return {s: (sorted(v), [np.mean(v[x]) for x in sorted(v)]) for s, v in acc.items()}


def plot_sweep(rows, variable, path, xlabel):
    curves = _curves(rows, variable)
    if not curves:
        return False
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for s, (x, y) in curves.items():
            ax.plot(x, y, marker="o", label=s)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("spectral efficiency (bit/s/Hz)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        _save(fig, path)
    return True


def plot_accuracy_bars(rows, path):
    """Mean validation accuracy per strategy across seeds and sides."""
    by = defaultdict(list)
    for r in rows:
        by[r["strategy"]].append(float(r["accuracy"]))
    if not by:
        return False
    names = list(by)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.bar(names, [np.mean(by[n]) for n in names], yerr=[np.std(by[n]) for n in names], capsize=3)
        ax.set_ylabel("validation accuracy")
        ax.set_ylim(0, 1)
        _save(fig, path)
    return True


def plot_matrix(rows, path):
    """Activation x optimizer heat map of tx-side validation balanced accuracy."""
    rows = [r for r in rows if r["side"] == "tx"]
    if not rows:
        return False
    acts = list(dict.fromkeys(r["activation"] for r in rows))
    opts = list(dict.fromkeys(r["optimizer"] for r in rows))
    grid = np.full((len(acts), len(opts)), np.nan)
    for i, a in enumerate(acts):
        for j, o in enumerate(opts):
            v = [float(r["balanced_accuracy"]) for r in rows if r["activation"] == a and r["optimizer"] == o]
            if v:
                grid[i, j] = np.mean(v)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.imshow(grid, vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(opts)), [o.upper() for o in opts])
        ax.set_yticks(range(len(acts)), acts)
        for i in range(len(acts)):
            for j in range(len(opts)):
                ax.text(j, i, "" if np.isnan(grid[i, j]) else f"{grid[i, j]:.3f}", ha="center", va="center",
                        color="white")
        ax.set_title("balanced accuracy (tx)")
        _save(fig, path)
    return True


def write_plots(res_dir) -> list[Path]:
    from .pipeline import read_csv

    res_dir = Path(res_dir)
    results = read_csv(res_dir / "results.csv")
    jobs = [
        ("se_vs_snr.svg", lambda p: plot_sweep(results, "snr_db", p, "SNR (dB)")),
        ("se_vs_streams.svg", lambda p: plot_sweep(results, "n_streams", p, "data streams N_s")),
        ("accuracy.svg", lambda p: plot_accuracy_bars(read_csv(res_dir / "accuracy.csv"), p)),
        ("accuracy_matrix.svg", lambda p: plot_matrix(read_csv(res_dir / "accuracy_matrix.csv"), p)),
    ]
    return [res_dir / name for name, fn in jobs if fn(res_dir / name)]
