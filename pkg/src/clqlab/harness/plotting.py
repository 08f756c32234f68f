"""SVG + CSV renderings of loss curves and ablation results."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from clqlab.harness.training import LOSS_HEADER, read_results

LOSS_COLUMNS = LOSS_HEADER.split(",")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "clq"  # stable element ids
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def read_loss_csv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != LOSS_HEADER:
            raise ValueError(f"{path}: unexpected loss header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {k: data[:, i] for i, k in enumerate(LOSS_COLUMNS)}


def smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or y.size < window:
        return y
    kernel = np.ones(window) / window
    head = np.cumsum(y[:window - 1]) / np.arange(1, window)
    return np.concatenate([head, np.convolve(y, kernel, mode="valid")])


def plot_loss_curves(loss_csvs, out_prefix, window: int = 25) -> tuple[Path, Path]:
    """One panel per loss component, one line per run. Writes ``<prefix>.svg`` and ``<prefix>.csv``."""
    plt = _pyplot()
    curves = {Path(p).parent.name or Path(p).stem: read_loss_csv(p) for p in loss_csvs}
    comps = ["L_cls", "L_reg", "L_lqe", "L_total"]
    fig, axes = plt.subplots(1, len(comps), figsize=(4 * len(comps), 3.2))
    for ax, comp in zip(axes, comps):
        for name, c in curves.items():
            ax.plot(c["iter"], smooth(c[comp], window), label=name, linewidth=1.0)
        ax.set_title(comp)
        ax.set_xlabel("iteration")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    svg = prefix.with_suffix(".svg")
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    table = prefix.with_suffix(".csv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run"] + LOSS_COLUMNS)
        for name, c in curves.items():
            for i in range(c["iter"].size):
                w.writerow([name, int(c["iter"][i])] + [repr(float(c[k][i])) for k in LOSS_COLUMNS[1:-1]]
                           + [int(c["N_pos"][i])])
    return svg, table


def plot_ablation(results_csv, out_prefix) -> tuple[Path, Path]:
    """Bar chart of mean AP (std error bars) and mean rank correlation per run."""
    plt = _pyplot()
    rows = read_results(results_csv)
    runs = []
    for r in rows:
        if r.run not in runs:
            runs.append(r.run)
    stats = []
    for run in runs:
        sel = [r for r in rows if r.run == run]
        ap = np.array([r.AP for r in sel])
        rho = np.array([r.spearman for r in sel])
        rho = rho[~np.isnan(rho)]
        stats.append((run, len(sel), ap.mean(), ap.std(ddof=1) if ap.size > 1 else 0.0,
                      rho.mean() if rho.size else float("nan"),
                      rho.std(ddof=1) if rho.size > 1 else 0.0))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    x = np.arange(len(stats))
    ax1.bar(x, [s[2] for s in stats], yerr=[s[3] for s in stats], capsize=3)
    ax1.set_ylabel("AP")
    ax2.bar(x, [s[4] for s in stats], yerr=[s[5] for s in stats], capsize=3, color="tab:orange")
    ax2.set_ylabel("score/IoU spearman")
    for ax in (ax1, ax2):
        ax.set_xticks(x, [s[0] for s in stats], rotation=15, fontsize=8)
    fig.tight_layout()
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    svg = prefix.with_suffix(".svg")
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    table = prefix.with_suffix(".csv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "n", "AP_mean", "AP_std", "spearman_mean", "spearman_std"])
        for s in stats:
            w.writerow([s[0], s[1]] + [f"{v:.6f}" for v in s[2:]])
    return svg, table
