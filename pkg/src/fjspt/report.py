"""Figure rendering for schedules, training curves and benchmark tables.

All figures are written to files (SVG/PNG by extension); rendering uses
the non-interactive backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def gantt_figure(inst, sched, path):
    """Gantt chart with one lane per machine and one per vehicle.

    Machine lanes show processing intervals; vehicle lanes show transport
    tasks split into the empty (hatched) and loaded legs.
    """
    lanes = inst.m + inst.v
    fig, ax = plt.subplots(figsize=(10, 0.5 * lanes + 1.5))
    cmap = plt.get_cmap("tab20")

    for r in sched.rows:
        y = inst.m - 1 - r.machine
        ax.broken_barh([(r.start, r.completion - r.start)], (y + 0.1, 0.8),
                       facecolors=cmap(r.job % 20), edgecolor="black",
                       linewidth=0.5)
        ax.text(r.start + (r.completion - r.start) / 2, y + 0.5,
                f"J{r.job + 1}.{r.op + 1}", ha="center", va="center", fontsize=7)

    for u, tasks in enumerate(sched.vehicle_tasks):
        y = -(u + 1)  # vehicle lanes sit below the machine lanes
        for task in tasks:
            off_end = task.depart + inst.travel[task.source][task.pickup_at]
            if off_end > task.depart:
                ax.broken_barh([(task.depart, off_end - task.depart)],
                               (y + 0.1, 0.8), facecolors="white",
                               edgecolor="gray", hatch="///", linewidth=0.5)
            if task.arrival > off_end:
                ax.broken_barh([(off_end, task.arrival - off_end)],
                               (y + 0.1, 0.8), facecolors=cmap(task.job % 20),
                               edgecolor="black", linewidth=0.5)

    labels = [f"M{k + 1}" for k in range(inst.m)] + [f"V{u + 1}" for u in range(inst.v)]
    positions = ([inst.m - 1 - k + 0.5 for k in range(inst.m)]
                 + [-(u + 1) + 0.5 for u in range(inst.v)])
    ax.set_yticks(positions)
    ax.set_yticklabels(labels)
    ax.set_xlabel("time")
    ax.set_title(f"{inst.name}: makespan {sched.makespan}")
    ax.set_xlim(0, sched.makespan * 1.02 if sched.makespan else 1)
    ax.grid(axis="x", linestyle=":", alpha=0.5)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def training_curve_figure(log_rows, path):
    """Mean greedy validation makespan against training episodes."""
    episodes = [row["episode"] for row in log_rows]
    spans = [row["mean_greedy_makespan"] for row in log_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(episodes, spans, marker="o", markersize=3)
    ax.set_xlabel("episodes")
    ax.set_ylabel("mean greedy makespan")
    ax.set_title("validation makespan")
    ax.grid(linestyle=":", alpha=0.5)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def eval_summary_figure(mean_rows, path):
    """Bar chart of mean makespan per method, one group per size."""
    sizes = sorted({row["size"] for row in mean_rows})
    methods = sorted({row["method"] for row in mean_rows})
    width = 0.8 / max(1, len(methods))
    fig, ax = plt.subplots(figsize=(1.8 * len(sizes) + 3, 4))
    for mi, method in enumerate(methods):
        xs, ys = [], []
        for si, size in enumerate(sizes):
            for row in mean_rows:
                if row["size"] == size and row["method"] == method:
                    xs.append(si + (mi - (len(methods) - 1) / 2) * width)
                    ys.append(row["makespan"])
        ax.bar(xs, ys, width=width, label=method)
    ax.set_xticks(range(len(sizes)))
    ax.set_xticklabels(sizes)
    ax.set_ylabel("mean makespan")
    ax.legend(fontsize=8)
    ax.grid(axis="y", linestyle=":", alpha=0.5)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
