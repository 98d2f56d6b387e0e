"""Figures and tidy CSV exports for simulation logs."""

from __future__ import annotations

import csv
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .vehicle import TrajectoryLog  # noqa: E402


def tidy_rows(logs: dict) -> str:
    """Long-format CSV over ``{(controller, seed): log}``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["controller", "seed", "t", "vehicle_id", "velocity_mps", "spacing_m", "accel_mps2", "is_cav"])
    for (name, seed), lg in logs.items():
        sp = lg.spacings
        cav = lg.cfg.is_cav
        for k, t in enumerate(lg.times):
            for i in range(lg.velocities.shape[1]):
                w.writerow([name, seed, f"{t:.2f}", i, f"{lg.velocities[k, i]:.6f}",
                            "" if i == 0 else f"{sp[k, i - 1]:.6f}", f"{lg.accelerations[k, i]:.6f}",
                            int(cav[i])])
    return buf.getvalue()


def velocity_figure(logs: dict, cav_set, title: str = ""):
    """One panel per controller, velocity of every vehicle over time; CAVs drawn bold."""
    names = list(logs)
    fig, axes = plt.subplots(len(names), 1, figsize=(8, 2.6 * len(names)), sharex=True, squeeze=False)
    cmap = plt.get_cmap("viridis")
    for ax, key in zip(axes[:, 0], names):
        lg: TrajectoryLog = logs[key]
        nveh = lg.velocities.shape[1]
        ax.plot(lg.times, lg.velocities[:, 0], color="k", lw=1.2, label="head")
        for i in range(1, nveh):
            bold = i in cav_set and key[0] != "hdv"
            ax.plot(lg.times, lg.velocities[:, i], color="tab:red" if bold else cmap(i / nveh),
                    lw=1.6 if bold else 0.8, label=f"CAV {i}" if bold else None)
        ax.set_ylabel("velocity [m/s]")
        ax.set_title(f"{key[0]} (seed {key[1]})", fontsize=9)
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=7)
    axes[-1, 0].set_xlabel("time [s]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def spacing_figure(logs: dict, cav_set, cav_spacing: float, bounds: tuple[float, float]):
    """CAV spacing errors against the safety band."""
    fig, ax = plt.subplots(figsize=(8, 3))
    for key, lg in logs.items():
        if key[0] == "hdv":
            continue
        for i in cav_set:
            ax.plot(lg.times, lg.spacings[:, i - 1] - cav_spacing, lw=1, label=f"{key[0]} CAV {i}")
    for b in bounds:
        ax.axhline(b, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("spacing error [m]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def fuel_figure(report):
    ctrls = [c for c in report.controllers()]
    cols = report.phases + ["total"] if len(report.phases) > 1 else ["total"]
    x = np.arange(len(cols))
    width = 0.8 / max(len(ctrls), 1)
    fig, ax = plt.subplots(figsize=(7, 3))
    for j, c in enumerate(ctrls):
        f = report.mean_fuel(c)
        ax.bar(x + j * width, [f.get(k, np.nan) for k in cols], width, label=c)
    ax.set_xticks(x + width * (len(ctrls) - 1) / 2, cols)
    ax.set_ylabel("fuel [mL]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def figure_bytes(fig, fmt: str) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format=fmt, dpi=120)
    plt.close(fig)
    return buf.getvalue()
