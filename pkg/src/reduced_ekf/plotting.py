"""PNG figures for the CLI. matplotlib is imported lazily with the Agg backend."""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Sequence

import numpy as np

LABELS = {"ekf": "EKF", "fej": "FE-EKF", "reduced": "Reduced EKF"}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_error_growth(t: np.ndarray, traces: Mapping[str, tuple[np.ndarray, np.ndarray]], path, title: str = "") -> None:
    """Position and heading error against time, one line per filter."""
    plt = _pyplot()
    fig, (ax_p, ax_th) = plt.subplots(1, 2, figsize=(10, 3.8))
    for method, (dp, dth) in traces.items():
        ax_p.plot(t, dp, label=LABELS.get(method, method), lw=1.2)
        ax_th.plot(t, dth, label=LABELS.get(method, method), lw=1.2)
    ax_p.set(xlabel="time [s]", ylabel="position error [m]")
    ax_th.set(xlabel="time [s]", ylabel="orientation error [rad]")
    ax_p.legend(frameon=False)
    for ax in (ax_p, ax_th):
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_results(rows: Sequence, path) -> None:
    """Mean errors against measurement noise, one panel pair per (trajectory, density, frequency)."""
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        groups[(r.trajectory, r.density, r.freq_hz)][r.method].append((r.qz, r.mean_dp_m, r.mean_dth_rad))
    if not groups:
        return
    plt = _pyplot()
    keys = list(groups)
    fig, axes = plt.subplots(len(keys), 2, figsize=(9, 2.6 * len(keys)), squeeze=False)
    for (ax_p, ax_th), key in zip(axes, keys):
        for method, pts in groups[key].items():
            qz, dp, dth = np.array(sorted(pts)).T
            ax_p.plot(qz, dp, "o-", label=LABELS.get(method, method))
            ax_th.plot(qz, dth, "o-", label=LABELS.get(method, method))
        traj, dens, freq = key
        ax_p.set_title(f"{traj}, {dens} density, {freq:g} Hz", fontsize=9)
        ax_p.set(ylabel="mean δp [m]")
        ax_th.set(ylabel="mean δθ [rad]")
        for ax in (ax_p, ax_th):
            ax.set_xlabel("Q_z [rad²]")
            ax.grid(alpha=0.3)
    axes[0, 0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
