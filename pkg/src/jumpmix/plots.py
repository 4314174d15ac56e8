"""Report figures rendered next to the delimited output.

Figures are presentation artifacts only: every number they show also lives
in a CSV or JSON file, and the byte-determinism contract applies to those,
not to the images.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_figure",
    "plot_tail_curve",
    "plot_tv_curve",
    "plot_moments",
    "plot_trajectories",
    "plot_singular_values",
    "plot_control",
    "plot_eigenvalues",
    "plot_histograms",
]

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 130,
    "savefig.bbox": "tight",
    "axes.grid": True,
    "grid.alpha": 0.3,
})


def save_figure(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_tail_curve(t, survival, stderr, fit=None):
    fig, ax = plt.subplots()
    ax.errorbar(t, survival, yerr=2 * np.asarray(stderr), fmt="o", ms=3,
                capsize=2, label="coalescence survival")
    if fit is not None:
        tt = np.linspace(np.min(t), np.max(t), 200)
        ax.plot(tt, fit.C * np.exp(-fit.c * tt), "-",
                label=f"fit rate {fit.c:.3g} (R$^2$={fit.r_squared:.3f})")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("P{T > t}")
    ax.legend()
    return fig


def plot_tv_curve(t, tv, stderr, survival=None, surv_stderr=None, fit=None):
    fig, ax = plt.subplots()
    ax.errorbar(t, tv, yerr=2 * np.asarray(stderr), fmt="s", ms=3, capsize=2,
                label="histogram TV")
    if survival is not None:
        ax.errorbar(t, survival, yerr=2 * np.asarray(surv_stderr), fmt="o", ms=3,
                    capsize=2, label="coupling bound P{T > t}")
    if fit is not None:
        tt = np.linspace(np.min(t), np.max(t), 200)
        ax.plot(tt, fit.C * np.exp(-fit.c * tt), "-",
                label=f"fit rate {fit.c:.3g}")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("distance")
    ax.legend()
    return fig


def plot_moments(report):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.errorbar(report.k, report.embedded, yerr=2 * report.embedded_stderr,
                 fmt="o-", ms=3, capsize=2)
    ax1.set_xlabel("jump index k")
    ax1.set_ylabel(r"E $\|X_{\tau_k}\|^2$")
    if report.t.size:
        ax2.errorbar(report.t, report.continuous, yerr=2 * report.continuous_stderr,
                     fmt="o-", ms=3, capsize=2)
    ax2.set_xlabel("t")
    ax2.set_ylabel(r"E $\|X_t\|^2$")
    fig.tight_layout()
    return fig


def plot_trajectories(trajectories, coord: int = 0, points_per_segment: int = 20):
    fig, ax = plt.subplots()
    for traj in trajectories:
        ts, xs = [], []
        times = np.concatenate([[0.0], traj.path.jump_times, [traj.horizon]])
        for a, b, state in zip(times[:-1], times[1:], traj.post_jump_states):
            seg_t = np.linspace(a, b, points_per_segment, endpoint=False)
            for t in seg_t:
                ts.append(t)
                xs.append(traj.at(t)[coord])
        ax.plot(ts, xs, lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel(f"x[{coord}]")
    return fig


def plot_singular_values(certs: dict):
    fig, ax = plt.subplots()
    for i, (name, cert) in enumerate(certs.items()):
        sv = np.asarray(cert.singular_values, dtype=float)
        if sv.size == 0:
            continue
        ax.semilogy(np.arange(sv.size), np.sort(sv)[::-1], "o-", ms=3,
                    label=f"{name} ({cert.verdict})")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.legend()
    return fig


def plot_control(signal):
    fig, ax = plt.subplots()
    bp = signal.breakpoints
    vals = signal.values
    if vals.size:
        for j in range(vals.shape[1]):
            ax.step(bp, np.concatenate([vals[:, j], vals[-1:, j]]), where="post",
                    label=f"channel {j}", lw=0.9)
        ax.legend(fontsize=7)
    ax.set_xlabel("t")
    ax.set_ylabel("control value")
    return fig


def plot_eigenvalues(eigs_by_name: dict):
    fig, ax = plt.subplots()
    for name, eigs in eigs_by_name.items():
        eigs = np.asarray(eigs)
        ax.plot(eigs.real, eigs.imag, "o", ms=4, label=name)
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.legend()
    return fig


def plot_histograms(histograms):
    n = len(histograms)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for j, (edges, mass) in enumerate(histograms):
        centers = 0.5 * (edges[:-1] + edges[1:])
        axes[0, j].bar(centers, mass, width=np.diff(edges), alpha=0.7)
        axes[0, j].set_xlabel(f"coordinate {j}")
    axes[0, 0].set_ylabel("probability mass")
    fig.tight_layout()
    return fig
