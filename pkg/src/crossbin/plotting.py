"""Optional PNG figures for the CLI report path (requires matplotlib)."""

from __future__ import annotations

import numpy as np

from .engine import DELTAS


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("figures need matplotlib: pip install 'artifact[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_histogram(hist, bin_separation: float, path: str) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    ax.step(hist.centers * 1e9, hist.counts, where="mid", lw=0.8, color="k")
    for d in DELTAS:
        ax.axvline(d * bin_separation * 1e9, color="0.8", lw=0.5, zorder=0)
    ax.set_xlabel("delay t_B - t_A (ns)")
    ax.set_ylabel("coincidences / bin")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_scans(scans, path: str) -> None:
    """One panel per phase_b: summed-port fringe (ports equal minus unequal) per peak."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(scans), figsize=(4.0 * len(scans), 3.2), squeeze=False)
    for ax, s in zip(axes[0], scans):
        for d in (-2, -1, 0, 1, 2):
            c = s.counts[:, d + 3].astype(float)
            n = c.sum(axis=(1, 2))
            if not n.any():
                continue
            e = np.divide(c[:, 0, 0] + c[:, 1, 1] - c[:, 0, 1] - c[:, 1, 0], n,
                          out=np.zeros_like(n), where=n > 0)
            ax.plot(s.phases, e, "o-", ms=3, lw=0.8, label=f"T{d:+d}")
        ax.set_title(f"phase_b = {s.phase_b:.3f} rad")
        ax.set_xlabel("phase_a (rad)")
        ax.set_ylim(-1.05, 1.05)
    axes[0][0].set_ylabel("raw correlator")
    axes[0][-1].legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
