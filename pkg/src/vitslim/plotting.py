"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "savefig.dpi": 120,
    # fixed metadata keeps repeated renders byte-identical
    "svg.hashsalt": "vitslim",
}


def _save(fig, path) -> None:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def lifemap_figure(grid: np.ndarray, masks: list, stage_layers: list, path, t_base: int, T: int) -> None:
    """Life grid with the value in each cell, followed by one panel per slimming stage."""
    with plt.rc_context(_STYLE):
        panels = 1 + len(masks)
        fig, axes = plt.subplots(1, panels, figsize=(2.2 * panels, 2.4), squeeze=False)
        ax = axes[0, 0]
        ax.imshow(grid, cmap="viridis", vmin=t_base, vmax=max(T, t_base + 1e-9))
        for (r, c), v in np.ndenumerate(grid):
            ax.text(c, r, f"{v:.1f}", ha="center", va="center", fontsize=7, color="w")
        ax.set_title("life")
        for ax, mask, layer in zip(axes[0, 1:], masks, stage_layers):
            ax.imshow(mask, cmap="gray", vmin=0, vmax=1)
            ax.set_title(f"kept in layer {layer}")
        for ax in axes[0]:
            ax.set_xticks([])
            ax.set_yticks([])
        fig.tight_layout()
        _save(fig, path)


def throughput_figure(rows: list, path) -> None:
    """Images/second and GFLOPs against keep rate."""
    with plt.rc_context(_STYLE):
        rho = [r["rho"] for r in rows]
        fig, ax = plt.subplots(figsize=(3.4, 2.4))
        ax.plot(rho, [r["images_per_second"] for r in rows], "o-", color="C0")
        ax.set_xlabel("keep rate")
        ax.set_ylabel("images / s", color="C0")
        ax.invert_xaxis()
        twin = ax.twinx()
        twin.plot(rho, [r["gflops"] for r in rows], "s--", color="C1")
        twin.set_ylabel("GFLOPs", color="C1")
        fig.tight_layout()
        _save(fig, path)


def flops_figure(report, path) -> None:
    """Stacked per-layer cost of one configuration."""
    with plt.rc_context(_STYLE):
        layers = [r.layer for r in report.per_layer]
        attn = np.array([r.attention_flops for r in report.per_layer]) / 1e6
        mlp = np.array([r.mlp_flops for r in report.per_layer]) / 1e6
        slim = np.array([r.slim_flops for r in report.per_layer]) / 1e6
        fig, ax = plt.subplots(figsize=(3.6, 2.4))
        ax.bar(layers, attn, label="attention")
        ax.bar(layers, mlp, bottom=attn, label="mlp")
        ax.bar(layers, slim, bottom=attn + mlp, label="life")
        ax.set_xlabel("layer")
        ax.set_ylabel("MFLOPs")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)
