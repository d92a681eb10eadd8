"""PNG figures for a run: endpoint point clouds and metric curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import STREAM_EVAL, make_rng  # noqa: E402
from .metrics import generate  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "axes.titlesize": 10,
    "font.size": 9,
}

PLOT_STREAM = 11


def _projections(dim, limit=4):
    pairs = [(j, j + 1) for j in range(0, dim - 1, 2)]
    return pairs[:limit] or [(0, 0)]


def scatter_figure(target, t0, t1, path, title=None):
    """Ground truth / generated at t=0 / generated at t=1, per 2-D projection."""
    dim = t1.shape[1]
    pairs = _projections(dim)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(pairs), 3, figsize=(9, 3 * len(pairs)), squeeze=False)
        for row, (a, b) in enumerate(pairs):
            for col, (pts, label, color) in enumerate(
                ((target, "ground truth", "0.3"), (t0, "generated by (z,0)", "C0"), (t1, "generated by (z,1)", "C3"))
            ):
                ax = axes[row, col]
                if pts is not None and len(pts):
                    ax.scatter(pts[:, a], pts[:, b], s=2, alpha=0.4, color=color, linewidths=0)
                ax.set_title(label if dim == 2 else f"{label} [x{a}, x{b}]")
                ax.set_aspect("equal", adjustable="datalim")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def image_grid_figure(images_t0, images_t1, path, side=8):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 4.2))
        for ax, imgs, label in ((axes[0], images_t0, "generated by (z,0)"), (axes[1], images_t1, "generated by (z,1)")):
            n = side * side
            tiles = np.zeros((n, 28, 28))
            tiles[: min(n, len(imgs))] = imgs[:n].reshape(-1, 28, 28)
            mosaic = tiles.reshape(side, side, 28, 28).transpose(0, 2, 1, 3).reshape(side * 28, side * 28)
            ax.imshow(mosaic, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(label)
            ax.axis("off")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def metrics_figure(history, path):
    steps = [r.step for r in history]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        axes[0].plot(steps, [r.mean_err for r in history], label="mean_err")
        axes[0].plot(steps, [r.cov_err for r in history], label="cov_err")
        axes[0].plot(steps, [r.w2 for r in history], label="W2")
        axes[0].set_yscale("log")
        axes[0].legend()
        axes[0].set_title("fit at t=1")
        axes[1].plot(steps, [r.hjb_residual for r in history], color="C4")
        axes[1].set_yscale("log")
        axes[1].set_title("HJB residual")
        for key, label in (("total", "total"), ("interior", "interior"), ("terminal", "terminal"), ("initial", "initial")):
            axes[2].plot(steps, [getattr(r, key) for r in history], label=label)
        axes[2].legend()
        axes[2].set_title("loss terms")
        for ax in axes:
            ax.set_xlabel("outer step")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def render_run(out_dir, cfg, gen_params, history, samples=2000):
    """Write the figures for a run and return their paths."""
    out = Path(out_dir)
    gen_spec, _ = cfg.specs()
    rng = make_rng(cfg.seed, STREAM_EVAL, PLOT_STREAM)
    t0 = generate(gen_spec, gen_params, 0.0, samples, rng)
    t1 = generate(gen_spec, gen_params, 1.0, samples, rng)
    paths = []
    if cfg.experiment == "mnist":
        paths.append(image_grid_figure(t0, t1, out / "samples.png"))
    else:
        target = cfg.data_source().sample(samples, rng)
        paths.append(scatter_figure(target, t0, t1, out / "samples.png", title=cfg.experiment))
    if history:
        paths.append(metrics_figure(history, out / "metrics.png"))
    return paths
