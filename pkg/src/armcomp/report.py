"""Figure rendering for the CLI report paths. All figures go to PNG
files next to the delimited outputs; nothing is shown interactively."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def _save(fig, path):
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def training_history_figure(history, path):
    epochs = [r.epoch for r in history.epochs]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(epochs, [r.l_data for r in history.epochs], label="data")
    axes[0].plot(epochs, [r.l_physics for r in history.epochs], label="spatial")
    axes[0].set_yscale("log")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss term")
    axes[0].legend()
    axes[1].plot(epochs, [r.lambda_data for r in history.epochs], label="lambda data")
    axes[1].plot(epochs, [r.lambda_physics for r in history.epochs], label="lambda spatial")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("loss weight")
    axes[1].legend()
    axes[2].plot(epochs, [r.val_mae_3d for r in history.epochs])
    axes[2].axvline(history.best_epoch, color="k", ls="--", lw=0.8)
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("val 3D MAE (mm)")
    fig.tight_layout()
    _save(fig, path)


def error_scatter_figure(pred, measured, theoretical, path):
    """Predicted vs real error per axis, in error space."""
    err_pred = pred - theoretical
    err_real = measured - theoretical
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))
    for ax_i, name in enumerate("XYZ"):
        ax = axes[ax_i]
        ax.scatter(err_real[:, ax_i], err_pred[:, ax_i], s=8, alpha=0.7)
        lims = [min(err_real[:, ax_i].min(), err_pred[:, ax_i].min()),
                max(err_real[:, ax_i].max(), err_pred[:, ax_i].max())]
        ax.plot(lims, lims, "k--", lw=0.8)
        ax.set_xlabel(f"real {name} error (mm)")
        ax.set_ylabel(f"predicted {name} error (mm)")
    fig.tight_layout()
    _save(fig, path)


def error_histogram_figure(pred, measured, path):
    dist = np.linalg.norm(pred - measured, axis=1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(dist, bins=30)
    ax.set_xlabel("3D residual (mm)")
    ax.set_ylabel("count")
    fig.tight_layout()
    _save(fig, path)


def distance_matrix_figure(d_theory_norm, d_pred_norm, path):
    diff = np.abs(d_pred_norm - d_theory_norm)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))
    for ax, (mat, title) in zip(axes, [(d_theory_norm, "ideal kinematics"),
                                       (d_pred_norm, "prediction"),
                                       (diff, "absolute difference")]):
        im = ax.imshow(mat, cmap="viridis")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    _save(fig, path)


def compensation_figure(before_mm, after_mm, path):
    idx = np.arange(len(before_mm))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(idx, before_mm, "o-", ms=3, label="uncompensated")
    ax.plot(idx, after_mm, "o-", ms=3, label="compensated")
    ax.set_xlabel("target index")
    ax.set_ylabel("3D residual (mm)")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
