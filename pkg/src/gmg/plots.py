"""Static figures: loss curves, per-frame metric curves, error-map grids."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_loss_curve(loss_log_path, out_dir) -> str:
    """Training loss over steps; deterministic filename loss_curve.png."""
    payload = json.loads(Path(loss_log_path).read_text())
    losses = payload["loss"]
    out = Path(out_dir) / "loss_curve.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(payload.get("start_step", 0) + 1,
                  payload.get("start_step", 0) + len(losses) + 1), losses)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return str(out)


def plot_frame_metrics(report_path, out_dir) -> str:
    """Per-forecast-frame metric curves from a metric report JSON."""
    report = json.loads(Path(report_path).read_text())
    frames = report["frames"]
    out = Path(out_dir) / "frame_metrics.png"
    keys = [k for k in ("mse", "mae", "ssim", "psnr") if k in frames[0]]
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.4))
    if len(keys) == 1:
        axes = [axes]
    xs = range(1, len(frames) + 1)
    for ax, key in zip(axes, keys):
        ys = [f[key] for f in frames]
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel("forecast frame")
        ax.set_title(key)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return str(out)


def save_error_map(pred_frame, target_frame, path) -> str:
    """Write |pred - target| of one frame as an 8-bit grayscale image."""
    from PIL import Image
    err = np.abs(np.asarray(pred_frame, dtype=np.float64)
                 - np.asarray(target_frame, dtype=np.float64))
    err = np.squeeze(err)
    quantized = np.round(np.clip(err, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path)
    return str(path)


def plot_error_maps(predictions_path, out_dir, max_frames: int = 8) -> str:
    """Grid of error maps from an npz file holding pred/target arrays."""
    with np.load(predictions_path) as payload:
        pred, target = payload["pred"], payload["target"]
    out = Path(out_dir) / "error_maps.png"
    n = min(max_frames, pred.shape[1])
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.6))
    if n == 1:
        axes = [axes]
    for t, ax in enumerate(axes):
        err = np.abs(pred[0, t, 0] - target[0, t, 0])
        im = ax.imshow(err, cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"+{t + 1}")
        ax.axis("off")
    fig.colorbar(im, ax=axes, fraction=0.025)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return str(out)


def emit_plots(report_paths: dict, out_dir) -> list[str]:
    """Render every figure the given artifacts support.

    ``report_paths`` maps kinds to files: ``loss`` (training loss log JSON),
    ``report`` (metric report JSON), ``predictions`` (npz with pred/target).
    Missing files raise the underlying I/O error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "loss" in report_paths:
        written.append(plot_loss_curve(report_paths["loss"], out_dir))
    if "report" in report_paths:
        written.append(plot_frame_metrics(report_paths["report"], out_dir))
    if "predictions" in report_paths:
        written.append(plot_error_maps(report_paths["predictions"], out_dir))
    return written
