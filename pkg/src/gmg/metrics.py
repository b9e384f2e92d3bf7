"""Forecast quality metrics: pixel errors, structural similarity, event skill."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def _as_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def pixel_metrics(pred, target) -> dict:
    """Per-pixel mean errors: mse, mae, rmse, psnr (MAX = 1.0).

    psnr is math.inf when the fields agree exactly.
    """
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    if not (np.isfinite(p).all() and np.isfinite(t).all()):
        raise ContractError("pixel metrics require finite inputs")
    diff = p - t
    mse = float(np.mean(diff * diff))
    mae = float(np.mean(np.abs(diff)))
    rmse = math.sqrt(mse)
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return {"mse": mse, "mae": mae, "rmse": rmse, "psnr": psnr}


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-d Gaussian window."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode correlation of img with the window."""
    k = window.shape[0]
    h, w = img.shape
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += window[i, j] * img[i:i + h - k + 1, j:j + w - k + 1]
    return out


def ssim(pred, target, *, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Structural similarity of two single-channel frames (mean over windows)."""
    p, t = _as_array(pred), _as_array(target)
    p, t = np.squeeze(p), np.squeeze(t)
    if p.ndim != 2 or t.ndim != 2:
        raise ContractError("ssim expects single-channel 2-d frames")
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch: {p.shape} vs {t.shape}")
    if min(p.shape) < window:
        raise ContractError(f"frame {p.shape} smaller than window {window}")
    w = gaussian_window(window, sigma)
    mu_p = _windowed_mean(p, w)
    mu_t = _windowed_mean(t, w)
    var_p = _windowed_mean(p * p, w) - mu_p * mu_p
    var_t = _windowed_mean(t * t, w) - mu_t * mu_t
    cov = _windowed_mean(p * t, w) - mu_p * mu_t
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))


def csi_counts(pred, target, threshold: float) -> tuple[int, int, int]:
    """(TP, FP, FN) after binarizing both fields at ``threshold`` (>=)."""
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch: {p.shape} vs {t.shape}")
    pb = p >= threshold
    tb = t >= threshold
    tp = int(np.count_nonzero(pb & tb))
    fp = int(np.count_nonzero(pb & ~tb))
    fn = int(np.count_nonzero(~pb & tb))
    return tp, fp, fn


def csi(pred, target, threshold: float) -> float:
    """Critical success index TP/(TP+FP+FN); 1.0 when no event appears at all."""
    tp, fp, fn = csi_counts(pred, target, threshold)
    denom = tp + fp + fn
    return 1.0 if denom == 0 else tp / denom


def csi_key(threshold: float) -> str:
    g = f"{threshold:g}"
    return f"csi_{g}"


@dataclass
class MetricReport:
    """Per-frame and overall metric values with stable JSON keys."""

    frames: list[dict] = field(default_factory=list)
    overall: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"frames": self.frames, "overall": self.overall}

    def to_json(self) -> str:
        # math.inf (exact-match psnr) serializes as the JSON extension Infinity
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(frames=d["frames"], overall=d["overall"])


def sequence_report(pred, target, thresholds=(), threshold_scale: float = 1.0) -> MetricReport:
    """Aggregate metrics over B x T x C x H x W forecasts.

    Per-frame values average over the batch; overall values pool every pixel
    (CSI pools the TP/FP/FN counts). ``thresholds`` are in data units and are
    divided by ``threshold_scale`` to land in normalized pixel units. The
    SSIM window shrinks below its standard 11 pixels when frames are smaller.
    """
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    if p.ndim != 5:
        raise ContractError(f"expected B x T x C x H x W, got {p.shape}")
    if threshold_scale <= 0:
        raise ContractError("threshold scale must be positive")
    win = min(11, p.shape[-2], p.shape[-1])
    win -= 1 - win % 2
    b, n_frames = p.shape[0], p.shape[1]
    frames = []
    totals: dict[str, list[int]] = {csi_key(th): [0, 0, 0] for th in thresholds}
    for ti in range(n_frames):
        row = pixel_metrics(p[:, ti], t[:, ti])
        row["ssim"] = float(np.mean([
            ssim(p[bi, ti, ci], t[bi, ti, ci], window=win)
            for bi in range(b) for ci in range(p.shape[2])]))
        for th in thresholds:
            tp, fp, fn = csi_counts(p[:, ti], t[:, ti], th / threshold_scale)
            key = csi_key(th)
            totals[key][0] += tp
            totals[key][1] += fp
            totals[key][2] += fn
            denom = tp + fp + fn
            row[key] = 1.0 if denom == 0 else tp / denom
        frames.append(row)
    overall = pixel_metrics(p, t)
    overall["ssim"] = float(np.mean([f["ssim"] for f in frames]))
    for key, (tp, fp, fn) in totals.items():
        denom = tp + fp + fn
        overall[key] = 1.0 if denom == 0 else tp / denom
    return MetricReport(frames=frames, overall=overall)
