"""Exact parameter counts, analytic FLOPs estimates, measured throughput.

FLOPs count multiply-adds x2 for every convolution / linear map /attention
product (2*k^2*Cin*Cout*H*W per conv, 2*N^2*d per attention product) plus the
bilinear interpolation arithmetic of the deformable taps; elementwise gates,
softmax normalizations and poolings are not counted.
"""

from __future__ import annotations

import time

import torch

from .config import ModelConfig
from .model import GMG

GROUPS = ("cell", "gfm", "sam", "mgm", "ghu", "head")


def parameter_groups(model: GMG) -> dict[str, int]:
    """Exact parameter counts per module group plus the total."""
    counts = dict.fromkeys(GROUPS, 0)
    total = 0
    for name, p in model.named_parameters():
        parts = name.split(".")
        group = parts[2] if parts[0] == "layers" else parts[0]
        if group in counts:
            counts[group] += p.numel()
        total += p.numel()
    counts["total"] = total
    return counts


def _conv(k: int, cin: int, cout: int, area: int) -> int:
    return 2 * k * k * cin * cout * area


def flops_estimate(config: ModelConfig) -> dict[str, int]:
    """Analytic per-time-step forward cost (batch 1) split by module group."""
    config.validate()
    c = config.hidden
    cp = config.patched_channels
    hp, wp = config.patched_hw
    area = hp * wp
    n = area
    d = config.att_hidden
    kk = config.cell_kernel
    mk = config.filter_size
    mc = 2 * mk * mk
    c4 = c // 4
    half = (hp // 2) * (wp // 2)

    out = dict.fromkeys(GROUPS, 0)
    for i in range(config.num_layers):
        cin = cp if i == 0 else c
        out["cell"] += (_conv(kk, cin, 7 * c, area) + _conv(kk, c, 4 * c, area)
                        + _conv(kk, c, 3 * c, area) + 2 * _conv(kk, c, c, area)
                        + _conv(1, 2 * c, c, area))
        if config.use_gfm == "full":
            gfm = _conv(1, cin, c, area) + 2 * c * c + _conv(1, 2 * c, c, area)
            for k in (1, 3, 5):
                gfm += _conv(k, 1, cin, area) + _conv(1, cin, c, area)
            out["gfm"] += gfm
        elif config.use_gfm == "simple":
            out["gfm"] += _conv(1, cin, c, area)
        if config.use_sam:
            sam = 4 * _conv(1, c, d, n) + 2 * _conv(1, c, c, n) + _conv(1, 2 * c, c, n)
            sam += 2 * (2 * n * n * d)   # similarity products, both paths
            sam += 2 * (2 * n * n * c)   # value aggregation, both paths
            sam += 6 * (_conv(kk, 1, c, n) + _conv(1, c, c, n))
            out["sam"] += sam
        if config.use_mgm:
            mgm = _conv(1, c, c4, half)
            mgm += 3 * _conv(3, c4 + mc, mc, half)
            mgm += 2 * c4 * 2 * mc
            mgm += _conv(mk, c4, c4, half) + 8 * mk * mk * c4 * half  # warp + bilinear
            mgm += _conv(2, c4, c, half)
            out["mgm"] += mgm
    if config.use_ghu:
        out["ghu"] = 2 * _conv(kk, c, 2 * c, area)
    out["head"] = _conv(1, c, cp, area)
    out["total"] = sum(out[g] for g in GROUPS)
    return out


def measure_fps(model: GMG, *, repeats: int = 3) -> float:
    """Measured forward throughput in sequences per second (informational)."""
    cfg = model.config
    frames = torch.rand(1, cfg.t_in, cfg.in_channels, cfg.height, cfg.width)
    with torch.no_grad():
        model(frames, cfg.t_out)  # warm-up
        start = time.perf_counter()
        for _ in range(repeats):
            model(frames, cfg.t_out)
        elapsed = time.perf_counter() - start
    return repeats / elapsed if elapsed > 0 else float("inf")


def profile(config: ModelConfig, *, with_fps: bool = True) -> dict:
    """Parameter counts, analytic FLOPs, and measured fps for a configuration."""
    model = GMG(config)
    result = {
        "params": parameter_groups(model),
        "flops": flops_estimate(config),
        "fps": measure_fps(model) if with_fps else None,
    }
    return result
