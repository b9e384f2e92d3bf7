"""Motion guidance: GRU over transient variation, balance/decay factor
estimation, exponential time delay, trend accumulation, deformable warping."""

import torch
import torch.nn as nn

from .errors import ConfigError, ContractError, NumericError
from .gfm import adaptive_avg_pool


def bilinear_sample(x, py, px):
    """Sample x at fractional positions with zero padding outside the grid.

    x: B x C x H x W; py/px: B x Ho x Wo row/column coordinates in pixels.
    Differentiable in both x and the coordinates.
    """
    b, c, h, w = x.shape
    y0 = torch.floor(py)
    x0 = torch.floor(px)
    wy1 = py - y0
    wx1 = px - x0
    flat = x.reshape(b, c, h * w)
    out = None
    for yy, wy in ((y0, 1.0 - wy1), (y0 + 1.0, wy1)):
        for xx, wx in ((x0, 1.0 - wx1), (x0 + 1.0, wx1)):
            inside = ((yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)).to(x.dtype)
            yi = yy.clamp(0, h - 1).long()
            xi = xx.clamp(0, w - 1).long()
            idx = (yi * w + xi).reshape(b, 1, -1).expand(-1, c, -1)
            vals = flat.gather(2, idx).reshape(b, c, *py.shape[1:])
            term = vals * (inside * wy * wx).unsqueeze(1)
            out = term if out is None else out + term
    return out


def deformable_conv2d(x, offsets, weight, bias=None):
    """Convolution whose taps sample at learned fractional displacements.

    x: B x Cin x H x W. offsets: B x 2*k*k x H x W; for tap index t in row-major
    kernel order, channel 2t is the row offset and 2t+1 the column offset, in
    pixels of x's grid. weight: Cout x Cin x k x k. Out-of-bounds samples read
    as zero, so zero offsets reproduce a same-padded standard convolution.
    """
    b, _, h, w = x.shape
    cout, cin, k, k2 = weight.shape
    if k != k2:
        raise ContractError("deformable kernel must be square")
    if x.shape[1] != cin:
        raise ContractError(f"input has {x.shape[1]} channels, kernel expects {cin}")
    if offsets.shape[1] != 2 * k * k:
        raise ContractError(
            f"offsets provide {offsets.shape[1]} channels, need {2 * k * k}")
    if offsets.shape[0] != b or offsets.shape[-2:] != x.shape[-2:]:
        raise ContractError("offsets must match the input batch and grid")
    if not torch.isfinite(offsets).all():
        raise NumericError("non-finite deformable offsets")
    pad = k // 2
    ys = torch.arange(h, dtype=x.dtype, device=x.device).view(1, 1, h, 1)
    xs = torch.arange(w, dtype=x.dtype, device=x.device).view(1, 1, 1, w)
    taps = torch.arange(k, dtype=x.dtype, device=x.device) - pad
    # all taps sampled in one pass: positions B x k*k x H x W
    py = ys + taps.repeat_interleave(k).view(1, -1, 1, 1) + offsets[:, 0::2]
    px = xs + taps.repeat(k).view(1, -1, 1, 1) + offsets[:, 1::2]
    sampled = bilinear_sample(x, py, px)  # B x Cin x k*k x H x W
    out = torch.einsum("oit,bithw->bohw", weight.view(cout, cin, k * k), sampled)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


def time_delay(beta, t_index):
    """Exponential attenuation exp(-beta * t) of stale motion trends.

    beta: B x C (per-channel decay factors); t_index: 1-based recurrence step.
    Returns B x C x 1 x 1 ready to broadcast over the motion field.
    """
    if t_index < 1:
        raise ContractError(f"t_index must be >= 1, got {t_index}")
    return torch.exp(-beta * float(t_index))[:, :, None, None]


def trend_update(d_prev, f_prev, delay, alpha, alpha_d):
    """Grow/decay the momentum, blend with the transient, accumulate.

    d_prev/f_prev: B x C x Hh x Wh motion fields; delay: broadcastable decay
    weights; alpha/alpha_d: B x C balance factors. Returns (d_prime,
    d_momentum, f_new); the caller carries d_momentum as the next-step trend.
    """
    growth = (alpha * alpha_d)[:, :, None, None]
    d_prime = delay * d_prev + growth * d_prev
    d_momentum = 0.5 * d_prime + 0.5 * f_prev
    f_new = d_momentum + f_prev
    return d_prime, d_momentum, f_new


class MotionGuided(nn.Module):
    """Half-resolution motion block around the corrected hidden state.

    The hidden state is squeezed by a stride-2 encoder to C/4 channels, drives
    a conv-GRU over the transient field F (2*k^2 offset channels), the fused
    balance/decay factors modulate the momentum D, and the accumulated F warps
    the encoded features through a deformable convolution before a stride-2
    transposed decoder restores C x H x W.
    """

    def __init__(self, channels: int, filter_size: int = 3, gru_kernel: int = 3):
        super().__init__()
        if channels % 4:
            raise ConfigError(f"hidden width {channels} not divisible by 4")
        if filter_size % 2 == 0 or gru_kernel % 2 == 0:
            raise ConfigError("motion kernels must be odd")
        self.channels = channels
        self.enc_channels = channels // 4
        self.filter_size = filter_size
        self.motion_channels = 2 * filter_size * filter_size
        self.encoder = nn.Conv2d(channels, self.enc_channels, 1, stride=2)
        gin = self.enc_channels + self.motion_channels
        pad = gru_kernel // 2
        self.gru_update = nn.Conv2d(gin, self.motion_channels, gru_kernel, padding=pad)
        self.gru_reset = nn.Conv2d(gin, self.motion_channels, gru_kernel, padding=pad)
        self.gru_cand = nn.Conv2d(gin, self.motion_channels, gru_kernel, padding=pad)
        self.factor_proj = nn.Linear(self.enc_channels, 2 * self.motion_channels)
        self.alpha_prior = nn.Parameter(torch.full((self.motion_channels,), 0.5))
        self.beta_prior = nn.Parameter(torch.full((self.motion_channels,), 0.5))
        self.deform_weight = nn.Parameter(torch.empty(
            self.enc_channels, self.enc_channels, filter_size, filter_size))
        self.deform_bias = nn.Parameter(torch.zeros(self.enc_channels))
        nn.init.kaiming_uniform_(self.deform_weight, a=5 ** 0.5)
        self.decoder = nn.ConvTranspose2d(self.enc_channels, channels, 2, stride=2)

    def encode(self, hg):
        """B x C x H x W -> B x C/4 x H/2 x W/2 (H, W even)."""
        if hg.shape[1] != self.channels:
            raise ContractError(
                f"expected {self.channels} channels, got {hg.shape[1]}")
        if hg.shape[-2] % 2 or hg.shape[-1] % 2:
            raise ConfigError(f"grid {tuple(hg.shape[-2:])} must have even dims")
        return self.encoder(hg)

    def motion_gru(self, h_enc, f_prev):
        """GRU step over the transient field; returns the refreshed field."""
        if f_prev.shape[1] != self.motion_channels or f_prev.shape[-2:] != h_enc.shape[-2:]:
            raise ContractError(
                f"transient field {tuple(f_prev.shape)} incompatible with "
                f"encoded features {tuple(h_enc.shape)}")
        hf = torch.cat([h_enc, f_prev], dim=1)
        u = torch.sigmoid(self.gru_update(hf))
        r = torch.sigmoid(self.gru_reset(hf))
        z = torch.tanh(self.gru_cand(torch.cat([h_enc, f_prev * r], dim=1)))
        return f_prev * (1.0 - u) + z * u

    def deform_factors(self, h_enc):
        """Dynamic + prior balance/decay factors, each B x motion_channels."""
        pooled = adaptive_avg_pool(h_enc, (1, 1)).flatten(1)
        dyn = torch.sigmoid(self.factor_proj(pooled))
        alpha_d, beta_d = torch.split(dyn, self.motion_channels, dim=1)
        alpha = 0.5 * (alpha_d + self.alpha_prior)
        beta = 0.5 * (beta_d + self.beta_prior)
        return alpha, beta, alpha_d, beta_d

    def warp(self, h_enc, f):
        return deformable_conv2d(h_enc, f, self.deform_weight, self.deform_bias)

    def decode(self, x_warp):
        """B x C/4 x H/2 x W/2 -> B x C x H x W via stride-2 transposed conv."""
        return self.decoder(x_warp)

    def forward(self, hg, f_prev, d_prev, t_index):
        """Full chain; returns (x_out, f_new, d_momentum)."""
        h_enc = self.encode(hg)
        f_r = self.motion_gru(h_enc, f_prev)
        alpha, beta, alpha_d, _ = self.deform_factors(h_enc)
        delay = time_delay(beta, t_index)
        _, d_momentum, f_new = trend_update(d_prev, f_r, delay, alpha, alpha_d)
        x_out = self.decode(self.warp(h_enc, f_new))
        return x_out, f_new, d_momentum
