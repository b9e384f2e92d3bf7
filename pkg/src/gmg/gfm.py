"""Global focus: pooled global features gated into the hidden state, then
multi-scale multiplicative feature focus."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, NumericError


def adaptive_avg_pool(x, out_hw):
    """Average over the standard adaptive partition of the spatial grid.

    Region (i, j) of the output covers rows floor(i*H/h)..ceil((i+1)*H/h)
    (same for columns); every output element is the mean of its region.
    """
    h, w = out_hw
    if h < 1 or w < 1:
        raise ContractError(f"pool output size must be >= 1, got {out_hw}")
    if h > x.shape[-2] or w > x.shape[-1]:
        raise ContractError(
            f"pool output {out_hw} larger than input {tuple(x.shape[-2:])}")
    return F.adaptive_avg_pool2d(x, (h, w))


class _FocusBranch(nn.Module):
    """One multi-scale branch: depthwise k x k followed by a pointwise lift."""

    def __init__(self, in_channels, out_channels, kernel):
        super().__init__()
        self.depthwise = nn.Conv2d(in_channels, in_channels, kernel,
                                   padding=kernel // 2, groups=in_channels, bias=False)
        self.pointwise = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class GlobalFocus(nn.Module):
    """Full global-focus block: global feature extraction, gated fusion, focus."""

    def __init__(self, in_channels: int, hidden: int, scales=(1, 3, 5)):
        super().__init__()
        self.in_channels = in_channels
        self.hidden = hidden
        self.pre = nn.Conv2d(in_channels, hidden, 1)
        self.proj = nn.Linear(hidden, hidden)
        self.gate = nn.Conv2d(2 * hidden, hidden, 1)
        self.branches = nn.ModuleList(
            _FocusBranch(in_channels, hidden, k) for k in scales)

    def global_feature(self, x):
        """x: B x Cin x H x W -> spatially constant B x hidden x H x W."""
        pooled = adaptive_avg_pool(F.relu(self.pre(x)), (1, 1))  # B x hidden x 1 x 1
        g = F.relu(self.proj(pooled.flatten(1)))                 # B x hidden
        if not torch.isfinite(g).all():
            raise NumericError("non-finite global feature")
        return g[:, :, None, None].expand(-1, -1, x.shape[-2], x.shape[-1])

    def gated_fuse(self, h, xg):
        """Convex blend h*G + xg*(1-G), G = sigmoid(conv([h; xg]))."""
        if h.shape != xg.shape:
            raise ContractError(
                f"hidden {tuple(h.shape)} and global feature {tuple(xg.shape)} differ")
        g = torch.sigmoid(self.gate(torch.cat([h, xg], dim=1)))
        return h * g + xg * (1.0 - g)

    def focus_logits(self, x):
        """Summed multi-scale branch maps pooled to one logit per channel."""
        total = self.branches[0](x)
        for branch in self.branches[1:]:
            total = total + branch(x)
        return total.mean(dim=(-2, -1))  # B x hidden

    def feature_focus(self, hg, x):
        g = torch.sigmoid(self.focus_logits(x))
        return hg * g[:, :, None, None]

    def forward(self, x, h):
        xg = self.global_feature(x)
        hg = self.gated_fuse(h, xg)
        return self.feature_focus(hg, x)


class SimpleGlobalFocus(nn.Module):
    """Lightweight variant: scale the hidden state by a 1x1 map of the input."""

    def __init__(self, in_channels: int, hidden: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, hidden, 1)

    def forward(self, x, hg):
        if x.shape[-2:] != hg.shape[-2:] or x.shape[0] != hg.shape[0]:
            raise ContractError(
                f"input {tuple(x.shape)} and hidden {tuple(hg.shape)} grids differ")
        return hg * self.conv(x)
