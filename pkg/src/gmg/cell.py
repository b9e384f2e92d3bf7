"""Dual-memory convolutional LSTM cell (temporal C plus spatiotemporal M)."""

import torch
import torch.nn as nn

from .errors import ContractError, NumericError


class STConvLSTMCell(nn.Module):
    """Recurrent cell with a per-layer cell state C and a shared memory M.

    Gate layout of the fused convolutions:
      conv_x -> f, i, c, f', i', c', o   (carries all gate biases)
      conv_h -> f, i, c, o               (from H_{t-1})
      conv_m -> f', i', c'               (from M_{t-1})
    The output gate additionally sees C_t and M_t through conv_co / conv_mo,
    and H_t = o * tanh(conv_fuse([C_t, M_t])) with a 1x1 fusion kernel.
    """

    def __init__(self, in_channels: int, hidden: int, kernel: int = 5,
                 forget_bias: float = 1.0):
        super().__init__()
        if kernel % 2 == 0:
            raise ContractError("gate kernel must be odd for same-padding")
        pad = kernel // 2
        self.in_channels = in_channels
        self.hidden = hidden
        self.conv_x = nn.Conv2d(in_channels, 7 * hidden, kernel, padding=pad)
        self.conv_h = nn.Conv2d(hidden, 4 * hidden, kernel, padding=pad, bias=False)
        self.conv_m = nn.Conv2d(hidden, 3 * hidden, kernel, padding=pad, bias=False)
        self.conv_co = nn.Conv2d(hidden, hidden, kernel, padding=pad, bias=False)
        self.conv_mo = nn.Conv2d(hidden, hidden, kernel, padding=pad, bias=False)
        self.conv_fuse = nn.Conv2d(2 * hidden, hidden, 1)
        with torch.no_grad():
            self.conv_x.bias.zero_()
            # forget-gate biases start positive to retain memory early in training
            self.conv_x.bias[0:hidden].fill_(forget_bias)
            self.conv_x.bias[3 * hidden:4 * hidden].fill_(forget_bias)

    def forward(self, x, h, c, m):
        """One recurrence step.

        x: B x Cin x H x W, h/c/m: B x hidden x H x W. Returns (h_new, c_new, m_new).
        """
        if x.shape[1] != self.in_channels:
            raise ContractError(
                f"cell expects {self.in_channels} input channels, got {x.shape[1]}")
        if not (h.shape == c.shape == m.shape):
            raise ContractError(
                f"state shapes differ: h {tuple(h.shape)} c {tuple(c.shape)} m {tuple(m.shape)}")
        if h.shape[1] != self.hidden or h.shape[-2:] != x.shape[-2:] or h.shape[0] != x.shape[0]:
            raise ContractError(
                f"state {tuple(h.shape)} incompatible with input {tuple(x.shape)} "
                f"and hidden width {self.hidden}")

        xf, xi, xc, xfp, xip, xcp, xo = torch.split(self.conv_x(x), self.hidden, dim=1)
        hf, hi, hc, ho = torch.split(self.conv_h(h), self.hidden, dim=1)
        mf, mi, mc = torch.split(self.conv_m(m), self.hidden, dim=1)

        f = torch.sigmoid(xf + hf)
        i = torch.sigmoid(xi + hi)
        c_hat = torch.tanh(xc + hc)
        c_new = f * c + i * c_hat

        f_p = torch.sigmoid(xfp + mf)
        i_p = torch.sigmoid(xip + mi)
        c_hat_p = torch.tanh(xcp + mc)
        m_new = f_p * m + i_p * c_hat_p

        o = torch.sigmoid(xo + ho + self.conv_co(c_new) + self.conv_mo(m_new))
        h_new = o * torch.tanh(self.conv_fuse(torch.cat([c_new, m_new], dim=1)))
        if not torch.isfinite(h_new).all():
            raise NumericError("non-finite hidden state out of the recurrent cell")
        return h_new, c_new, m_new
