"""Attention-based memory: the corrected hidden state attends into the previous
memory, fused with self-attention, then a gated depthwise-separable update."""

import torch
import torch.nn as nn

from .errors import ContractError, NumericError


class DepthwiseSeparableConv(nn.Module):
    """Per-channel spatial conv followed by a 1x1 pointwise mix, both bias-free."""

    def __init__(self, channels: int, kernel: int):
        super().__init__()
        self.depthwise = nn.Conv2d(channels, channels, kernel, padding=kernel // 2,
                                   groups=channels, bias=False)
        self.pointwise = nn.Conv2d(channels, channels, 1, bias=False)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


def stable_softmax(logits, dim=-1):
    """Softmax with explicit row-max subtraction; rejects non-finite logits."""
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite attention logits")
    shifted = logits - logits.max(dim=dim, keepdim=True).values
    weights = torch.exp(shifted)
    return weights / weights.sum(dim=dim, keepdim=True)


class SelfAttentionMemory(nn.Module):
    """Memory attention + self attention, fused and written back through gates."""

    def __init__(self, channels: int, att_hidden: int, kernel: int = 5):
        super().__init__()
        self.channels = channels
        self.att_hidden = att_hidden
        # memory path: query from the hidden state, key/value from the memory
        self.q_mem = nn.Conv2d(channels, att_hidden, 1)
        self.k_mem = nn.Conv2d(channels, att_hidden, 1)
        self.v_mem = nn.Conv2d(channels, channels, 1)
        # self path: all three from the hidden state
        self.q_self = nn.Conv2d(channels, att_hidden, 1)
        self.k_self = nn.Conv2d(channels, att_hidden, 1)
        self.v_self = nn.Conv2d(channels, channels, 1)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        # gated update; shared bias per gate, convs bias-free
        self.gate_zi = DepthwiseSeparableConv(channels, kernel)
        self.gate_hi = DepthwiseSeparableConv(channels, kernel)
        self.gate_zc = DepthwiseSeparableConv(channels, kernel)
        self.gate_hc = DepthwiseSeparableConv(channels, kernel)
        self.gate_zo = DepthwiseSeparableConv(channels, kernel)
        self.gate_ho = DepthwiseSeparableConv(channels, kernel)
        self.bias_i = nn.Parameter(torch.zeros(channels))
        self.bias_c = nn.Parameter(torch.zeros(channels))
        self.bias_o = nn.Parameter(torch.zeros(channels))

    @staticmethod
    def _attend(q, k, v):
        """q, k: B x d x N; v: B x C x N -> B x C x N."""
        scores = stable_softmax(q.transpose(1, 2) @ k, dim=-1)  # B x N x N, rows = queries
        return v @ scores.transpose(1, 2)

    def attend(self, hg, m_prev):
        """Fused attention readout z with the same shape as hg."""
        if hg.shape != m_prev.shape:
            raise ContractError(
                f"hidden {tuple(hg.shape)} and memory {tuple(m_prev.shape)} differ")
        b, c, h, w = hg.shape
        z_m = self._attend(self.q_mem(hg).flatten(2), self.k_mem(m_prev).flatten(2),
                           self.v_mem(m_prev).flatten(2))
        z_h = self._attend(self.q_self(hg).flatten(2), self.k_self(hg).flatten(2),
                           self.v_self(hg).flatten(2))
        z = torch.cat([z_h, z_m], dim=1).view(b, 2 * c, h, w)
        return self.fuse(z)

    def update(self, z, hg, m_prev):
        """Gated depthwise-separable memory write; returns (h_out, m_new)."""
        if not (z.shape == hg.shape == m_prev.shape):
            raise ContractError("z, hidden and memory must share shapes")
        bi = self.bias_i[:, None, None]
        bc = self.bias_c[:, None, None]
        bo = self.bias_o[:, None, None]
        i = torch.sigmoid(self.gate_zi(z) + self.gate_hi(hg) + bi)
        cand = torch.tanh(self.gate_zc(z) + self.gate_hc(hg) + bc)
        m_new = (1.0 - i) * m_prev + i * cand
        o = torch.sigmoid(self.gate_zo(z) + self.gate_ho(hg) + bo)
        return o * m_new, m_new

    def forward(self, hg, m_prev):
        z = self.attend(hg, m_prev)
        return self.update(z, hg, m_prev)
