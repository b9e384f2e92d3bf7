"""Stacked predictor: patching, per-layer composite cells, memory routing,
autoregressive rollout."""

import torch
import torch.nn as nn

from .cell import STConvLSTMCell
from .config import ModelConfig
from .errors import ConfigError, ContractError, NumericError
from .gfm import GlobalFocus, SimpleGlobalFocus
from .mgm import MotionGuided
from .sam import SelfAttentionMemory


def patchify(x, p: int):
    """Space-to-depth on B x T x C x H x W; channel index becomes c*p*p + pi*p + pj."""
    if x.ndim != 5:
        raise ContractError(f"expected B x T x C x H x W, got {tuple(x.shape)}")
    b, t, c, h, w = x.shape
    if h % p or w % p:
        raise ConfigError(f"frame {h}x{w} not divisible by patch {p}")
    if p == 1:
        return x
    x = x.reshape(b, t, c, h // p, p, w // p, p)
    x = x.permute(0, 1, 2, 4, 6, 3, 5)
    return x.reshape(b, t, c * p * p, h // p, w // p)


def unpatchify(x, p: int):
    """Inverse of :func:`patchify`; bit-exact round trip."""
    if x.ndim != 5:
        raise ContractError(f"expected B x T x Cp x Hp x Wp, got {tuple(x.shape)}")
    b, t, cp, hp, wp = x.shape
    if cp % (p * p):
        raise ConfigError(f"{cp} channels not divisible by patch area {p * p}")
    if p == 1:
        return x
    c = cp // (p * p)
    x = x.reshape(b, t, c, p, p, hp, wp)
    x = x.permute(0, 1, 2, 5, 3, 6, 4)
    return x.reshape(b, t, c, hp * p, wp * p)


class GradientHighway(nn.Module):
    """Fast-path unit blending the layer-1 output with its previous state."""

    def __init__(self, channels: int, kernel: int = 5):
        super().__init__()
        pad = kernel // 2
        self.conv_x = nn.Conv2d(channels, 2 * channels, kernel, padding=pad)
        self.conv_z = nn.Conv2d(channels, 2 * channels, kernel, padding=pad, bias=False)

    def forward(self, x, z_prev):
        p, s = torch.chunk(self.conv_x(x) + self.conv_z(z_prev), 2, dim=1)
        p = torch.tanh(p)
        s = torch.sigmoid(s)
        return s * p + (1.0 - s) * z_prev


class GMGCell(nn.Module):
    """One layer of the stack: recurrent cell plus the optional blocks.

    Step order: ST-ConvLSTM -> global focus (full or simple) -> attention
    memory -> motion guidance. The attention-corrected hidden state is both
    the persisted per-layer hidden and the motion block's input; the memory
    it emits supersedes the cell's M on the cross-layer path.
    """

    def __init__(self, in_channels: int, hidden: int, *, cell_kernel: int,
                 att_hidden: int, filter_size: int, use_gfm: str,
                 use_sam: bool, use_mgm: bool):
        super().__init__()
        self.cell = STConvLSTMCell(in_channels, hidden, kernel=cell_kernel)
        self.use_gfm = use_gfm
        if use_gfm == "full":
            self.gfm = GlobalFocus(in_channels, hidden)
        elif use_gfm == "simple":
            self.gfm = SimpleGlobalFocus(in_channels, hidden)
        else:
            self.gfm = None
        self.sam = SelfAttentionMemory(hidden, att_hidden, kernel=cell_kernel) if use_sam else None
        self.mgm = MotionGuided(hidden, filter_size=filter_size) if use_mgm else None

    def forward(self, x, h, c, m, f, d, t_index):
        """Returns (x_out, h_new, c_new, m_out, f_new, d_new)."""
        h_new, c_new, m_new = self.cell(x, h, c, m)
        hg = self.gfm(x, h_new) if self.gfm is not None else h_new
        if self.sam is not None:
            hg, m_out = self.sam(hg, m_new)
        else:
            m_out = m_new
        if self.mgm is not None:
            x_out, f_new, d_new = self.mgm(hg, f, d, t_index)
        else:
            x_out, f_new, d_new = hg, f, d
        return x_out, hg, c_new, m_out, f_new, d_new


class GMG(nn.Module):
    """Full predictor over patched frames with cross-layer memory routing.

    The shared memory flows layer 1 -> L within a time step and from layer L
    back to layer 1 at the next step. All recurrent states start at zero.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        hidden = config.hidden
        cp = config.patched_channels
        self.layers = nn.ModuleList()
        for i in range(config.num_layers):
            self.layers.append(GMGCell(
                cp if i == 0 else hidden, hidden,
                cell_kernel=config.cell_kernel, att_hidden=config.att_hidden,
                filter_size=config.filter_size, use_gfm=config.use_gfm,
                use_sam=config.use_sam, use_mgm=config.use_mgm))
        self.ghu = GradientHighway(hidden, config.cell_kernel) if config.use_ghu else None
        self.head = nn.Conv2d(hidden, cp, 1)

    def _init_states(self, b, hp, wp, dtype, device):
        hidden = self.config.hidden
        mk = 2 * self.config.filter_size ** 2
        zeros = lambda c, hh, ww: torch.zeros(b, c, hh, ww, dtype=dtype, device=device)
        h = [zeros(hidden, hp, wp) for _ in self.layers]
        c = [zeros(hidden, hp, wp) for _ in self.layers]
        f = [zeros(mk, hp // 2, wp // 2) for _ in self.layers]
        d = [zeros(mk, hp // 2, wp // 2) for _ in self.layers]
        m = zeros(hidden, hp, wp)
        z = zeros(hidden, hp, wp) if self.ghu is not None else None
        return h, c, f, d, m, z

    def forward(self, frames, horizon: int, *, targets=None, tf_prob: float = 0.0,
                generator=None, clamp: bool = True):
        """Roll the model over the input frames and forecast ``horizon`` more.

        frames: B x T_in x C x H x W in [0,1]. During the forecast phase the
        model consumes its own previous prediction; when ``targets`` (the
        B x horizon x C x H x W ground truth) is given, each forecast input is
        replaced by the true frame with probability ``tf_prob``.
        Returns B x horizon x C x H x W, clamped to [0,1] unless disabled.
        """
        if horizon < 1:
            raise ContractError(f"horizon must be >= 1, got {horizon}")
        if frames.ndim != 5:
            raise ContractError(f"expected B x T x C x H x W, got {tuple(frames.shape)}")
        cfg = self.config
        if frames.shape[2] != cfg.in_channels or frames.shape[-2:] != (cfg.height, cfg.width):
            raise ConfigError(
                f"frames {tuple(frames.shape)} do not match configured "
                f"{cfg.in_channels}x{cfg.height}x{cfg.width}")
        p = cfg.patch_size
        xp = patchify(frames, p)
        tp = patchify(targets, p) if targets is not None else None
        b, t_in = xp.shape[0], xp.shape[1]
        hp, wp = xp.shape[-2:]
        h, c, f, d, m, z = self._init_states(b, hp, wp, xp.dtype, xp.device)

        preds = []
        x_gen = None
        for t in range(t_in + horizon - 1):
            if t < t_in:
                x = xp[:, t]
            else:
                x = x_gen
                if tp is not None and tf_prob > 0.0:
                    u = torch.rand((), generator=generator, device=xp.device)
                    if u.item() < tf_prob:
                        x = tp[:, t - t_in]
            for i, layer in enumerate(self.layers):
                x, h[i], c[i], m, f[i], d[i] = layer(x, h[i], c[i], m, f[i], d[i], t + 1)
                if self.ghu is not None and i == 0:
                    z = self.ghu(x, z)
                    x = z
            x_gen = self.head(x)
            if not torch.isfinite(x_gen).all():
                raise NumericError(f"non-finite prediction at recurrence step {t + 1}")
            if t >= t_in - 1:
                preds.append(x_gen)

        out = unpatchify(torch.stack(preds, dim=1), p)
        return out.clamp(0.0, 1.0) if clamp else out
