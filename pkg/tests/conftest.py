import math

import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _fixed_seed():
    torch.manual_seed(0)
    yield


def manual_conv2d(x, kernel, bias=0.0):
    """Dense same-padded convolution by explicit loops (oracle path).

    x: (Cin, H, W); kernel: (Cout, Cin, k, k). Returns (Cout, H, W).
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    cout, cin, k, _ = kernel.shape
    pad = k // 2
    h, w = x.shape[-2:]
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for c in range(cin):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - pad, j + dj - pad
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += kernel[o, c, di, dj] * x[c, ii, jj]
                out[o, i, j] = acc
    return out + bias


def fd_gradient_check(fn, params, eps=1e-5, max_per_param=None):
    """Max relative error between autograd and central differences.

    fn() recomputes the scalar loss from the current parameter values;
    params are float64 leaves. When max_per_param is set, a deterministic
    evenly-spread subset of each parameter's entries is probed.
    """
    loss = fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        gflat = g.reshape(-1)
        n = flat.numel()
        if max_per_param is not None and n > max_per_param:
            idxs = np.unique(np.linspace(0, n - 1, max_per_param).astype(int))
        else:
            idxs = range(n)
        for i in idxs:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                dn = fn().item()
                flat[i] = orig
            fd = (up - dn) / (2.0 * eps)
            an = gflat[i].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            worst = max(worst, rel)
    return worst


def sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))
