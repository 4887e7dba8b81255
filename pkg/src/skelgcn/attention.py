"""Joint, frame, and channel attention applied as multiplicative residuals.

Each sub-module pools the feature map down to the attended axis, passes it
through a small convolution or bottleneck MLP, and squashes with a sigmoid,
so every attention value lies in (0, 1). The default arrangement refines
the feature map sequentially (joints, then frames, then channels), each
stage computing its map from the already-refined features; the alternative
"parallel" arrangement computes all three maps from the original input and
adds the refinements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .agc import he_uniform
from .errors import ConfigError, ShapeError
from .tensor import Tensor

ARRANGEMENTS = ("sequential", "parallel")


def default_spatial_kernel(v: int, preferred: int = 9) -> int:
    """Largest odd kernel <= min(preferred, V)."""
    k = min(preferred, v)
    return k if k % 2 == 1 else k - 1


@dataclass
class StcParams:
    gs_w: Tensor          # [1, C, Ks] joint-axis conv
    gs_b: Tensor
    gt_w: Tensor          # [1, C, Kt] frame-axis conv
    gt_b: Tensor
    w1: Tensor            # [C, C//r]
    b1: Tensor
    w2: Tensor            # [C//r, C]
    b2: Tensor
    kernel_s: int
    kernel_t: int
    reduction: int
    arrangement: str = "sequential"


def init_stc(channels: int, rng: np.random.Generator, dtype=np.float32,
             kernel_s: int = 9, kernel_t: int = 9, reduction: int = 2,
             arrangement: str = "sequential") -> StcParams:
    if kernel_s % 2 == 0 or kernel_t % 2 == 0:
        raise ConfigError(f"attention kernels must be odd, got ({kernel_s}, {kernel_t})")
    if channels // reduction < 1:
        raise ConfigError(f"channel reduction {reduction} collapses {channels} channels")
    if arrangement not in ARRANGEMENTS:
        raise ConfigError(f"unknown attention arrangement {arrangement!r}")
    hidden = channels // reduction
    return StcParams(
        gs_w=Tensor(he_uniform(rng, (1, channels, kernel_s), channels * kernel_s, dtype), requires_grad=True),
        gs_b=Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
        gt_w=Tensor(he_uniform(rng, (1, channels, kernel_t), channels * kernel_t, dtype), requires_grad=True),
        gt_b=Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
        w1=Tensor(he_uniform(rng, (channels, hidden), channels, dtype), requires_grad=True),
        b1=Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        w2=Tensor(he_uniform(rng, (hidden, channels), hidden, dtype), requires_grad=True),
        b2=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        kernel_s=kernel_s, kernel_t=kernel_t, reduction=reduction,
        arrangement=arrangement)


def spatial_attention(f_in: Tensor, p: StcParams) -> Tensor:
    """Per-joint attention [N, 1, 1, V]: mean over frames, conv over joints."""
    n, c, t, v = f_in.shape
    if p.kernel_s % 2 == 0:
        raise ConfigError(f"spatial attention kernel must be odd, got {p.kernel_s}")
    if p.kernel_s > 2 * v - 1:
        raise ConfigError(f"spatial attention kernel {p.kernel_s} too large for V={v}")
    pooled = tz.reduce_mean(f_in, (2,), keepdims=True)              # [N, C, 1, V]
    kernel = p.gs_w.reshape((1, c, 1, p.kernel_s))
    y = tz.conv(pooled, kernel, pad_v=(p.kernel_s - 1) // 2) + p.gs_b
    return tz.sigmoid(y)


def temporal_attention(f_in: Tensor, p: StcParams) -> Tensor:
    """Per-frame attention [N, 1, T, 1]: mean over joints, conv over frames."""
    n, c, t, v = f_in.shape
    if p.kernel_t % 2 == 0:
        raise ConfigError(f"temporal attention kernel must be odd, got {p.kernel_t}")
    pooled = tz.reduce_mean(f_in, (3,), keepdims=True)              # [N, C, T, 1]
    kernel = p.gt_w.reshape((1, c, p.kernel_t, 1))
    y = tz.conv(pooled, kernel, pad_t=(p.kernel_t - 1) // 2) + p.gt_b
    return tz.sigmoid(y)


def channel_attention(f_in: Tensor, p: StcParams) -> Tensor:
    """Per-channel attention [N, C, 1, 1]: global pool, bottleneck MLP."""
    n, c, t, v = f_in.shape
    if c // p.reduction < 1:
        raise ConfigError(f"channel reduction {p.reduction} collapses {c} channels")
    if p.w1.shape != (c, c // p.reduction):
        raise ShapeError(f"channel attention weights {p.w1.shape} do not match C={c}")
    pooled = tz.reduce_mean(f_in, (2, 3))                           # [N, C]
    h = tz.relu(tz.matmul(pooled, p.w1) + p.b1)
    m = tz.sigmoid(tz.matmul(h, p.w2) + p.b2)
    return m.reshape((n, c, 1, 1))


def stc_forward(f_in: Tensor, p: StcParams, capture: dict | None = None) -> Tensor:
    """Three attention refinements, each of the form f + f * M."""
    if p.arrangement == "sequential":
        m_s = spatial_attention(f_in, p)
        f = f_in + f_in * m_s
        m_t = temporal_attention(f, p)
        f = f + f * m_t
        m_c = channel_attention(f, p)
        out = f + f * m_c
    else:
        m_s = spatial_attention(f_in, p)
        m_t = temporal_attention(f_in, p)
        m_c = channel_attention(f_in, p)
        out = f_in + f_in * m_s + f_in * m_t + f_in * m_c
    if capture is not None:
        capture["spatial_map"] = m_s.data.copy()
        capture["temporal_map"] = m_t.data.copy()
        capture["channel_map"] = m_c.data.copy()
    return out
