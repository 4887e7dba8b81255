"""Spatial graph convolution layers: fixed-topology baseline and adaptive.

The adaptive layer carries, per subset k, a learnable global adjacency B_k
(warm-started from the body graph and gradient-frozen early in training)
and a per-sample individual adjacency C_k built from embedded feature
similarity, row-normalized to a stochastic matrix. A learnable scalar gate
weights C_k against B_k. The vertex contraction reads: output at vertex i
sums adjacency-row-i-weighted features of its subset members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import ConfigError, ShapeError
from .tensor import Tensor

STRATEGIES = ("warmstart", "anchored")


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def embed_channels(c_out: int, divisor: int = 4) -> int:
    return max(1, c_out // divisor)


@dataclass
class BaselineGcnParams:
    """Fixed-graph spatial convolution, optional learnable mask per subset."""

    A: np.ndarray
    W: list[Tensor]
    mask: list[Tensor] | None
    residual_w: Tensor | None
    residual: str  # off | identity | conv
    c_in: int
    c_out: int


@dataclass
class AgclParams:
    """Learnable state of one adaptive graph convolutional layer."""

    A: np.ndarray
    B: list[Tensor]
    W: list[Tensor]
    Wtheta: list[Tensor]
    Wphi: list[Tensor]
    gate_alpha: Tensor
    gate_b: Tensor | None
    residual_w: Tensor | None
    residual: str
    b_frozen: bool
    strategy: str
    c_in: int
    c_out: int
    c_embed: int


def _check_input(f_in: Tensor, v_expected: int, c_expected: int, what: str) -> None:
    if f_in.ndim != 4:
        raise ShapeError(f"{what} expects [N, C, T, V] input, got {f_in.shape}")
    if f_in.shape[3] != v_expected:
        raise ShapeError(f"{what}: input has V={f_in.shape[3]} but adjacency has V={v_expected}")
    if f_in.shape[1] != c_expected:
        raise ShapeError(f"{what}: input has C={f_in.shape[1]} but layer expects C={c_expected}")


def _conv1x1(f_in: Tensor, w2d: Tensor) -> Tensor:
    o, c = w2d.shape
    return tz.conv(f_in, w2d.reshape((o, c, 1, 1)))


def _contract_vertices(f_in: Tensor, adj: Tensor) -> Tensor:
    """out[n, c, t, i] = sum_j adj[.., i, j] * f_in[n, c, t, j]."""
    if adj.ndim == 2:
        adj_t = adj.transpose((1, 0))
    else:
        n, v, _ = adj.shape
        adj_t = adj.transpose((0, 2, 1)).reshape((n, 1, v, v))
    return tz.matmul(f_in, adj_t)


def _residual_branch(f_in: Tensor, residual: str, residual_w: Tensor | None) -> Tensor | None:
    if residual == "off":
        return None
    if residual == "identity":
        return f_in
    return _conv1x1(f_in, residual_w)


def init_baseline(A: np.ndarray, c_in: int, c_out: int, rng: np.random.Generator,
                  dtype=np.float32, mask_enabled: bool = False,
                  with_residual: bool = True) -> BaselineGcnParams:
    k = A.shape[0]
    w = [Tensor(he_uniform(rng, (c_out, c_in), c_in * k, dtype), requires_grad=True)
         for _ in range(k)]
    mask = None
    if mask_enabled:
        mask = [Tensor(np.ones_like(A[i], dtype=dtype), requires_grad=True) for i in range(k)]
    residual, residual_w = _residual_mode(c_in, c_out, with_residual, rng, dtype)
    return BaselineGcnParams(A=A.astype(dtype), W=w, mask=mask, residual_w=residual_w,
                             residual=residual, c_in=c_in, c_out=c_out)


def _residual_mode(c_in, c_out, with_residual, rng, dtype):
    if not with_residual:
        return "off", None
    if c_in == c_out:
        return "identity", None
    return "conv", Tensor(he_uniform(rng, (c_out, c_in), c_in, dtype), requires_grad=True)


def baseline_gcn_forward(f_in: Tensor, A: np.ndarray, p: BaselineGcnParams) -> Tensor:
    _check_input(f_in, A.shape[-1], p.c_in, "baseline_gcn_forward")
    out = None
    for k in range(A.shape[0]):
        adj = tz.constant(A[k], dtype=f_in.dtype)
        if p.mask is not None:
            adj = adj * p.mask[k]
        y = _conv1x1(_contract_vertices(f_in, adj), p.W[k])
        out = y if out is None else out + y
    res = _residual_branch(f_in, p.residual, p.residual_w)
    return out if res is None else out + res


def init_agcl(A: np.ndarray, c_in: int, c_out: int, rng: np.random.Generator,
              dtype=np.float32, strategy: str = "warmstart",
              with_residual: bool = True, embed_divisor: int = 4) -> AgclParams:
    """Build layer state; the warmstart strategy copies the body graph into B
    and freezes its gradient until `unfreeze_global_graph`."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown adaptive strategy {strategy!r}")
    k = A.shape[0]
    c_e = embed_channels(c_out, embed_divisor)
    if strategy == "warmstart":
        b = [Tensor(A[i].astype(dtype), requires_grad=True) for i in range(k)]
        gate_b = None
        frozen = True
    else:
        b = [Tensor(np.zeros_like(A[i], dtype=dtype), requires_grad=True) for i in range(k)]
        gate_b = Tensor(np.zeros((), dtype=dtype), requires_grad=True)
        frozen = False
    w = [Tensor(he_uniform(rng, (c_out, c_in), c_in * k, dtype), requires_grad=True)
         for _ in range(k)]
    wtheta = [Tensor(np.zeros((c_e, c_in), dtype=dtype), requires_grad=True) for _ in range(k)]
    wphi = [Tensor(np.zeros((c_e, c_in), dtype=dtype), requires_grad=True) for _ in range(k)]
    residual, residual_w = _residual_mode(c_in, c_out, with_residual, rng, dtype)
    return AgclParams(A=A.astype(dtype), B=b, W=w, Wtheta=wtheta, Wphi=wphi,
                      gate_alpha=Tensor(np.zeros((), dtype=dtype), requires_grad=True),
                      gate_b=gate_b, residual_w=residual_w, residual=residual,
                      b_frozen=frozen, strategy=strategy,
                      c_in=c_in, c_out=c_out, c_embed=c_e)


def individual_graph(f_in: Tensor, wtheta: Tensor, wphi: Tensor) -> Tensor:
    """Row-stochastic [N, V, V] similarity of embedded vertex features."""
    n, _, t, v = f_in.shape
    c_e = wtheta.shape[0]
    theta = _conv1x1(f_in, wtheta)                                   # [N, Ce, T, V]
    phi = _conv1x1(f_in, wphi)
    theta_m = theta.transpose((0, 3, 1, 2)).reshape((n, v, c_e * t))  # [N, V, Ce*T]
    phi_m = phi.reshape((n, c_e * t, v))                              # [N, Ce*T, V]
    return tz.softmax(tz.matmul(theta_m, phi_m), axis=-1)


def agcl_forward(f_in: Tensor, p: AgclParams, capture: dict | None = None) -> Tensor:
    """Adaptive spatial convolution: per subset, contract f_in with the gated
    sum of the global and individual graphs, mix channels, sum subsets, add
    the layer residual. No gradient reaches B while the layer is frozen."""
    if p.B is None or p.W is None:
        raise ConfigError("agcl_forward on uninitialized parameters")
    _check_input(f_in, p.A.shape[-1], p.c_in, "agcl_forward")
    out = None
    for k in range(len(p.B)):
        c_k = individual_graph(f_in, p.Wtheta[k], p.Wphi[k])
        b_k = p.B[k].detach() if p.b_frozen else p.B[k]
        if p.strategy == "anchored":
            adj = tz.constant(p.A[k], dtype=f_in.dtype) + p.gate_b * b_k + p.gate_alpha * c_k
        else:
            adj = b_k + p.gate_alpha * c_k
        if capture is not None:
            capture.setdefault("individual_graphs", []).append(c_k.data.copy())
        y = _conv1x1(_contract_vertices(f_in, adj), p.W[k])
        out = y if out is None else out + y
    res = _residual_branch(f_in, p.residual, p.residual_w)
    return out if res is None else out + res


def unfreeze_global_graph(p: AgclParams) -> None:
    """Allow gradients to reach the global graph; idempotent."""
    p.b_frozen = False
