"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous numpy array plus an optional gradient
buffer. Every operation that produces a tensor from differentiable
inputs records its parents and a backward closure on the result; the
recorded graph is the tape, topologically ordered by construction.
``backward`` replays it in reverse, accumulating gradients additively
across fan-out.

float64 is the dtype of the verification suites (finite differences
need the headroom); float32 is the training default. Binary ops refuse
to mix the two so precision never changes silently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """N-dimensional float array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None, op: str = "leaf"):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        # ascontiguousarray promotes 0-d to 1-d; keep scalar shapes intact
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no gradient tracking; shares the underlying buffer."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.op = "detach"
        out._parents = ()
        out._backward_fn = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), op="const")


def _check_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype.name} and {b.dtype.name}")


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may be a read-only broadcast view or aliased buffer
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype, op="const")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    a = _as_tensor(a, b.dtype)
    _check_dtypes(a, b, "add")
    data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(data, (a, b), "add", bw)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    a = _as_tensor(a, b.dtype)
    _check_dtypes(a, b, "mul")
    data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, -g)

    return _result(-a.data, (a,), "neg", bw)


# ---------------------------------------------------------------------------
# shape plumbing

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(data, (a,), "reshape", bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def bw(g):
        _accumulate(a, g.transpose(inverse))

    return _result(data, (a,), "transpose", bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; batch dims broadcast."""
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} x {b.shape}") from exc

    def bw(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _result(data, (a, b), "matmul", bw)


def conv(x: Tensor, w: Tensor, stride_t: int = 1, pad_t: int = 0, pad_v: int = 0) -> Tensor:
    """Cross-correlation of an [N, C, T, V] map with an [O, C, kt, kv] kernel.

    Only the T axis strides; same-padding on V is the caller's job. Covers
    1x1 channel mixing, kt x 1 temporal filtering, and (via a transposed
    input) the 1-D attention convolutions.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, t, v = x.shape
    o, ci, kt, kv = w.shape
    if ci != c:
        raise ShapeError(f"conv channel mismatch: input {x.shape} vs kernel {w.shape}")
    if kt % 2 == 0 or kv % 2 == 0:
        raise ConfigError(f"conv kernel sizes must be odd, got ({kt}, {kv})")
    if stride_t < 1 or pad_t < 0 or pad_v < 0:
        raise ConfigError(f"conv stride/padding out of range: stride_t={stride_t}, pad_t={pad_t}, pad_v={pad_v}")
    t_out = (t + 2 * pad_t - kt) // stride_t + 1
    v_out = v + 2 * pad_v - kv + 1
    if t_out <= 0 or v_out <= 0:
        raise ConfigError(
            f"conv output extent non-positive: T'={t_out}, V'={v_out} "
            f"for input {x.shape}, kernel {w.shape}, stride_t={stride_t}")
    _check_dtypes(x, w, "conv")

    if kt == 1 and kv == 1 and stride_t == 1 and pad_t == 0 and pad_v == 0:
        # 1x1 channel mixing: a single matrix product
        w2 = w.data[:, :, 0, 0]
        xm = x.data.reshape(n, c, t * v)
        out = np.matmul(w2, xm).reshape(n, o, t, v)

        def bw1(g):
            gm = g.reshape(n, o, t * v)
            if w.requires_grad:
                _accumulate(w, np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None])
            if x.requires_grad:
                _accumulate(x, np.matmul(w2.T, gm).reshape(n, c, t, v))

        return _result(out, (x, w), "conv", bw1)

    if pad_t or pad_v:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad_t, pad_t), (pad_v, pad_v)))
    else:
        xp = x.data
    out = np.zeros((n, o, t_out, v_out), dtype=x.dtype)
    flat = out.reshape(n, o, t_out * v_out)
    for i in range(kt):
        for j in range(kv):
            xs = xp[:, :, i:i + stride_t * t_out:stride_t, j:j + v_out]
            xs = np.ascontiguousarray(xs).reshape(n, c, t_out * v_out)
            flat += np.matmul(w.data[:, :, i, j], xs)

    def bw(g):
        gm = np.ascontiguousarray(g).reshape(n, o, t_out * v_out)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for i in range(kt):
                for j in range(kv):
                    xs = xp[:, :, i:i + stride_t * t_out:stride_t, j:j + v_out]
                    xs = np.ascontiguousarray(xs).reshape(n, c, t_out * v_out)
                    gw[:, :, i, j] = np.matmul(gm, xs.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(w, gw)
        if x.requires_grad:
            gxp = np.zeros((n, c, t + 2 * pad_t, v + 2 * pad_v), dtype=x.dtype)
            for i in range(kt):
                for j in range(kv):
                    gs = np.matmul(w.data[:, :, i, j].T, gm).reshape(n, c, t_out, v_out)
                    gxp[:, :, i:i + stride_t * t_out:stride_t, j:j + v_out] += gs
            _accumulate(x, gxp[:, :, pad_t:pad_t + t, pad_v:pad_v + v])

    return _result(out, (x, w), "conv", bw)


# ---------------------------------------------------------------------------
# normalization and activations

class RunningStats:
    """Per-channel running mean/variance buffers for batch normalization."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
               mode: str = "train", eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Normalize per channel (axis 1) over all other axes.

    Train mode uses batch statistics and updates the running buffers by
    exponential moving average (unbiased variance, matching the usual
    deep-learning convention); eval mode uses the running buffers.
    """
    if x.ndim < 2:
        raise ShapeError(f"batch_norm needs a channel axis, got shape {x.shape}")
    c = x.shape[1]
    if gamma.size != c or beta.size != c:
        raise ShapeError(f"batch_norm affine size {gamma.size}/{beta.size} != channels {c}")
    if eps <= 0:
        raise ConfigError(f"batch_norm eps must be positive, got {eps}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    axes = (0,) + tuple(range(2, x.ndim))
    cshape = (1, c) + (1,) * (x.ndim - 2)
    g_r = gamma.data.reshape(cshape)

    if mode == "train":
        m = x.size // c
        if m == 0:
            raise ShapeError("batch_norm on an empty batch")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        inv_r = inv.reshape(cshape)
        xhat = (x.data - mu.reshape(cshape)) * inv_r
        out = g_r * xhat + beta.data.reshape(cshape)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running.mean *= 1.0 - momentum
        running.mean += (momentum * mu).astype(running.mean.dtype)
        running.var *= 1.0 - momentum
        running.var += (momentum * unbiased).astype(running.var.dtype)

        def bw(g):
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=axes))
            if x.requires_grad:
                gxhat = g * g_r
                gx = inv_r * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                              - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
                _accumulate(x, gx)

        return _result(out, (x, gamma, beta), "batch_norm", bw)

    inv = 1.0 / np.sqrt(running.var.astype(x.dtype) + eps)
    inv_r = inv.reshape(cshape)
    xhat = (x.data - running.mean.astype(x.dtype).reshape(cshape)) * inv_r
    out = g_r * xhat + beta.data.reshape(cshape)

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            _accumulate(x, g * g_r * inv_r)

    return _result(out, (x, gamma, beta), "batch_norm", bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    data = np.where(mask, x.data, x.dtype.type(0))

    def bw(g):
        _accumulate(x, g * mask)

    return _result(data, (x,), "relu", bw)


def sigmoid(x: Tensor) -> Tensor:
    # branch on sign so exp never sees a positive argument
    pos = x.data >= 0
    z = np.exp(np.where(pos, -x.data, x.data))
    data = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

    def bw(g):
        _accumulate(x, g * data * (1.0 - data))

    return _result(data.astype(x.dtype, copy=False), (x,), "sigmoid", bw)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation kind {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted exponential normalization along `axis`; rows sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(x, data * (g - (g * data).sum(axis=axis, keepdims=True)))

    return _result(data, (x,), "softmax", bw)


# ---------------------------------------------------------------------------
# reductions and loss

def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(a) % ndim if -ndim <= int(a) < ndim else int(a) for a in axes)
    if any(a < 0 or a >= ndim for a in axes):
        raise ShapeError(f"reduction axes {axes} invalid for ndim {ndim}")
    if len(set(axes)) != len(axes):
        raise ShapeError(f"reduction axes {axes} are not distinct")
    return axes


def reduce_mean(x: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axes, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    if count == 0:
        raise ShapeError(f"reduce_mean over empty extent, shape {x.shape}, axes {axes}")
    data = x.data.mean(axis=axes, keepdims=keepdims)
    scale = x.dtype.type(1.0 / count)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g * scale, x.shape))

    return _result(data, (x,), "reduce_mean", bw)


def reduce_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))
    axes = _normalize_axes(axes, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(data, (x,), "reduce_sum", bw)


def cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class, fused for stability."""
    if scores.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, classes] scores, got {scores.shape}")
    n, k = scores.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"cross_entropy got {labels.shape[0]} labels for {n} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise IndexError(f"label {bad} out of range for {k} classes")
    shifted = scores.data - scores.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    data = -log_p[rows, labels].mean(dtype=scores.dtype)

    def bw(g):
        if scores.requires_grad:
            grad = np.exp(log_p)
            grad[rows, labels] -= 1.0
            _accumulate(scores, grad * (g.reshape(()) / n))

    return _result(np.asarray(data, dtype=scores.dtype), (scores,), "cross_entropy", bw)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference checker

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate grad on every requires_grad leaf reachable from `loss`."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _scalar_loss(out: Tensor) -> Tensor:
    return out if out.size == 1 else reduce_sum(out)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences.

    Non-scalar outputs of f are summed before differentiation. Relative
    error uses denominator max(|analytic|, |numeric|, 1e-12). f must be
    deterministic; x is perturbed in place and restored.
    """
    if h <= 0:
        raise ConfigError(f"finite_diff_check step must be positive, got {h}")
    if not x.requires_grad:
        raise ConfigError("finite_diff_check target must have requires_grad=True")
    x.grad = None
    backward(_scalar_loss(f(x)))
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lo_plus = float(_scalar_loss(f(x)).data.reshape(()))
        flat[i] = orig - h
        lo_minus = float(_scalar_loss(f(x)).data.reshape(()))
        flat[i] = orig
        numeric = (lo_plus - lo_minus) / (2.0 * h)
        err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
