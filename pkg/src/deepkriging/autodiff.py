"""Minimal reverse-mode autodiff over NCHW arrays.

Only the operations the kriging-weight network needs are provided. Each op
records a closure that pushes the upstream gradient to its inputs; calling
``Tensor.backward`` replays the closures in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise ------------------------------------------------------------


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not training or rate == 0:
        return x
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep * scale

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape).astype(x.dtype))

    return _result(np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype), (x,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean over every element of the squared difference."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size

    def backward(g):
        _accumulate(pred, (2.0 / n) * g * diff)

    value = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=pred.dtype)
    return _result(value, (pred,), backward)


# -- convolution ------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # n, c, h', w', kh, kw
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None, pad: int = 1):
    """Stride-1 zero-padded cross-correlation. Returns (output, im2col buffer)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects a 4-D input and a 4-D kernel")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if c != ck:
        raise ValueError(f"input has {c} channels, kernel expects {ck}")
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    cols = _im2col(x, kh, kw, pad)
    out = cols @ kernel.reshape(o, -1).T
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
        out += bias
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), cols


def conv2d_backward(grad_out: np.ndarray, cols: np.ndarray, x_shape, kernel: np.ndarray, pad: int = 1):
    """Gradients (input, kernel, bias) of a stride-1 convolution."""
    n, c, h, w = x_shape
    o, _, kh, kw = kernel.shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
    grad_kernel = (g2.T @ cols).reshape(kernel.shape)
    grad_bias = g2.sum(axis=0)
    dcols = (g2 @ kernel.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_input = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return grad_input, grad_kernel, grad_bias


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, pad: int = 1) -> Tensor:
    out, cols = conv2d_forward(x.data, kernel.data, None if bias is None else bias.data, pad)
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    x_shape = x.shape

    def backward(g):
        gx, gk, gb = conv2d_backward(g, cols, x_shape, kernel.data, pad)
        _accumulate(x, gx)
        _accumulate(kernel, gk)
        if bias is not None:
            _accumulate(bias, gb)

    if not (_grad_enabled and any(p.requires_grad for p in parents)):
        del cols
    return _result(out, parents, backward)


# -- batch normalization ----------------------------------------------------


class UninitializedStatisticsError(RuntimeError):
    pass


def batchnorm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: Tensor | None,
    running_var: Tensor | None,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (batch, height, width).

    Training mode normalizes with batch statistics and folds them into the
    running estimates as ``r <- momentum * r + (1 - momentum) * batch``
    (biased variance). Evaluation mode uses the running estimates.
    """
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    gamma = scale.data.reshape(shape)
    beta = shift.data.reshape(shape)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        if running_mean is not None and running_var is not None:
            running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu.reshape(-1)
            running_var.data[...] = momentum * running_var.data + (1 - momentum) * var.reshape(-1)
    else:
        if running_mean is None or running_var is None or running_mean.data is None:
            raise UninitializedStatisticsError("batchnorm evaluated before running statistics exist")
        mu = running_mean.data.reshape(shape)
        var = running_var.data.reshape(shape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu) * inv_std
    out = gamma * xhat + beta
    m = x.data.size // x.shape[1]

    def backward(g):
        _accumulate(shift, g.sum(axis=axes))
        _accumulate(scale, (g * xhat).sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma
        if training:
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = inv_std / m * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std
        _accumulate(x, dx.astype(x.dtype, copy=False))

    return _result(out.astype(x.dtype, copy=False), (x, scale, shift), backward)


# -- kriging-specific ops ---------------------------------------------------


def normalize_sum(w: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide along axis 1 by the channel sum plus a sign-matched epsilon.

    The epsilon is ``eps * sign(sum)`` with sign(0) = 1, so the denominator
    is never zero.
    """
    s = w.data.sum(axis=1, keepdims=True)
    denom = s + eps * np.where(s >= 0, 1.0, -1.0).astype(w.dtype)
    out = w.data / denom

    def backward(g):
        inner = (g * w.data).sum(axis=1, keepdims=True)
        _accumulate(w, g / denom - inner / (denom * denom))

    return _result(out, (w,), backward)


def channel_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-pixel dot product over axis 1: (N, K, H, W) x (N, K, H, W) -> (N, 1, H, W)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = np.einsum("nkhw,nkhw->nhw", a.data, b.data)[:, None]

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(out, (a, b), backward)


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def adam_step(params: dict, grads: dict, state: AdamState, clip_norm: float = 1.0) -> float:
    """Clip all gradients by their joint L2 norm, then apply one Adam update
    in place. Returns the pre-clipping norm."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    norm = global_norm(grads.values())
    factor = clip_norm / norm if norm > clip_norm else 1.0
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        g = g * np.asarray(factor, dtype=g.dtype)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= update.astype(p.dtype, copy=False)
    return norm
