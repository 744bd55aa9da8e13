"""Dense real tensor with reverse-mode differentiation.

A small tape-based autograd: every operation records its parents and a
backward closure on the result tensor. ``backward()`` runs a reverse
topological sweep and then consumes the graph, so gradients for a new
forward pass require recomputing it. All heavy lifting is numpy; the
convolution inner loops dispatch to :mod:`cvnnfp.kernels`.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import kernels


class RealTensor:
    """n-d real array plus accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self._parents: tuple[RealTensor, ...] = ()
        self._backward_fn = None
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"RealTensor(shape={self.shape}, dtype={self.dtype.name})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    # -- autograd ------------------------------------------------------
    def backward(self, seed=None) -> None:
        """Reverse sweep from this tensor; consumes the recorded graph."""
        if self._consumed:
            raise RuntimeError("backward() already ran on this graph; "
                               "recompute the forward pass first")
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar tensor needs an "
                                 "explicit seed gradient")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.dtype)
            if seed.shape != self.shape:
                raise ValueError("seed gradient shape mismatch")

        topo: list[RealTensor] = []
        visited: set[int] = set()
        stack: list[tuple[RealTensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = self.grad + seed
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()
                node._backward_fn = None  # consume
            node._parents = ()
        self._consumed = True

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value, dtype) -> RealTensor:
    if isinstance(value, RealTensor):
        return value
    return RealTensor(np.asarray(value, dtype=dtype))


def _make(data, parents, backward_fn) -> RealTensor:
    out = RealTensor(data)
    out._parents = tuple(parents)
    out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------

def add(a: RealTensor, b) -> RealTensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    out_data = a.data + b.data

    def backward():
        a.grad += _unbroadcast(out.grad, a.shape)
        b.grad += _unbroadcast(out.grad, b.shape)

    out = _make(out_data, (a, b), backward)
    return out


def mul(a: RealTensor, b) -> RealTensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    out_data = a.data * b.data

    def backward():
        a.grad += _unbroadcast(out.grad * b.data, a.shape)
        b.grad += _unbroadcast(out.grad * a.data, b.shape)

    out = _make(out_data, (a, b), backward)
    return out


def div(a: RealTensor, b) -> RealTensor:
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    out_data = a.data / b.data

    def backward():
        a.grad += _unbroadcast(out.grad / b.data, a.shape)
        b.grad += _unbroadcast(-out.grad * out_data / b.data, b.shape)

    out = _make(out_data, (a, b), backward)
    return out


def power(a: RealTensor, exponent: float) -> RealTensor:
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward():
        a.grad += out.grad * exponent * a.data ** (exponent - 1.0)

    out = _make(out_data, (a,), backward)
    return out


def sqrt(a: RealTensor) -> RealTensor:
    out_data = np.sqrt(a.data)

    def backward():
        a.grad += out.grad * 0.5 / out_data

    out = _make(out_data, (a,), backward)
    return out


def exp(a: RealTensor) -> RealTensor:
    out_data = np.exp(a.data)

    def backward():
        a.grad += out.grad * out_data

    out = _make(out_data, (a,), backward)
    return out


def log(a: RealTensor) -> RealTensor:
    out_data = np.log(a.data)

    def backward():
        a.grad += out.grad / a.data

    out = _make(out_data, (a,), backward)
    return out


def relu(a: RealTensor) -> RealTensor:
    """max(0, v); subgradient 0 at exactly 0."""
    out_data = np.maximum(a.data, 0.0)

    def backward():
        a.grad += out.grad * (a.data > 0.0)

    out = _make(out_data, (a,), backward)
    return out


# ---------------------------------------------------------------------
# shape / reduction primitives
# ---------------------------------------------------------------------

def reshape(a: RealTensor, *shape) -> RealTensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def backward():
        a.grad += out.grad.reshape(a.shape)

    out = _make(out_data, (a,), backward)
    return out


def tensor_sum(a: RealTensor, axis=None, keepdims: bool = False) -> RealTensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if not keepdims and axis is not None:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(ax % a.data.ndim for ax in axes)
            g = np.expand_dims(g, axes)
        a.grad += np.broadcast_to(g, a.shape)

    out = _make(np.asarray(out_data), (a,), backward)
    return out


def tensor_mean(a: RealTensor, axis=None, keepdims: bool = False) -> RealTensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: Sequence[RealTensor], axis: int = 0) -> RealTensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out_data.ndim
            idx[axis] = slice(lo, hi)
            t.grad += out.grad[tuple(idx)]

    out = _make(out_data, tuple(tensors), backward)
    return out


# ---------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------

def conv2d(inp: RealTensor, filters: RealTensor, stride=(1, 1)) -> RealTensor:
    """Valid cross-correlation, no padding, no bias.

    ``inp`` is [N, C_in, H, W] or unbatched [C_in, H, W]; ``filters`` is
    [C_out, C_in, kH, kW].
    """
    sh, sw = int(stride[0]), int(stride[1])
    if sh < 1 or sw < 1:
        raise ValueError("strides must be >= 1")
    squeeze = inp.data.ndim == 3
    x = inp.data[None] if squeeze else inp.data
    if x.ndim != 4 or filters.data.ndim != 4:
        raise ValueError("conv2d expects 4-d input and filters")
    N, Cin, H, W = x.shape
    Cout, Cf, kh, kw = filters.shape
    if Cf != Cin:
        raise ValueError(f"input has {Cin} channels but filters expect {Cf}")
    if kh > H or kw > W:
        raise ValueError("filter larger than input")

    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(filters.data)
    y = kernels.conv2d_forward(x, w, sh, sw)
    out_data = y[0] if squeeze else y

    def backward():
        gy = out.grad[None] if squeeze else out.grad
        gx = kernels.conv2d_backward_input(gy, w, sh, sw, H, W)
        inp.grad += gx[0] if squeeze else gx
        filters.grad += kernels.conv2d_backward_filters(gy, x, sh, sw, kh, kw)

    out = _make(out_data, (inp, filters), backward)
    return out


def avgpool2d(inp: RealTensor, window, stride=(1, 1)) -> RealTensor:
    """Mean over each window; input [..., H, W]."""
    ph, pw = int(window[0]), int(window[1])
    sh, sw = int(stride[0]), int(stride[1])
    H, W = inp.shape[-2], inp.shape[-1]
    if ph > H or pw > W:
        raise ValueError("pooling window larger than input")
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(inp.data, (ph, pw), axis=(-2, -1))
    win = win[..., ::sh, ::sw, :, :]
    out_data = win.mean(axis=(-2, -1))
    Hp, Wp = out_data.shape[-2], out_data.shape[-1]
    scale = 1.0 / (ph * pw)

    def backward():
        g = out.grad * scale
        gx = np.zeros_like(inp.data)
        for i in range(ph):
            for j in range(pw):
                gx[..., i:i + sh * (Hp - 1) + 1:sh, j:j + sw * (Wp - 1) + 1:sw] += g
        inp.grad += gx

    out = _make(out_data, (inp,), backward)
    return out


class BatchNormState:
    """Per-channel affine parameters plus running statistics."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float64):
        self.gamma = RealTensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = RealTensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum


def batchnorm_real(inp: RealTensor, state: BatchNormState, mode: str) -> RealTensor:
    """Per-channel batch normalization over [N, C, H, W].

    Train mode normalizes with batch statistics and updates the running
    mean/variance with ``state.momentum``; eval mode uses the running
    statistics only.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if inp.data.ndim != 4:
        raise ValueError("batchnorm expects [N, C, H, W]")
    N, C, H, W = inp.shape
    axes = (0, 2, 3)
    cshape = (1, C, 1, 1)
    if mode == "train":
        if N < 2:
            raise ValueError("training-mode batch norm needs N >= 2")
        mu = tensor_mean(inp, axis=axes, keepdims=True)
        var = tensor_mean(power(inp - mu, 2.0), axis=axes, keepdims=True)
        n = N * H * W
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data.reshape(C)
        # running variance uses the unbiased estimate
        state.running_var = ((1 - m) * state.running_var
                             + m * var.data.reshape(C) * n / max(n - 1, 1))
        xhat = (inp - mu) / sqrt(var + state.eps)
    else:
        mu = state.running_mean.reshape(cshape)
        sd = np.sqrt(state.running_var.reshape(cshape) + state.eps)
        xhat = (inp - RealTensor(mu)) / RealTensor(sd)
    gamma = reshape(state.gamma, cshape)
    beta = reshape(state.beta, cshape)
    return xhat * gamma + beta


def softmax_cross_entropy(logits: RealTensor, labels) -> RealTensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError("logits must be [N, K]")
    N, K = logits.shape
    if labels.shape != (N,):
        raise ValueError("labels must be one class index per row")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels must lie in [0, {K})")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    losses = lse - z[np.arange(N), labels]
    out_data = np.asarray(losses.mean(), dtype=z.dtype)

    def backward():
        p = np.exp(z - lse[:, None])
        p[np.arange(N), labels] -= 1.0
        logits.grad += out.grad * p / N

    out = _make(out_data, (logits,), backward)
    return out
