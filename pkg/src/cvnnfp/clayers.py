"""Complex-valued building blocks composed from real tensor primitives.

A complex activation is a (re, im) pair of real tensors and a complex
filter bank is a (A, B) pair, so every operation here reduces to real
convolutions, elementwise ops and reductions that the autograd tape
already differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import RealTensor


@dataclass
class ComplexTensor:
    """re + i*im, with re.shape == im.shape."""

    re: RealTensor
    im: RealTensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError("real and imaginary parts must share a shape")

    @property
    def shape(self):
        return self.re.shape


@dataclass
class ComplexConvFilter:
    """Complex filter bank A + i*B, each [C_out, C_in, kH, kW]."""

    A: RealTensor
    B: RealTensor

    def __post_init__(self):
        if self.A.shape != self.B.shape:
            raise ValueError("A and B must share a shape")


def cconv2d(h: ComplexTensor, w: ComplexConvFilter, stride=(1, 1)) -> ComplexTensor:
    """Complex convolution via four real convolutions.

    re = A*x - B*y, im = B*x + A*y; the B*x and A*y cross terms couple the
    real and imaginary channels.
    """
    ax = T.conv2d(h.re, w.A, stride)
    by = T.conv2d(h.im, w.B, stride)
    bx = T.conv2d(h.re, w.B, stride)
    ay = T.conv2d(h.im, w.A, stride)
    return ComplexTensor(re=ax - by, im=bx + ay)


def crelu(h: ComplexTensor) -> ComplexTensor:
    """ReLU applied independently to the real and imaginary parts."""
    return ComplexTensor(re=T.relu(h.re), im=T.relu(h.im))


def cavgpool(h: ComplexTensor, window, stride=(1, 1)) -> ComplexTensor:
    return ComplexTensor(re=T.avgpool2d(h.re, window, stride),
                         im=T.avgpool2d(h.im, window, stride))


MAGNITUDE_EPS = 1e-12


def magnitude(h: ComplexTensor) -> RealTensor:
    """sqrt(re^2 + im^2 + eps); the eps keeps the gradient finite at 0."""
    return T.sqrt(h.re * h.re + h.im * h.im + MAGNITUDE_EPS)


class ComplexBNState:
    """Parameters and running statistics for complex batch normalization.

    The scale is a symmetric 2x2 matrix per channel, initialized to
    1/sqrt(2) on the diagonal so a whitened unit-variance complex input
    keeps total variance 1.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 whiten: bool = True, dtype=np.float64):
        r = 1.0 / np.sqrt(2.0)
        self.gamma_rr = RealTensor(np.full(channels, r, dtype=dtype), requires_grad=True)
        self.gamma_ii = RealTensor(np.full(channels, r, dtype=dtype), requires_grad=True)
        self.gamma_ri = RealTensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.beta_r = RealTensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.beta_i = RealTensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean_r = np.zeros(channels, dtype=dtype)
        self.running_mean_i = np.zeros(channels, dtype=dtype)
        self.running_vrr = np.full(channels, 0.5, dtype=dtype)
        self.running_vii = np.full(channels, 0.5, dtype=dtype)
        self.running_vri = np.zeros(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self.whiten = whiten


def _inv_sqrt_2x2(a, b, c):
    """Inverse of the symmetric PD square root of [[a, b], [b, c]].

    With s = sqrt(ac - b^2) and t = sqrt(a + c + 2s), the PD square root
    is (V + sI)/t, whose inverse is [[c+s, -b], [-b, a+s]] / (s*t).
    """
    s = T.sqrt(a * c - b * b)
    t = T.sqrt(a + c + 2.0 * s)
    denom = s * t
    return (c + s) / denom, (a + s) / denom, (-1.0 * b) / denom


def cbatchnorm(h: ComplexTensor, state: ComplexBNState, mode: str) -> ComplexTensor:
    """Whitening complex batch norm over [N, C, H, W] component pairs.

    Subtracts the complex mean, multiplies by the inverse square root of
    the per-channel 2x2 covariance of (re, im) (plus eps on the diagonal),
    then applies the 2x2 scale and complex shift. With ``state.whiten``
    False, falls back to independent per-component normalization using
    only the diagonal scale.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if h.re.data.ndim != 4:
        raise ValueError("cbatchnorm expects [N, C, H, W]")
    N, C, H, W = h.shape
    axes = (0, 2, 3)
    cshape = (1, C, 1, 1)

    if mode == "train":
        if N < 2:
            raise ValueError("training-mode batch norm needs N >= 2")
        mu_r = T.tensor_mean(h.re, axis=axes, keepdims=True)
        mu_i = T.tensor_mean(h.im, axis=axes, keepdims=True)
        xr = h.re - mu_r
        xi = h.im - mu_i
        vrr = T.tensor_mean(xr * xr, axis=axes, keepdims=True)
        vii = T.tensor_mean(xi * xi, axis=axes, keepdims=True)
        vri = T.tensor_mean(xr * xi, axis=axes, keepdims=True)
        m = state.momentum
        state.running_mean_r = (1 - m) * state.running_mean_r + m * mu_r.data.reshape(C)
        state.running_mean_i = (1 - m) * state.running_mean_i + m * mu_i.data.reshape(C)
        state.running_vrr = (1 - m) * state.running_vrr + m * vrr.data.reshape(C)
        state.running_vii = (1 - m) * state.running_vii + m * vii.data.reshape(C)
        state.running_vri = (1 - m) * state.running_vri + m * vri.data.reshape(C)
        a = vrr + state.eps
        c = vii + state.eps
        b = vri
    else:
        xr = h.re - RealTensor(state.running_mean_r.reshape(cshape))
        xi = h.im - RealTensor(state.running_mean_i.reshape(cshape))
        a = RealTensor(state.running_vrr.reshape(cshape) + state.eps)
        c = RealTensor(state.running_vii.reshape(cshape) + state.eps)
        b = RealTensor(state.running_vri.reshape(cshape).copy())

    if state.whiten:
        wrr, wii, wri = _inv_sqrt_2x2(a, b, c)
        zr = wrr * xr + wri * xi
        zi = wri * xr + wii * xi
    else:
        zr = xr / T.sqrt(a)
        zi = xi / T.sqrt(c)

    g_rr = T.reshape(state.gamma_rr, cshape)
    g_ii = T.reshape(state.gamma_ii, cshape)
    beta_r = T.reshape(state.beta_r, cshape)
    beta_i = T.reshape(state.beta_i, cshape)
    if state.whiten:
        g_ri = T.reshape(state.gamma_ri, cshape)
        out_r = g_rr * zr + g_ri * zi + beta_r
        out_i = g_ri * zr + g_ii * zi + beta_i
    else:
        out_r = g_rr * zr + beta_r
        out_i = g_ii * zi + beta_i
    return ComplexTensor(re=out_r, im=out_i)
