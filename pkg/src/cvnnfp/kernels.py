"""Convolution kernel backends.

Two interchangeable implementations of the valid cross-correlation
forward/backward kernels:

* ``compiled`` - the Cython extension ``cvnnfp._convext`` (direct loops).
* ``numpy``    - pure numpy via sliding windows + einsum/tensordot.

The backend is selected once at import: the compiled extension when it
built, the numpy fallback otherwise. ``CVNNFP_BACKEND=numpy|compiled``
overrides the choice. Both backends produce identical results up to
floating-point rounding; ``benchmarks/bench_conv.py`` compares them.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from . import _convext

    HAVE_COMPILED = True
except ImportError:  # extension not built
    _convext = None
    HAVE_COMPILED = False


def _out_extent(size: int, k: int, s: int) -> int:
    return (size - k) // s + 1


def conv2d_forward_numpy(x, w, sh, sw):
    # windows: [N, Cin, Hp, Wp, kH, kW]
    win = sliding_window_view(x, (w.shape[2], w.shape[3]), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]
    return np.einsum("ncxyij,ocij->noxy", win, w, optimize=True)


def conv2d_backward_input_numpy(gy, w, sh, sw, H, W):
    N = gy.shape[0]
    Cin, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    Hp, Wp = gy.shape[2], gy.shape[3]
    # tmp[n, x, y, c, i, j] = sum_o gy[n,o,x,y] * w[o,c,i,j]
    tmp = np.tensordot(gy, w, axes=(1, 0))
    gx = np.zeros((N, Cin, H, W), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + sh * (Hp - 1) + 1:sh, j:j + sw * (Wp - 1) + 1:sw] += (
                tmp[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return gx


def conv2d_backward_filters_numpy(gy, x, sh, sw, kh, kw):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return np.einsum("noxy,ncxyij->ocij", gy, win, optimize=True)


def conv2d_forward_compiled(x, w, sh, sw):
    N, _, H, W = x.shape
    Cout, _, kh, kw = w.shape
    out = np.empty((N, Cout, _out_extent(H, kh, sh), _out_extent(W, kw, sw)),
                   dtype=x.dtype)
    _convext.conv2d_forward(x, w, sh, sw, out)
    return out


def conv2d_backward_input_compiled(gy, w, sh, sw, H, W):
    gx = np.empty((gy.shape[0], w.shape[1], H, W), dtype=gy.dtype)
    _convext.conv2d_backward_input(np.ascontiguousarray(gy), w, sh, sw, gx)
    return gx


def conv2d_backward_filters_compiled(gy, x, sh, sw, kh, kw):
    gw = np.empty((gy.shape[1], x.shape[1], kh, kw), dtype=gy.dtype)
    _convext.conv2d_backward_filters(np.ascontiguousarray(gy), x, sh, sw, gw)
    return gw


_BACKENDS = {
    "numpy": (conv2d_forward_numpy, conv2d_backward_input_numpy,
              conv2d_backward_filters_numpy),
    "compiled": (conv2d_forward_compiled, conv2d_backward_input_compiled,
                 conv2d_backward_filters_compiled),
}


def _select_backend() -> str:
    name = os.environ.get("CVNNFP_BACKEND", "")
    if name:
        if name not in _BACKENDS:
            raise ValueError(f"unknown CVNNFP_BACKEND {name!r}")
        if name == "compiled" and not HAVE_COMPILED:
            raise ImportError("CVNNFP_BACKEND=compiled but cvnnfp._convext is not built")
        return name
    return "compiled" if HAVE_COMPILED else "numpy"


BACKEND = _select_backend()
conv2d_forward, conv2d_backward_input, conv2d_backward_filters = _BACKENDS[BACKEND]


def get_backend(name: str):
    """Return (forward, backward_input, backward_filters) for an explicit backend."""
    if name == "compiled" and not HAVE_COMPILED:
        raise ImportError("compiled kernels are not available")
    return _BACKENDS[name]
