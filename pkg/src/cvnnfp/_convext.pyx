# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled 2-d valid cross-correlation kernels (forward + both backward passes).

Shapes follow the NCHW convention: input [N, Cin, H, W], filters
[Cout, Cin, kH, kW], output [N, Cout, Hp, Wp]. All arrays must be
C-contiguous and share one floating dtype; outputs are written in place.
"""

cimport cython

ctypedef fused real:
    float
    double


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   Py_ssize_t sh, Py_ssize_t sw, real[:, :, :, ::1] out):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1]
    cdef Py_ssize_t Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Hp = out.shape[2], Wp = out.shape[3]
    cdef Py_ssize_t n, o, c, oh, ow, i, j, ih, iw
    cdef real acc
    for n in range(N):
        for o in range(Cout):
            for oh in range(Hp):
                for ow in range(Wp):
                    acc = 0
                    ih = oh * sh
                    iw = ow * sw
                    for c in range(Cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc = acc + x[n, c, ih + i, iw + j] * w[o, c, i, j]
                    out[n, o, oh, ow] = acc


def conv2d_backward_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w,
                          Py_ssize_t sh, Py_ssize_t sw, real[:, :, :, ::1] gx):
    cdef Py_ssize_t N = gy.shape[0], Cout = gy.shape[1]
    cdef Py_ssize_t Hp = gy.shape[2], Wp = gy.shape[3]
    cdef Py_ssize_t Cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t n, o, c, oh, ow, i, j, ih, iw
    cdef real g
    gx[:, :, :, :] = 0
    for n in range(N):
        for o in range(Cout):
            for oh in range(Hp):
                for ow in range(Wp):
                    g = gy[n, o, oh, ow]
                    ih = oh * sh
                    iw = ow * sw
                    for c in range(Cin):
                        for i in range(kh):
                            for j in range(kw):
                                gx[n, c, ih + i, iw + j] += g * w[o, c, i, j]


def conv2d_backward_filters(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                            Py_ssize_t sh, Py_ssize_t sw, real[:, :, :, ::1] gw):
    cdef Py_ssize_t N = gy.shape[0], Cout = gy.shape[1]
    cdef Py_ssize_t Hp = gy.shape[2], Wp = gy.shape[3]
    cdef Py_ssize_t Cin = gw.shape[1], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t n, o, c, oh, ow, i, j, ih, iw
    cdef real g
    gw[:, :, :, :] = 0
    for n in range(N):
        for o in range(Cout):
            for oh in range(Hp):
                for ow in range(Wp):
                    g = gy[n, o, oh, ow]
                    ih = oh * sh
                    iw = ow * sw
                    for c in range(Cin):
                        for i in range(kh):
                            for j in range(kw):
                                gw[o, c, i, j] += g * x[n, c, ih + i, iw + j]
