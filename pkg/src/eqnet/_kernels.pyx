# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``eqnet._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport nearbyint

cnp.import_array()


def fake_quant_forward(const double[:, ::1] x, const double[::1] step,
                       const double[::1] zero, double qmin, double qmax):
    cdef Py_ssize_t C = x.shape[0], M = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double s, z, v, r, c, k
    out_arr = np.empty((C, M), dtype=np.float64)
    dstep_arr = np.empty((C, M), dtype=np.float64)
    inside_arr = np.empty((C, M), dtype=np.bool_)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] dstep = dstep_arr
    cdef cnp.npy_bool[:, ::1] inside = inside_arr
    with nogil:
        for i in range(C):
            s = step[i]
            z = zero[i]
            for j in range(M):
                v = x[i, j] / s
                r = nearbyint(v) + z
                if r < qmin:
                    c = qmin
                    inside[i, j] = 0
                elif r > qmax:
                    c = qmax
                    inside[i, j] = 0
                else:
                    c = r
                    inside[i, j] = 1
                k = c - z
                out[i, j] = k * s
                dstep[i, j] = k - v if inside[i, j] else k
    return out_arr, dstep_arr, inside_arr


cdef void _im2col(const double[:, :, :, ::1] x, double[:, ::1] cols, Py_ssize_t KH, Py_ssize_t KW,
                  Py_ssize_t HO, Py_ssize_t WO, int stride, int pad) noexcept nogil:
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n, c, p, q, i, j, hi, wi, row, col
    for n in range(N):
        for p in range(HO):
            for q in range(WO):
                row = (n * HO + p) * WO + q
                col = 0
                for c in range(C):
                    for i in range(KH):
                        hi = p * stride + i - pad
                        for j in range(KW):
                            wi = q * stride + j - pad
                            if hi < 0 or hi >= H or wi < 0 or wi >= W:
                                cols[row, col] = 0.0
                            else:
                                cols[row, col] = x[n, c, hi, wi]
                            col += 1


cdef void _col2im(const double[:, ::1] cols, double[:, :, :, ::1] gx, Py_ssize_t KH, Py_ssize_t KW,
                  Py_ssize_t HO, Py_ssize_t WO, int stride, int pad) noexcept nogil:
    cdef Py_ssize_t N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3]
    cdef Py_ssize_t n, c, p, q, i, j, hi, wi, row, col
    for n in range(N):
        for p in range(HO):
            for q in range(WO):
                row = (n * HO + p) * WO + q
                col = 0
                for c in range(C):
                    for i in range(KH):
                        hi = p * stride + i - pad
                        for j in range(KW):
                            wi = q * stride + j - pad
                            if hi >= 0 and hi < H and wi >= 0 and wi < W:
                                gx[n, c, hi, wi] += cols[row, col]
                            col += 1


# The patch gathers run here; the dense products go to BLAS through numpy.
def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                   int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = (H + 2 * pad - KH) // stride + 1
    cdef Py_ssize_t WO = (W + 2 * pad - KW) // stride + 1
    cols_arr = np.empty((N * HO * WO, C * KH * KW), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    with nogil:
        _im2col(x, cols, KH, KW, HO, WO, stride, pad)
    y = cols_arr @ np.asarray(w).reshape(O, -1).T
    return np.ascontiguousarray(y.reshape(N, HO, WO, O).transpose(0, 3, 1, 2))


def conv2d_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[:, :, :, ::1] gy, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t HO = gy.shape[2], WO = gy.shape[3]
    cols_arr = np.empty((N * HO * WO, C * KH * KW), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    with nogil:
        _im2col(x, cols, KH, KW, HO, WO, stride, pad)
    g2 = np.asarray(gy).transpose(0, 2, 3, 1).reshape(-1, O)
    gw_arr = (g2.T @ cols_arr).reshape(O, C, KH, KW)
    gcols_arr = np.ascontiguousarray(g2 @ np.asarray(w).reshape(O, -1))
    gx_arr = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, ::1] gcols = gcols_arr
    cdef double[:, :, :, ::1] gx = gx_arr
    with nogil:
        _col2im(gcols, gx, KH, KW, HO, WO, stride, pad)
    return gx_arr, gw_arr
