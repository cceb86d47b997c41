# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 2-d convolution, 2x2 transposed convolution, 2x2 max
pooling, forward and backward.

Convolutions lower to GEMM: a C packing loop gathers the input windows into a
column matrix and BLAS does the contraction, which is where the throughput
is.  Pooling and the 2x2 transposed convolution stay as direct loops, with
work partitioned over (batch, channel) slabs so every element is written by
exactly one thread in a fixed order.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out_extent(Py_ssize_t size, Py_ssize_t k,
                                   Py_ssize_t stride, Py_ssize_t pad) nogil:
    return (size + 2 * pad - k) // stride + 1


cdef void _gemm_rowmajor(char ta, char tb, int m, int n, int kdim,
                         real alpha, real *a, int lda, real *b, int ldb,
                         real beta, real *c, int ldc) noexcept nogil:
    """Row-major C[m,n] = alpha*op(A)*op(B) + beta*C via the column-major
    BLAS identity C^T = op(B)^T op(A)^T (operands swapped, dims swapped)."""
    if real is float:
        sgemm(&tb, &ta, &n, &m, &kdim, <float *> &alpha, <float *> b, &ldb,
              <float *> a, &lda, <float *> &beta, <float *> c, &ldc)
    else:
        dgemm(&tb, &ta, &n, &m, &kdim, <double *> &alpha, <double *> b, &ldb,
              <double *> a, &lda, <double *> &beta, <double *> c, &ldc)


cdef void _im2col(real[:, :, :, ::1] x, Py_ssize_t b, Py_ssize_t k, int s,
                  int pad, Py_ssize_t Ho, Py_ssize_t Wo,
                  real[:, ::1] col) noexcept nogil:
    """Packs input windows: col[(c*k+u)*k+v, i*Wo+j] = x[b,c,i*s+u-p,j*s+v-p],
    zero where the window leaves the raster."""
    cdef Py_ssize_t Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t c, u, v, i, j, y, xx, row, j_lo, j_hi
    for c in range(Cin):
        for u in range(k):
            for v in range(k):
                row = (c * k + u) * k + v
                for i in range(Ho):
                    y = i * s + u - pad
                    if y < 0 or y >= H:
                        for j in range(Wo):
                            col[row, i * Wo + j] = 0
                        continue
                    if s == 1:
                        # contiguous copy with zero fringes
                        j_lo = pad - v if pad - v > 0 else 0
                        j_hi = W + pad - v if W + pad - v < Wo else Wo
                        for j in range(j_lo):
                            col[row, i * Wo + j] = 0
                        for j in range(j_lo, j_hi):
                            col[row, i * Wo + j] = x[b, c, y, j + v - pad]
                        for j in range(j_hi, Wo):
                            col[row, i * Wo + j] = 0
                    else:
                        for j in range(Wo):
                            xx = j * s + v - pad
                            if xx < 0 or xx >= W:
                                col[row, i * Wo + j] = 0
                            else:
                                col[row, i * Wo + j] = x[b, c, y, xx]


cdef void _col2im_add(real[:, ::1] colgrad, Py_ssize_t b, Py_ssize_t k, int s,
                      int pad, Py_ssize_t Ho, Py_ssize_t Wo,
                      real[:, :, :, ::1] dx) noexcept nogil:
    """Scatter-adds a column-matrix gradient back onto the input raster."""
    cdef Py_ssize_t Cin = dx.shape[1], H = dx.shape[2], W = dx.shape[3]
    cdef Py_ssize_t c, u, v, i, j, y, xx, row, j_lo, j_hi
    for c in range(Cin):
        for u in range(k):
            for v in range(k):
                row = (c * k + u) * k + v
                for i in range(Ho):
                    y = i * s + u - pad
                    if y < 0 or y >= H:
                        continue
                    if s == 1:
                        j_lo = pad - v if pad - v > 0 else 0
                        j_hi = W + pad - v if W + pad - v < Wo else Wo
                        for j in range(j_lo, j_hi):
                            dx[b, c, y, j + v - pad] += colgrad[row, i * Wo + j]
                    else:
                        for j in range(Wo):
                            xx = j * s + v - pad
                            if 0 <= xx < W:
                                dx[b, c, y, xx] += colgrad[row, i * Wo + j]


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] bias,
                   int stride, int pad, int threads=1):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = _out_extent(H, k, stride, pad)
    cdef Py_ssize_t Wo = _out_extent(W, k, stride, pad)
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    out_np = np.empty((B, Cout, Ho, Wo), dtype=dt)
    col_np = np.empty((Cin * k * k, Ho * Wo), dtype=dt)
    cdef real[:, :, :, ::1] out = out_np
    cdef real[:, ::1] col = col_np
    cdef real[:, :, :, ::1] wv = w
    cdef Py_ssize_t b, o, i, j
    cdef real bv
    cdef int m = <int> Cout, n = <int> (Ho * Wo), kd = <int> (Cin * k * k)

    with nogil:
        for b in range(B):
            _im2col(x, b, k, stride, pad, Ho, Wo, col)
            _gemm_rowmajor(c'n', c'n', m, n, kd, <real> 1.0,
                           &wv[0, 0, 0, 0], kd, &col[0, 0], n,
                           <real> 0.0, &out[b, 0, 0, 0], n)
            for o in range(Cout):
                bv = bias[o]
                if bv != 0:
                    for i in range(Ho):
                        for j in range(Wo):
                            out[b, o, i, j] += bv
    return out_np


def conv2d_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                    real[:, :, :, ::1] dout, int stride, int pad,
                    bint need_dx=True, bint need_dw=True, int threads=1):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = dout.shape[2], Wo = dout.shape[3]
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    db_np = np.zeros(Cout, dtype=dt)
    dx_np = np.zeros((B, Cin, H, W), dtype=dt) if need_dx else None
    dw_np = np.zeros((Cout, Cin, k, k), dtype=dt) if need_dw else None
    col_np = np.empty((Cin * k * k, Ho * Wo), dtype=dt)

    cdef real[::1] db = db_np
    cdef real[:, ::1] col = col_np
    cdef real[:, :, :, ::1] dx = x
    cdef real[:, :, :, ::1] dw = w
    cdef real[:, :, :, ::1] wv = w
    cdef real[:, :, :, ::1] dov = dout
    if need_dx:
        dx = dx_np
    if need_dw:
        dw = dw_np
    cdef Py_ssize_t b, o, i, j
    cdef real acc
    cdef int m, n = <int> (Ho * Wo), kd = <int> (Cin * k * k), co = <int> Cout

    with nogil:
        for o in prange(Cout, num_threads=threads, schedule="static"):
            acc = 0
            for b in range(B):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = acc + dout[b, o, i, j]
            db[o] = acc

        if need_dw:
            for b in range(B):
                _im2col(x, b, k, stride, pad, Ho, Wo, col)
                # dW[Cout, CinKK] += dout_b[Cout, HoWo] . col^T
                _gemm_rowmajor(c'n', c't', co, kd, n, <real> 1.0,
                               &dov[b, 0, 0, 0], n, &col[0, 0], n,
                               <real> 1.0, &dw[0, 0, 0, 0], kd)

        if need_dx:
            for b in range(B):
                # colgrad[CinKK, HoWo] = W^T . dout_b
                _gemm_rowmajor(c't', c'n', kd, n, co, <real> 1.0,
                               &wv[0, 0, 0, 0], kd, &dov[b, 0, 0, 0], n,
                               <real> 0.0, &col[0, 0], n)
                _col2im_add(col, b, k, stride, pad, Ho, Wo, dx)
    return dx_np, dw_np, db_np


def convt2x2_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] bias,
                     int threads=1):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0]
    if real is float:
        out_np = np.empty((B, Cout, 2 * H, 2 * W), dtype=np.float32)
    else:
        out_np = np.empty((B, Cout, 2 * H, 2 * W), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t bo, b, o, c, u, v, i, j
    cdef real bv, wv

    with nogil:
        for bo in prange(B * Cout, num_threads=threads, schedule="static"):
            b = bo // Cout
            o = bo - b * Cout
            bv = bias[o]
            for i in range(2 * H):
                for j in range(2 * W):
                    out[b, o, i, j] = bv
            for c in range(Cin):
                for u in range(2):
                    for v in range(2):
                        wv = w[o, c, u, v]
                        if wv == 0:
                            continue
                        for i in range(H):
                            for j in range(W):
                                out[b, o, 2 * i + u, 2 * j + v] = out[b, o, 2 * i + u, 2 * j + v] + wv * x[b, c, i, j]
    return out_np


def convt2x2_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                      real[:, :, :, ::1] dout, int threads=1):
    cdef Py_ssize_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0]
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    dx_np = np.zeros((B, Cin, H, W), dtype=dt)
    dw_np = np.zeros((Cout, Cin, 2, 2), dtype=dt)
    db_np = np.zeros(Cout, dtype=dt)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef real[:, :, :, ::1] dw = dw_np
    cdef real[::1] db = db_np
    cdef Py_ssize_t bc, b, c, o, u, v, i, j
    cdef real acc, wv

    with nogil:
        for o in prange(Cout, num_threads=threads, schedule="static"):
            acc = 0
            for b in range(B):
                for i in range(2 * H):
                    for j in range(2 * W):
                        acc = acc + dout[b, o, i, j]
            db[o] = acc
            for c in range(Cin):
                for u in range(2):
                    for v in range(2):
                        acc = 0
                        for b in range(B):
                            for i in range(H):
                                for j in range(W):
                                    acc = acc + x[b, c, i, j] * dout[b, o, 2 * i + u, 2 * j + v]
                        dw[o, c, u, v] = acc

        for bc in prange(B * Cin, num_threads=threads, schedule="static"):
            b = bc // Cin
            c = bc - b * Cin
            for o in range(Cout):
                for u in range(2):
                    for v in range(2):
                        wv = w[o, c, u, v]
                        if wv == 0:
                            continue
                        for i in range(H):
                            for j in range(W):
                                dx[b, c, i, j] = dx[b, c, i, j] + wv * dout[b, o, 2 * i + u, 2 * j + v]
    return dx_np, dw_np, db_np


def maxpool2x2_forward(real[:, :, :, ::1] x, int threads=1):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // 2, Wo = W // 2
    if real is float:
        out_np = np.empty((B, C, Ho, Wo), dtype=np.float32)
    else:
        out_np = np.empty((B, C, Ho, Wo), dtype=np.float64)
    idx_np = np.empty((B, C, Ho, Wo), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_np
    cdef unsigned char[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t bc, b, c, i, j, u, v
    cdef real best, val
    cdef unsigned char arg

    with nogil:
        for bc in prange(B * C, num_threads=threads, schedule="static"):
            b = bc // C
            c = bc - b * C
            for i in range(Ho):
                for j in range(Wo):
                    best = x[b, c, 2 * i, 2 * j]
                    arg = 0
                    # strict > keeps the first maximum in row-major scan order
                    val = x[b, c, 2 * i, 2 * j + 1]
                    if val > best:
                        best = val
                        arg = 1
                    val = x[b, c, 2 * i + 1, 2 * j]
                    if val > best:
                        best = val
                        arg = 2
                    val = x[b, c, 2 * i + 1, 2 * j + 1]
                    if val > best:
                        best = val
                        arg = 3
                    out[b, c, i, j] = best
                    idx[b, c, i, j] = arg
    return out_np, idx_np


def maxpool2x2_backward(unsigned char[:, :, :, ::1] idx, real[:, :, :, ::1] dout,
                        int threads=1):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[1]
    cdef Py_ssize_t Ho = dout.shape[2], Wo = dout.shape[3]
    if real is float:
        dx_np = np.zeros((B, C, 2 * Ho, 2 * Wo), dtype=np.float32)
    else:
        dx_np = np.zeros((B, C, 2 * Ho, 2 * Wo), dtype=np.float64)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t bc, b, c, i, j
    cdef unsigned char a

    with nogil:
        for bc in prange(B * C, num_threads=threads, schedule="static"):
            b = bc // C
            c = bc - b * C
            for i in range(Ho):
                for j in range(Wo):
                    a = idx[b, c, i, j]
                    dx[b, c, 2 * i + (a >> 1), 2 * j + (a & 1)] = dout[b, c, i, j]
    return dx_np
