# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels (see _pykernels for contracts)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

cdef double VAR_EPS = 1e-8


def ncc_response(const double[:, ::1] image, const double[:, ::1] templ):
    cdef Py_ssize_t H = image.shape[0], W = image.shape[1]
    cdef Py_ssize_t th = templ.shape[0], tw = templ.shape[1]
    cdef Py_ssize_t oh = H - th + 1, ow = W - tw + 1
    cdef double n = <double>(th * tw)

    out_arr = np.zeros((oh, ow), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    cdef Py_ssize_t i, j, r, c
    cdef double tmean = 0.0, tvar = 0.0, v, s, s2, cr, var, val

    for i in range(th):
        for j in range(tw):
            tmean += templ[i, j]
    tmean /= n

    tz_arr = np.empty((th, tw), dtype=np.float64)
    cdef double[:, ::1] tz = tz_arr
    for i in range(th):
        for j in range(tw):
            tz[i, j] = templ[i, j] - tmean
            tvar += tz[i, j] * tz[i, j]
    if tvar <= VAR_EPS:
        return out_arr

    with nogil:
        for r in range(oh):
            for c in range(ow):
                s = 0.0
                s2 = 0.0
                cr = 0.0
                for i in range(th):
                    for j in range(tw):
                        v = image[r + i, c + j]
                        s += v
                        s2 += v * v
                        cr += v * tz[i, j]
                var = s2 - s * s / n
                if var <= VAR_EPS:
                    val = 0.0
                else:
                    val = cr / sqrt(var * tvar)
                    if val > 1.0:
                        val = 1.0
                    elif val < -1.0:
                        val = -1.0
                out[r, c] = val
    return out_arr


DEF MAXCH = 64  # upper bound on channel counts handled by the stack buffers


def conv3x3_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[::1] b):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0]
    cdef Py_ssize_t oh = H - 2, ow = W - 2
    if C > MAXCH or oc > MAXCH:
        raise ValueError(f"channel counts above {MAXCH} are not supported")
    out_arr = np.empty((B, oh, ow, oc), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    # weights relaid as (ky, kx, C, OC) so the inner loop runs contiguously
    wt_arr = np.ascontiguousarray(np.transpose(np.asarray(w), (2, 3, 1, 0)))
    cdef double[:, :, :, ::1] wt = wt_arr
    cdef Py_ssize_t i, oy, ox, ky, kx, c, o
    cdef double xv
    cdef double acc[MAXCH]
    with nogil:
        for i in range(B):
            for oy in range(oh):
                for ox in range(ow):
                    for o in range(oc):
                        acc[o] = b[o]
                    for ky in range(3):
                        for kx in range(3):
                            for c in range(C):
                                xv = x[i, oy + ky, ox + kx, c]
                                for o in range(oc):
                                    acc[o] += xv * wt[ky, kx, c, o]
                    for o in range(oc):
                        out[i, oy, ox, o] = acc[o]
    return out_arr


def conv3x3_param_grad(const double[:, :, :, ::1] da, const double[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t oh = da.shape[1], ow = da.shape[2], oc = da.shape[3]
    if C > MAXCH or oc > MAXCH:
        raise ValueError(f"channel counts above {MAXCH} are not supported")
    dwt_arr = np.zeros((3, 3, C, oc), dtype=np.float64)
    db_arr = np.zeros(oc, dtype=np.float64)
    cdef double[:, :, :, ::1] dwt = dwt_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, oy, ox, ky, kx, c, o
    cdef double xv
    with nogil:
        for i in range(B):
            for oy in range(oh):
                for ox in range(ow):
                    for o in range(oc):
                        db[o] += da[i, oy, ox, o]
                    for ky in range(3):
                        for kx in range(3):
                            for c in range(C):
                                xv = x[i, oy + ky, ox + kx, c]
                                for o in range(oc):
                                    dwt[ky, kx, c, o] += xv * da[i, oy, ox, o]
    dw = np.ascontiguousarray(np.transpose(dwt_arr, (3, 2, 0, 1)))  # (OC, C, 3, 3)
    return dw, db_arr


def maxpool5_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t po = (min(H, W) - 5) // 5 + 1
    out_arr = np.empty((B, po, po, C), dtype=np.float64)
    idx_arr = np.empty((B, po, po, C), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, py, px, c, wy, wx, best
    cdef double v, bv
    with nogil:
        for i in range(B):
            for py in range(po):
                for px in range(po):
                    for c in range(C):
                        best = 0
                        bv = x[i, py * 5, px * 5, c]
                        for wy in range(5):
                            for wx in range(5):
                                v = x[i, py * 5 + wy, px * 5 + wx, c]
                                if v > bv:
                                    bv = v
                                    best = wy * 5 + wx
                        out[i, py, px, c] = bv
                        idx[i, py, px, c] = best
    return out_arr, idx_arr


def maxpool5_backward(const double[:, :, :, ::1] dout, const long long[:, :, :, ::1] idx,
                      Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = dout.shape[0], po = dout.shape[1], C = dout.shape[3]
    dx_arr = np.zeros((B, H, W, C), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, py, px, c, k
    with nogil:
        for i in range(B):
            for py in range(po):
                for px in range(po):
                    for c in range(C):
                        k = idx[i, py, px, c]
                        dx[i, py * 5 + k // 5, px * 5 + k % 5, c] += dout[i, py, px, c]
    return dx_arr


def bilinear_sample_box(const double[:, ::1] image, double x0, double y0,
                        double bw, double bh, Py_ssize_t out_w, Py_ssize_t out_h):
    cdef Py_ssize_t H = image.shape[0], W = image.shape[1]
    out_arr = np.zeros((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    cdef double sx_scale = bw / out_w
    cdef double sy_scale = bh / out_h
    cdef Py_ssize_t ox, oy, ix, iy, ix1, iy1
    cdef double sx, sy, cx, cy, fx, fy

    with nogil:
        for oy in range(out_h):
            sy = y0 + (oy + 0.5) * sy_scale - 0.5
            if sy < -0.5 or sy > H - 0.5:
                continue
            cy = sy
            if cy < 0.0:
                cy = 0.0
            elif cy > H - 1.0:
                cy = H - 1.0
            iy = <Py_ssize_t>floor(cy)
            fy = cy - iy
            iy1 = iy + 1
            if iy1 > H - 1:
                iy1 = H - 1
            for ox in range(out_w):
                sx = x0 + (ox + 0.5) * sx_scale - 0.5
                if sx < -0.5 or sx > W - 0.5:
                    continue
                cx = sx
                if cx < 0.0:
                    cx = 0.0
                elif cx > W - 1.0:
                    cx = W - 1.0
                ix = <Py_ssize_t>floor(cx)
                fx = cx - ix
                ix1 = ix + 1
                if ix1 > W - 1:
                    ix1 = W - 1
                out[oy, ox] = (1.0 - fy) * ((1.0 - fx) * image[iy, ix] + fx * image[iy, ix1]) \
                    + fy * ((1.0 - fx) * image[iy1, ix] + fx * image[iy1, ix1])
    return out_arr
