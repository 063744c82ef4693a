# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; signature-identical to ``_kernels_py``.

Reductions accumulate strictly left to right, so results are bit-stable
run to run. Matrix products are not reimplemented here: NumPy's BLAS is
both faster and already deterministic for fixed shapes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, log, sqrt

cnp.import_array()

NAME = "cython"

cdef double INV_SQRT2 = 0.7071067811865475244008443621
cdef double INV_SQRT_2PI = 0.3989422804014326779399460599


def all_finite(x):
    # Bandwidth-bound; NumPy's SIMD isfinite beats a scalar loop here.
    return bool(np.isfinite(x).all())


def softmax_fwd(x):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty((xv.shape[0], xv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, rows = xv.shape[0], cols = xv.shape[1]
    cdef double m, s
    for i in range(rows):
        m = xv[i, 0]
        for j in range(1, cols):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(cols):
            out[i, j] = exp(xv[i, j] - m)
            s += out[i, j]
        for j in range(cols):
            out[i, j] /= s
    return out_arr


def softmax_bwd(y, gy):
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    gx_arr = np.empty((yv.shape[0], yv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j, rows = yv.shape[0], cols = yv.shape[1]
    cdef double inner
    for i in range(rows):
        inner = 0.0
        for j in range(cols):
            inner += gv[i, j] * yv[i, j]
        for j in range(cols):
            gx[i, j] = yv[i, j] * (gv[i, j] - inner)
    return gx_arr


def layernorm_fwd(x, gamma, beta, double eps):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t i, j, rows = xv.shape[0], cols = xv.shape[1]
    y_arr = np.empty((rows, cols), dtype=np.float64)
    xhat_arr = np.empty((rows, cols), dtype=np.float64)
    istd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] istd = istd_arr
    cdef double mu, var, d, inv
    for i in range(rows):
        mu = 0.0
        for j in range(cols):
            mu += xv[i, j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = xv[i, j] - mu
            var += d * d
        var /= cols
        inv = 1.0 / sqrt(var + eps)
        istd[i] = inv
        for j in range(cols):
            xhat[i, j] = (xv[i, j] - mu) * inv
            y[i, j] = xhat[i, j] * gv[j] + bv[j]
    return y_arr, xhat_arr, istd_arr


def layernorm_bwd(gy, xhat, inv_std, gamma):
    cdef double[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, ::1] xh = np.ascontiguousarray(xhat, dtype=np.float64)
    cdef double[::1] istd = np.ascontiguousarray(inv_std, dtype=np.float64)
    cdef double[::1] gam = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t i, j, rows = gv.shape[0], cols = gv.shape[1]
    gx_arr = np.empty((rows, cols), dtype=np.float64)
    dgamma_arr = np.zeros(cols, dtype=np.float64)
    dbeta_arr = np.zeros(cols, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double mean_g, mean_gx, gxh
    for i in range(rows):
        mean_g = 0.0
        mean_gx = 0.0
        for j in range(cols):
            gxh = gv[i, j] * gam[j]
            mean_g += gxh
            mean_gx += gxh * xh[i, j]
            dgamma[j] += gv[i, j] * xh[i, j]
            dbeta[j] += gv[i, j]
        mean_g /= cols
        mean_gx /= cols
        for j in range(cols):
            gx[i, j] = istd[i] * (gv[i, j] * gam[j] - mean_g - xh[i, j] * mean_gx)
    return gx_arr, dgamma_arr, dbeta_arr


def gelu_fwd(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out_arr = np.empty_like(arr)
    cdef double[::1] xv = arr.reshape(-1)
    cdef double[::1] out = out_arr.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        out[i] = 0.5 * xv[i] * (1.0 + erf(xv[i] * INV_SQRT2))
    return out_arr


def gelu_bwd(x, gy):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    gy_arr = np.ascontiguousarray(gy, dtype=np.float64)
    gx_arr = np.empty_like(arr)
    cdef double[::1] xv = arr.reshape(-1)
    cdef double[::1] gv = gy_arr.reshape(-1)
    cdef double[::1] gx = gx_arr.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(xv[i] * INV_SQRT2))
        pdf = exp(-0.5 * xv[i] * xv[i]) * INV_SQRT_2PI
        gx[i] = gv[i] * (cdf + xv[i] * pdf)
    return gx_arr


def cross_entropy_fwd(logits, gold, mask):
    cdef double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef cnp.int64_t[::1] gv = np.ascontiguousarray(gold, dtype=np.int64)
    cdef double[::1] mv = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t i, j, rows = lv.shape[0], cols = lv.shape[1]
    probs_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef double m, s, nll = 0.0
    for i in range(rows):
        m = lv[i, 0]
        for j in range(1, cols):
            if lv[i, j] > m:
                m = lv[i, j]
        s = 0.0
        for j in range(cols):
            probs[i, j] = exp(lv[i, j] - m)
            s += probs[i, j]
        for j in range(cols):
            probs[i, j] /= s
        if mv[i] > 0.0:
            nll -= log(probs[i, gv[i]]) * mv[i]
    return nll, probs_arr


def cross_entropy_bwd(probs, gold, mask, double scale):
    cdef double[:, ::1] pv = np.ascontiguousarray(probs, dtype=np.float64)
    cdef cnp.int64_t[::1] gv = np.ascontiguousarray(gold, dtype=np.int64)
    cdef double[::1] mv = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t i, j, rows = pv.shape[0], cols = pv.shape[1]
    gx_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double w
    for i in range(rows):
        w = mv[i] * scale
        for j in range(cols):
            gx[i, j] = pv[i, j] * w
        gx[i, gv[i]] -= w
    return gx_arr


def masked_mean_fwd(x, mask, counts):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(mask, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(counts, dtype=np.float64)
    cdef Py_ssize_t b, s, d
    cdef Py_ssize_t nb = xv.shape[0], ns = xv.shape[1], nd = xv.shape[2]
    out_arr = np.zeros((nb, nd), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double w
    for b in range(nb):
        for s in range(ns):
            w = mv[b, s]
            if w != 0.0:
                for d in range(nd):
                    out[b, d] += xv[b, s, d] * w
        for d in range(nd):
            out[b, d] /= cv[b]
    return out_arr


def masked_mean_bwd(gy, mask, counts):
    cdef double[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(mask, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(counts, dtype=np.float64)
    cdef Py_ssize_t b, s, d
    cdef Py_ssize_t nb = gv.shape[0], ns = mv.shape[1], nd = gv.shape[1]
    gx_arr = np.empty((nb, ns, nd), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double w
    for b in range(nb):
        for s in range(ns):
            w = mv[b, s] / cv[b]
            for d in range(nd):
                gx[b, s, d] = gv[b, d] * w
    return gx_arr


def embedding_bwd(gtable, ids, gy):
    cdef double[:, ::1] gt = gtable
    cdef cnp.int64_t[::1] iv = np.ascontiguousarray(ids, dtype=np.int64)
    cdef double[:, ::1] gv = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t i, j, n = iv.shape[0], d = gv.shape[1]
    cdef Py_ssize_t row
    for i in range(n):
        row = iv[i]
        for j in range(d):
            gt[row, j] += gv[i, j]


def adam_update(param, grad, m, v, t, double lr, double beta1, double beta2,
                double eps):
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double bc1 = 1.0 - beta1**<double>t
    cdef double bc2 = 1.0 - beta2**<double>t
    cdef double mhat, vhat
    for i in range(n):
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * g[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = mv[i] / bc1
        vhat = vv[i] / bc2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
