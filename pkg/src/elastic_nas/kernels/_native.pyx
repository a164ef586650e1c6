# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled causal attention kernels.

Loops are arranged so the innermost index always walks a contiguous axis
(keys and values are pre-transposed per head), which lets the C compiler
vectorize the dot-product and axpy patterns.
"""

import numpy as np

cimport cython
from libc.math cimport exp, expf

ctypedef fused real:
    float
    double

BACKEND = "native"


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _fwd_one(const real* q, const real* kt, const real* v,
                   real* out, real* probs,
                   real scale, Py_ssize_t s, Py_ssize_t d) noexcept nogil:
    # q: (s, d); kt: (d, s); v: (s, d); out: (s, d); probs: (s, s)
    cdef Py_ssize_t i, j, c
    cdef real m, z, qc, p
    cdef real* row
    for i in range(s):
        row = probs + i * s
        for j in range(s):
            row[j] = 0
        for c in range(d):
            qc = q[i * d + c] * scale
            for j in range(i + 1):
                row[j] += qc * kt[c * s + j]
        m = row[0]
        for j in range(1, i + 1):
            if row[j] > m:
                m = row[j]
        z = 0
        if real is float:
            for j in range(i + 1):
                row[j] = expf(row[j] - m)
                z += row[j]
        else:
            for j in range(i + 1):
                row[j] = exp(row[j] - m)
                z += row[j]
        for j in range(i + 1):
            row[j] /= z
        for c in range(d):
            out[i * d + c] = 0
        for j in range(i + 1):
            p = row[j]
            for c in range(d):
                out[i * d + c] += p * v[j * d + c]


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _bwd_one(const real* q, const real* k, const real* vt,
                   const real* probs, const real* dout,
                   real* dq, real* dk, real* dv, real* ds,
                   real scale, Py_ssize_t s, Py_ssize_t d) noexcept nogil:
    # q,k,dout,dq,dk,dv: (s, d); vt: (d, s); probs, ds: (s, s)
    cdef Py_ssize_t i, j, c
    cdef real acc, row, p, g
    for j in range(s * d):
        dq[j] = 0
        dk[j] = 0
        dv[j] = 0
    # dV[j] += P[i,j] * dO[i]
    for i in range(s):
        for j in range(i + 1):
            p = probs[i * s + j]
            for c in range(d):
                dv[j * d + c] += p * dout[i * d + c]
    # dP[i,j] = dO[i] . V[j]; dS = P * (dP - rowdot(P, dP))
    for i in range(s):
        for j in range(i + 1):
            ds[i * s + j] = 0
        for c in range(d):
            g = dout[i * d + c]
            for j in range(i + 1):
                ds[i * s + j] += g * vt[c * s + j]
        row = 0
        for j in range(i + 1):
            row += probs[i * s + j] * ds[i * s + j]
        for j in range(i + 1):
            ds[i * s + j] = probs[i * s + j] * (ds[i * s + j] - row)
    # dQ[i] = scale * sum_j dS[i,j] K[j]; dK[j] = scale * sum_i dS[i,j] Q[i]
    for i in range(s):
        for j in range(i + 1):
            p = ds[i * s + j] * scale
            for c in range(d):
                dq[i * d + c] += p * k[j * d + c]
            for c in range(d):
                dk[j * d + c] += p * q[i * d + c]


def causal_attention_fwd(real[:, :, :, ::1] q, real[:, :, :, ::1] k,
                         real[:, :, :, ::1] v, double scale):
    cdef Py_ssize_t b = q.shape[0], h = q.shape[1], s = q.shape[2], d = q.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b, h, s, d), dtype=dtype)
    probs_arr = np.empty((b, h, s, s), dtype=dtype)
    kt_arr = np.ascontiguousarray(np.asarray(k).transpose(0, 1, 3, 2))
    cdef real[:, :, :, ::1] out = out_arr
    cdef real[:, :, :, ::1] probs = probs_arr
    cdef real[:, :, :, ::1] kt = kt_arr
    cdef Py_ssize_t i, n = b * h, sd = s * d, ss = s * s
    if n == 0 or sd == 0:
        return out_arr, probs_arr
    cdef const real* qp = &q[0, 0, 0, 0]
    cdef const real* ktp = &kt[0, 0, 0, 0]
    cdef const real* vp = &v[0, 0, 0, 0]
    cdef real* op = &out[0, 0, 0, 0]
    cdef real* pp = &probs[0, 0, 0, 0]
    cdef real sc = <real> scale
    with nogil:
        for i in range(n):
            _fwd_one(qp + i * sd, ktp + i * sd, vp + i * sd,
                     op + i * sd, pp + i * ss, sc, s, d)
    return out_arr, probs_arr


def causal_attention_bwd(real[:, :, :, ::1] q, real[:, :, :, ::1] k,
                         real[:, :, :, ::1] v, real[:, :, :, ::1] probs,
                         real[:, :, :, ::1] dout, double scale):
    cdef Py_ssize_t b = q.shape[0], h = q.shape[1], s = q.shape[2], d = q.shape[3]
    dtype = np.float32 if real is float else np.float64
    dq_arr = np.zeros((b, h, s, d), dtype=dtype)
    dk_arr = np.zeros((b, h, s, d), dtype=dtype)
    dv_arr = np.zeros((b, h, s, d), dtype=dtype)
    ds_arr = np.empty((s, s), dtype=dtype)
    vt_arr = np.ascontiguousarray(np.asarray(v).transpose(0, 1, 3, 2))
    cdef real[:, :, :, ::1] dq = dq_arr
    cdef real[:, :, :, ::1] dk = dk_arr
    cdef real[:, :, :, ::1] dv = dv_arr
    cdef real[:, :, :, ::1] vt = vt_arr
    cdef real[:, ::1] ds = ds_arr
    cdef Py_ssize_t i, n = b * h, sd = s * d, ss = s * s
    if n == 0 or sd == 0:
        return dq_arr, dk_arr, dv_arr
    cdef const real* qp = &q[0, 0, 0, 0]
    cdef const real* kp = &k[0, 0, 0, 0]
    cdef const real* vtp = &vt[0, 0, 0, 0]
    cdef const real* ppp = &probs[0, 0, 0, 0]
    cdef const real* dop = &dout[0, 0, 0, 0]
    cdef real* dqp = &dq[0, 0, 0, 0]
    cdef real* dkp = &dk[0, 0, 0, 0]
    cdef real* dvp = &dv[0, 0, 0, 0]
    cdef real* dsp = &ds[0, 0]
    cdef real sc = <real> scale
    with nogil:
        for i in range(n):
            _bwd_one(qp + i * sd, kp + i * sd, vtp + i * sd,
                     ppp + i * ss, dop + i * sd,
                     dqp + i * sd, dkp + i * sd, dvp + i * sd, dsp,
                     sc, s, d)
    return dq_arr, dk_arr, dv_arr
