# cython: language_level=3
"""Compiled hot kernels. Mirrors ``lvdsk._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY, isfinite

cnp.import_array()


cdef inline double _lse(double[::1] row, Py_ssize_t n) noexcept nogil:
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if row[i] > m:
            m = row[i]
    if not isfinite(m):
        return -INFINITY
    for i in range(n):
        s += exp(row[i] - m)
    return m + log(s)


def component_terms(const double[:, ::1] X, const double[:, ::1] means,
                    const double[:, ::1] inv_var, const double[::1] log_norm,
                    const double[::1] dof, bint student):
    cdef Py_ssize_t T = X.shape[0], D = X.shape[1], K = means.shape[0]
    cdef Py_ssize_t t, k, d
    cdef double acc, diff
    logpdf_arr = np.empty((T, K))
    maha_arr = np.empty((T, K))
    cdef double[:, ::1] logpdf = logpdf_arr
    cdef double[:, ::1] maha = maha_arr
    with nogil:
        for t in range(T):
            for k in range(K):
                acc = 0.0
                for d in range(D):
                    diff = X[t, d] - means[k, d]
                    acc = acc + diff * diff * inv_var[k, d]
                maha[t, k] = acc
                if student:
                    logpdf[t, k] = log_norm[k] - 0.5 * (dof[k] + D) * log1p(acc / dof[k])
                else:
                    logpdf[t, k] = log_norm[k] - 0.5 * acc
    return logpdf_arr, maha_arr


def bank_loglik(const double[:, ::1] X, const double[:, ::1] log_w,
                const double[:, :, ::1] means, const double[:, :, ::1] inv_var,
                const double[:, ::1] log_norm, const double[:, ::1] dof,
                bint student):
    cdef Py_ssize_t T = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t C = log_w.shape[0], K = log_w.shape[1]
    cdef Py_ssize_t t, c, k, d
    cdef double acc, diff, lp
    out_arr = np.empty((T, C))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] buf = np.empty(K)
    with nogil:
        for t in range(T):
            for c in range(C):
                for k in range(K):
                    acc = 0.0
                    for d in range(D):
                        diff = X[t, d] - means[c, k, d]
                        acc = acc + diff * diff * inv_var[c, k, d]
                    if student:
                        lp = log_norm[c, k] - 0.5 * (dof[c, k] + D) * log1p(acc / dof[c, k])
                    else:
                        lp = log_norm[c, k] - 0.5 * acc
                    buf[k] = lp + log_w[c, k]
                out[t, c] = _lse(buf, K)
    return out_arr


def log_posterior(const double[:, ::1] log_joint):
    cdef Py_ssize_t T = log_joint.shape[0], C = log_joint.shape[1]
    cdef Py_ssize_t t, c
    cdef double m, s
    post_arr = np.empty((T, C))
    ll_arr = np.empty(T)
    cdef double[:, ::1] post = post_arr
    cdef double[::1] ll = ll_arr
    with nogil:
        for t in range(T):
            m = -INFINITY
            for c in range(C):
                if log_joint[t, c] > m:
                    m = log_joint[t, c]
            if not isfinite(m):
                ll[t] = -INFINITY
                for c in range(C):
                    post[t, c] = 0.0
                continue
            s = 0.0
            for c in range(C):
                s += exp(log_joint[t, c] - m)
            ll[t] = m + log(s)
            for c in range(C):
                post[t, c] = exp(log_joint[t, c] - ll[t])
    return post_arr, ll_arr
