# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``_pykernels``.

Both kernels put the loop over independent outputs (frames for the CQT,
components for the GMM) innermost. Every individual sum is still
accumulated in plain sequential order, so no reassociation is needed for
the compiler to vectorise and results do not depend on the build flags.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def cqt_direct(const double[::1] x, const long long[::1] centers,
               const double[::1] kern_re, const double[::1] kern_im,
               const long long[::1] kern_off, const long long[::1] half):
    """Magnitude of each bin's windowed inner product at each hop point.

    Frame ``t`` of bin ``k`` starts at ``centers[t] - half[k]`` and spans
    ``kern_off[k+1] - kern_off[k]`` samples, all inside ``x``. Result is
    ``|sum| / N_k`` with shape (T, K).
    """
    cdef Py_ssize_t nt = centers.shape[0]
    cdef Py_ssize_t nk = kern_off.shape[0] - 1
    out_arr = np.empty((nt, nk), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if nt == 0 or nk == 0:
        return out_arr
    cdef Py_ssize_t t, k, n, r, length, off, first
    cdef long long base = 0
    cdef Py_ssize_t rows = 0
    for k in range(nk):
        if half[k] > base:
            base = half[k]
    for k in range(nk):
        r = base - half[k] + kern_off[k + 1] - kern_off[k]
        if r > rows:
            rows = r
    # frames[r, t] = x[centers[t] - base + r]: one row per sample offset
    frames_arr = np.empty((rows, nt), dtype=np.float64)
    cdef double[:, ::1] frames = frames_arr
    acc_arr = np.empty((2, nt), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef double* re
    cdef double* im
    cdef const double* row
    cdef double kr, ki, v
    with nogil:
        for t in range(nt):
            for r in range(rows):
                frames[r, t] = x[centers[t] - base + r]
        re = &acc[0, 0]
        im = &acc[1, 0]
        for k in range(nk):
            off = kern_off[k]
            length = kern_off[k + 1] - off
            first = base - half[k]
            for t in range(nt):
                re[t] = 0.0
                im[t] = 0.0
            for n in range(length):
                kr = kern_re[off + n]
                ki = kern_im[off + n]
                row = &frames[first + n, 0]
                for t in range(nt):
                    v = row[t]
                    re[t] = re[t] + v * kr
                    im[t] = im[t] + v * ki
            for t in range(nt):
                out[t, k] = sqrt(re[t] * re[t] + im[t] * im[t]) / length
    return out_arr


cdef extern from *:
    """
    /* acc[k] += sum over the given dims of (x[d] - mu[d][k])^2 * iv[d][k], dims
       taken in order; four dims per pass keep acc out of memory in between */
    static void antispoof_quad_row(double *restrict acc, const double *restrict x,
                                   const double *restrict mu, const double *restrict iv,
                                   Py_ssize_t nd, Py_ssize_t nk)
    {
        Py_ssize_t d = 0, k;
        for (; d + 4 <= nd; d += 4) {
            const double x0 = x[d], x1 = x[d + 1], x2 = x[d + 2], x3 = x[d + 3];
            const double *m0 = mu + d * nk, *m1 = m0 + nk, *m2 = m1 + nk, *m3 = m2 + nk;
            const double *v0 = iv + d * nk, *v1 = v0 + nk, *v2 = v1 + nk, *v3 = v2 + nk;
            for (k = 0; k < nk; k++) {
                double a = acc[k], e;
                e = x0 - m0[k]; a = a + e * e * v0[k];
                e = x1 - m1[k]; a = a + e * e * v1[k];
                e = x2 - m2[k]; a = a + e * e * v2[k];
                e = x3 - m3[k]; a = a + e * e * v3[k];
                acc[k] = a;
            }
        }
        for (; d < nd; d++) {
            const double xd = x[d];
            const double *m = mu + d * nk, *v = iv + d * nk;
            for (k = 0; k < nk; k++) {
                double e = xd - m[k];
                acc[k] = acc[k] + e * e * v[k];
            }
        }
    }
    """
    void antispoof_quad_row(double* acc, const double* x, const double* mu,
                            const double* iv, Py_ssize_t nd, Py_ssize_t nk) nogil


def gmm_log_joint(const double[:, ::1] X, const double[:, ::1] means,
                  const double[:, ::1] inv_var, const double[::1] log_const):
    """``log w_k + log N(x_t; mu_k, diag(var_k))`` for every frame and component."""
    cdef Py_ssize_t nt = X.shape[0]
    cdef Py_ssize_t nd = X.shape[1]
    cdef Py_ssize_t nk = means.shape[0]
    out_arr = np.empty((nt, nk), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if nt == 0 or nk == 0:
        return out_arr
    # (D, K) layouts so the innermost loop runs over components
    cdef const double[:, ::1] mu_t = np.ascontiguousarray(np.asarray(means).T)
    cdef const double[:, ::1] iv_t = np.ascontiguousarray(np.asarray(inv_var).T)
    acc_arr = np.empty(nk, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t t, k
    with nogil:
        for t in range(nt):
            for k in range(nk):
                acc[k] = 0.0
            if nd > 0:
                antispoof_quad_row(&acc[0], &X[t, 0], &mu_t[0, 0], &iv_t[0, 0], nd, nk)
            for k in range(nk):
                out[t, k] = log_const[k] - 0.5 * acc[k]
    return out_arr
