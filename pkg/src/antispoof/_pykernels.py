"""Numpy implementations of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def cqt_direct(x, centers, kern_re, kern_im, kern_off, half):
    nt = centers.shape[0]
    nk = kern_off.shape[0] - 1
    out = np.empty((nt, nk))
    for k in range(nk):
        lo, hi = kern_off[k], kern_off[k + 1]
        length = hi - lo
        windows = np.lib.stride_tricks.sliding_window_view(x, length)[centers - half[k]]
        re = windows @ kern_re[lo:hi]
        im = windows @ kern_im[lo:hi]
        out[:, k] = np.sqrt(re * re + im * im) / length
    return out


def gmm_log_joint(X, means, inv_var, log_const):
    # expanded quadratic form; callers keep features roughly centred
    quad = (X * X) @ inv_var.T - 2.0 * X @ (means * inv_var).T
    quad += np.sum(means * means * inv_var, axis=1)
    return log_const - 0.5 * quad
