# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; semantics mirror ``_kernels_py`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport NAN, isnan, sqrt

cnp.import_array()


def auc_sweep(const double[::1] scores, const unsigned char[::1] is_pos, const double[::1] weights):
    """Tie-aware weighted Mann-Whitney sweep over ascending ``scores``.

    Returns ``(numerator, positive_weight, negative_weight)``; ties count 1/2.
    """
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef double num = 0.0, neg_below = 0.0, gp, gn, tp = 0.0, tn = 0.0, s
    while i < n:
        s = scores[i]
        gp = 0.0
        gn = 0.0
        j = i
        while j < n and scores[j] == s:
            if is_pos[j]:
                gp += weights[j]
            else:
                gn += weights[j]
            j += 1
        num += gp * (neg_below + 0.5 * gn)
        neg_below += gn
        tp += gp
        tn += gn
        i = j
    return num, tp, tn


def gathered_pearson_stats(const double[:, ::1] values, const cnp.int64_t[:, :, ::1] idx):
    """Mean pairwise Pearson correlation for each gathered replicate.

    Replicate ``p`` views matrix ``a`` as ``values[a, idx[p, a, :]]``; NaN cells
    are dropped pairwise. A replicate with any undefined correlation is NaN.
    """
    cdef Py_ssize_t P = idx.shape[0], k = idx.shape[1], m = idx.shape[2]
    cdef Py_ssize_t p, a, b, c, n
    cdef double x, y, sx, sy, mx, my, sxx, syy, sxy, tot, r
    cdef bint bad
    out = np.empty(P, dtype=np.float64)
    cdef double[::1] res = out
    for p in range(P):
        tot = 0.0
        bad = False
        for a in range(k):
            for b in range(a + 1, k):
                n = 0
                sx = 0.0
                sy = 0.0
                for c in range(m):
                    x = values[a, idx[p, a, c]]
                    y = values[b, idx[p, b, c]]
                    if isnan(x) or isnan(y):
                        continue
                    n += 1
                    sx += x
                    sy += y
                if n < 2:
                    bad = True
                    continue
                mx = sx / n
                my = sy / n
                sxx = 0.0
                syy = 0.0
                sxy = 0.0
                for c in range(m):
                    x = values[a, idx[p, a, c]]
                    y = values[b, idx[p, b, c]]
                    if isnan(x) or isnan(y):
                        continue
                    sxx += (x - mx) * (x - mx)
                    syy += (y - my) * (y - my)
                    sxy += (x - mx) * (y - my)
                if sxx <= 0.0 or syy <= 0.0:
                    bad = True
                    continue
                r = sxy / sqrt(sxx * syy)
                tot += r
        res[p] = NAN if bad else tot / (k * (k - 1) / 2)
    return out
