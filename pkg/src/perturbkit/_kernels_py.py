"""Pure numpy versions of the compiled kernels (same signatures and semantics)."""

from __future__ import annotations

import numpy as np


def auc_sweep(scores, is_pos, weights):
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_pos, dtype=bool)
    w = np.asarray(weights, dtype=np.float64)
    if scores.size == 0:
        return 0.0, 0.0, 0.0
    # scores arrive sorted, so equal values are adjacent
    starts = np.flatnonzero(np.r_[True, scores[1:] != scores[:-1]])
    group = np.cumsum(np.r_[False, scores[1:] != scores[:-1]])
    n_groups = starts.size
    gp = np.bincount(group, weights=np.where(pos, w, 0.0), minlength=n_groups)
    gn = np.bincount(group, weights=np.where(pos, 0.0, w), minlength=n_groups)
    neg_below = np.concatenate(([0.0], np.cumsum(gn)[:-1]))
    num = float(np.sum(gp * (neg_below + 0.5 * gn)))
    return num, float(gp.sum()), float(gn.sum())


def gathered_pearson_stats(values, idx):
    values = np.asarray(values, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    P, k, m = idx.shape
    gathered = values[np.arange(k)[None, :, None], idx]  # (P, k, m)
    tot = np.zeros(P)
    bad = np.zeros(P, dtype=bool)
    for a in range(k):
        for b in range(a + 1, k):
            x, y = gathered[:, a], gathered[:, b]
            ok = ~(np.isnan(x) | np.isnan(y))
            n = ok.sum(1)
            with np.errstate(invalid="ignore", divide="ignore"):
                mx = np.where(ok, x, 0.0).sum(1) / n
                my = np.where(ok, y, 0.0).sum(1) / n
                dx = np.where(ok, x - mx[:, None], 0.0)
                dy = np.where(ok, y - my[:, None], 0.0)
                sxx = (dx * dx).sum(1)
                syy = (dy * dy).sum(1)
                sxy = (dx * dy).sum(1)
                r = sxy / np.sqrt(sxx * syy)
            pair_bad = (n < 2) | (sxx <= 0) | (syy <= 0)
            bad |= pair_bad
            tot += np.where(pair_bad, 0.0, r)
    out = tot / (k * (k - 1) / 2)
    out[bad] = np.nan
    return out
