"""Clusterability: ROC AUC of matrix cells as a same-class classifier."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import kernels


@dataclass
class ClusterabilityResult:
    auc: float
    reweighted: bool
    positive_pairs: int
    negative_pairs: int
    per_class_weights: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "reweighted": self.reweighted,
            "positive_pairs": self.positive_pairs,
            "negative_pairs": self.negative_pairs,
            "per_class_weights": {str(k): v for k, v in self.per_class_weights.items()},
        }


def weighted_auc(scores, is_positive, weights=None) -> float:
    """Weighted Mann-Whitney AUC, ties worth one half.

    Equals ``sum_{p,n} w_p w_n ([s_p > s_n] + [s_p == s_n] / 2) / (W_pos W_neg)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    w = np.ones_like(scores) if weights is None else np.asarray(weights, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    num, wp, wn = kernels.auc_sweep(
        np.ascontiguousarray(scores[order]),
        np.ascontiguousarray(pos[order], dtype=np.uint8),
        np.ascontiguousarray(w[order]),
    )
    if wp <= 0 or wn <= 0:
        raise ValueError("AUC needs both positive and negative cells")
    # rounding in the weight normalization can push a perfect score a hair past 1
    return min(1.0, max(0.0, num / (wp * wn)))


def pair_weights(labels_i: Sequence, labels_j: Sequence, same: np.ndarray):
    """Per-cell weights balancing classes inside the positive and negative sets.

    A positive cell of class ``c`` gets ``1/#positive cells of c``; a negative
    cell of ordered class pair ``(a, b)`` gets ``1/#negative cells of (a, b)``.
    Each set is then normalized to total weight one.
    """
    keys = [(a, a) if s else (a, b) for a, b, s in zip(labels_i, labels_j, same)]
    counts = Counter(keys)
    w = np.array([1.0 / counts[k] for k in keys])
    for mask in (same, ~same):
        total = w[mask].sum()
        if total > 0:
            w[mask] /= total
    per_class = {k: 1.0 / c for k, c in counts.items()}
    return w, per_class


def clusterability_auc(
    matrix,
    exclude_diagonal: bool = True,
    reweight: bool = True,
    labels: Sequence | None = None,
    label_map: Callable | dict | None = None,
) -> ClusterabilityResult:
    """AUC of the cells of ``matrix`` against the same-class indicator.

    ``matrix`` is a :class:`TransferMatrix` or a square array (then pass
    ``labels``). ``label_map`` regroups class labels before scoring, e.g. to
    pool several control classes. NaN cells (flagged trials) are skipped.
    """
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    labels = list(labels if labels is not None else matrix.class_labels)
    if label_map is not None:
        f = label_map.__getitem__ if isinstance(label_map, dict) else label_map
        labels = [f(c) for c in labels]
    n = values.shape[0]
    if values.shape != (n, n) or len(labels) != n:
        raise ValueError("need a square matrix with one label per row")
    if len(set(labels)) < 2:
        raise ValueError("clusterability needs at least two distinct classes")
    ii, jj = np.indices((n, n))
    keep = np.isfinite(values)
    if exclude_diagonal:
        keep &= ii != jj
    scores = values[keep]
    lab = np.asarray(labels, dtype=object)
    li, lj = lab[ii[keep]], lab[jj[keep]]
    same = li == lj
    if same.all() or not same.any():
        raise ValueError("need both within-class and between-class cells")
    if np.all(scores == scores[0]):
        warnings.warn("all matrix values identical; AUC is 0.5", stacklevel=2)
    if reweight:
        w, per_class = pair_weights(li, lj, same)
    else:
        w, per_class = None, {}
    auc = weighted_auc(scores, same, w)
    return ClusterabilityResult(
        auc=float(auc),
        reweighted=reweight,
        positive_pairs=int(same.sum()),
        negative_pairs=int((~same).sum()),
        per_class_weights=per_class,
    )
