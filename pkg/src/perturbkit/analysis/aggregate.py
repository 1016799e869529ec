"""Factorial aggregation of effect records with balanced marginals."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from ..perturbation import EffectRecord
from .matrix import TransferMatrix, symmetrize
from .permutation import difference_test


@dataclass
class LevelDifference:
    factor: str
    level_a: str
    level_b: str
    difference: float
    p_value: float | None
    alternative: str


@dataclass
class EffectTable:
    group_by: tuple[str, ...]
    balanced: bool
    cells: dict[tuple, tuple[float, int]]  # factor combination -> (mean, count)
    marginals: dict[str, dict[str, float]]
    differences: list[LevelDifference] = field(default_factory=list)
    grand_mean: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "group_by": list(self.group_by),
            "balanced": self.balanced,
            "grand_mean": self.grand_mean,
            "cells": [
                {**dict(zip(self.group_by, key)), "mean": m, "count": c}
                for key, (m, c) in sorted(self.cells.items())
            ],
            "marginals": self.marginals,
            "differences": [vars(d) for d in self.differences],
        }


def _factor(record: EffectRecord, name: str) -> str:
    try:
        return str(record.metadata[name])
    except KeyError:
        raise KeyError(f"record {record.train_id}->{record.eval_id} lacks factor {name!r}") from None


def _balanced_mean(values: np.ndarray, cells: np.ndarray) -> float:
    sums = np.bincount(cells, weights=values)
    counts = np.bincount(cells)
    ok = counts > 0
    return float(np.mean(sums[ok] / counts[ok]))


def _stratified_test(y, level, strata, n_permutations, seed, alternative):
    """Balanced difference (level 0 minus level 1) with labels shuffled within strata."""
    order = np.argsort(strata, kind="stable")
    y, level, strata = y[order], level[order], strata[order]
    _, s = np.unique(strata, return_inverse=True)
    ncell = 2 * (s.max() + 1)

    def stat(lab):  # lab: (P, n)
        P = lab.shape[0]
        cell = (s * 2 + lab) + ncell * np.arange(P)[:, None]
        sums = np.bincount(cell.ravel(), weights=np.broadcast_to(y, lab.shape).ravel(), minlength=P * ncell)
        cnt = np.bincount(cell.ravel(), minlength=P * ncell)
        sums, cnt = sums.reshape(P, -1, 2), cnt.reshape(P, -1, 2)
        with np.errstate(invalid="ignore"):
            means = sums / cnt
        return np.nanmean(means[:, :, 0], axis=1) - np.nanmean(means[:, :, 1], axis=1)

    observed = float(stat(level[None])[0])
    if not n_permutations:
        return observed, None
    tol = 1e-12 * max(1.0, abs(observed))
    rng = np.random.default_rng(seed)
    hits = done = 0
    while done < n_permutations:
        reps = min(512, n_permutations - done)
        # random keys in [0, 1) offset by stratum keep each shuffle inside its stratum
        perm = np.argsort(rng.random((reps, y.size)) + 2.0 * s, axis=1)
        d = stat(level[perm])
        if alternative == "greater":
            hits += int((d >= observed - tol).sum())
        elif alternative == "less":
            hits += int((d <= observed + tol).sum())
        else:
            hits += int((np.abs(d) >= abs(observed) - tol).sum())
        done += reps
    return observed, (hits + 1) / (n_permutations + 1)


def aggregate_effects(
    records: Iterable[EffectRecord],
    group_by: Sequence[str],
    balanced: bool = True,
    n_permutations: int = 0,
    seed: int = 0,
    alternative: str = "two-sided",
) -> EffectTable:
    """Cell means over factor combinations, marginal level means and level differences.

    Balanced marginals give each factor combination equal weight (mean of
    cell means); unbalanced ones average records directly. With
    ``n_permutations > 0`` each pairwise level difference gets a permutation
    p-value; balanced tests shuffle levels within strata of the other factors.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    group_by = tuple(group_by)
    y = np.array([r.effect for r in records], dtype=np.float64)
    keys = [tuple(_factor(r, g) for g in group_by) for r in records]
    uniq = sorted(set(keys))
    cell_index = {k: i for i, k in enumerate(uniq)}
    cid = np.array([cell_index[k] for k in keys], dtype=np.int64)
    sums = np.bincount(cid, weights=y, minlength=len(uniq))
    counts = np.bincount(cid, minlength=len(uniq))
    cells = {k: (float(sums[i] / counts[i]), int(counts[i])) for k, i in cell_index.items()}
    grand = float(np.mean([m for m, _ in cells.values()])) if balanced else float(y.mean())

    marginals: dict[str, dict[str, float]] = {}
    differences: list[LevelDifference] = []
    for f_idx, f in enumerate(group_by):
        col = np.array([k[f_idx] for k in keys], dtype=object)
        levels = sorted(set(col))
        marg = {}
        for lv in levels:
            m = col == lv
            marg[lv] = _balanced_mean(y[m], cid[m]) if balanced else float(y[m].mean())
        marginals[f] = marg
        others = [i for i in range(len(group_by)) if i != f_idx]
        strata_keys = [tuple(k[i] for i in others) for k in keys]
        strata_index = {k: i for i, k in enumerate(sorted(set(strata_keys)))}
        strata = np.array([strata_index[k] for k in strata_keys], dtype=np.int64)
        for a, b in combinations(levels, 2):
            m = (col == a) | (col == b)
            if balanced:
                diff, p = _stratified_test(
                    y[m], (col[m] == b).astype(np.int64), strata[m], n_permutations, seed, alternative
                )
            elif n_permutations:
                diff, p = difference_test(y[col == a], y[col == b], n_permutations, seed, alternative)
            else:
                diff, p = float(y[col == a].mean() - y[col == b].mean()), None
            differences.append(LevelDifference(f, a, b, diff, p, alternative))
    return EffectTable(group_by, balanced, cells, marginals, differences, grand)


def matrix_to_records(
    matrix: TransferMatrix,
    symmetrized: bool = False,
    exclude_diagonal: bool = True,
) -> list[EffectRecord]:
    """One record per finite cell, annotated for factorial aggregation.

    Factors: ``relation`` (within/between class), ``train_class``,
    ``eval_class``, and every item factor prefixed with ``train_``/``eval_``.
    """
    if symmetrized:
        matrix = symmetrize(matrix)
    out = []
    n = matrix.n
    for i in range(n):
        for j in range(n):
            if exclude_diagonal and i == j:
                continue
            v = matrix.values[i, j]
            if not np.isfinite(v):
                continue
            ci, cj = matrix.class_labels[i], matrix.class_labels[j]
            meta = {"relation": "within" if ci == cj else "between", "train_class": ci, "eval_class": cj}
            for k, val in matrix.factors[i].items():
                meta[f"train_{k}"] = val
            for k, val in matrix.factors[j].items():
                meta[f"eval_{k}"] = val
            out.append(EffectRecord(matrix.item_ids[i], matrix.item_ids[j], float(v), 0, meta))
    return out
