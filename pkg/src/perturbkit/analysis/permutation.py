"""Permutation tests: cross-matrix structure and level differences."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels


@dataclass
class PermutationResult:
    statistic: float
    p_value: float
    n_permutations: int
    mode: str
    n_valid: int  # replicates with a defined statistic

    def to_dict(self) -> dict:
        return asdict(self)


def _stack(matrices) -> np.ndarray:
    arrs = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in matrices]
    if len(arrs) < 2:
        raise ValueError("permutation test needs at least two matrices")
    shape = arrs[0].shape
    if len(shape) != 2 or shape[0] != shape[1] or any(a.shape != shape for a in arrs):
        raise ValueError("matrices must be square and of equal shape")
    out = np.stack(arrs).copy()
    n = shape[0]
    out[:, np.arange(n), np.arange(n)] = np.nan
    for a in out:
        off = a[np.isfinite(a)]
        if off.size < 2 or np.all(off == off[0]):
            raise ValueError("constant matrix: correlation undefined")
    return out


def mean_pairwise_correlation(matrices) -> float:
    """Mean Pearson correlation over all matrix pairs, diagonals excluded."""
    vals = _stack(matrices)
    k, n, _ = vals.shape
    flat = vals.reshape(k, n * n)
    idx = np.broadcast_to(np.arange(n * n), (1, k, n * n)).copy()
    return float(kernels.gathered_pearson_stats(flat, idx)[0])


def _column_indices(rng, k: int, n: int, reps: int) -> np.ndarray:
    # new[i, j] = old[i, perm[j]], an independent column permutation per matrix
    perms = rng.permuted(np.broadcast_to(np.arange(n), (reps, k, n)), axis=2)
    rows = np.arange(n)[:, None] * n
    return (rows[None, None] + perms[:, :, None, :]).reshape(reps, k, n * n)


def _full_indices(rng, k: int, n: int, reps: int) -> np.ndarray:
    base = np.arange(n * n)
    off = base[(base // n) != (base % n)]
    out = np.broadcast_to(base, (reps, k, n * n)).copy()
    out[:, :, off] = rng.permuted(np.broadcast_to(off, (reps, k, off.size)), axis=2)
    return out


def permutation_test(
    matrices,
    mode: str = "column",
    n_permutations: int = 10_000,
    seed: int = 0,
    chunk: int = 256,
) -> PermutationResult:
    """Is the shared structure across ``matrices`` stronger than chance?

    The statistic is the mean pairwise Pearson correlation of the flattened
    matrices with diagonals dropped. ``column`` permutes each matrix's columns
    independently; ``full`` shuffles each matrix's off-diagonal cells.
    ``p = (b + 1) / (n + 1)`` with ``b`` the replicates at or above the observed
    value; replicates with an undefined statistic count as below it.
    """
    if mode not in ("column", "full"):
        raise ValueError(f"unknown permutation mode {mode!r}")
    if n_permutations < 1:
        raise ValueError("n_permutations must be positive")
    vals = _stack(matrices)
    k, n, _ = vals.shape
    flat = np.ascontiguousarray(vals.reshape(k, n * n))
    observed = mean_pairwise_correlation(vals)
    make = _column_indices if mode == "column" else _full_indices
    rng = np.random.default_rng(seed)
    b = valid = 0
    done = 0
    while done < n_permutations:
        reps = min(chunk, n_permutations - done)
        stats = kernels.gathered_pearson_stats(flat, np.ascontiguousarray(make(rng, k, n, reps)))
        ok = np.isfinite(stats)
        valid += int(ok.sum())
        b += int((stats[ok] >= observed).sum())
        done += reps
    return PermutationResult(observed, (b + 1) / (n_permutations + 1), n_permutations, mode, valid)


def difference_test(
    a,
    b,
    n_permutations: int = 10_000,
    seed: int = 0,
    alternative: str = "two-sided",
) -> tuple[float, float]:
    """Label-shuffling test for ``mean(a) - mean(b)``; returns (difference, p).

    ``alternative`` is ``"two-sided"``, ``"greater"`` (a > b) or ``"less"``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both groups need at least one value")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    pooled = np.concatenate([a, b])
    observed = a.mean() - b.mean()
    # shuffled means reproduce the observed one only up to rounding
    tol = 1e-12 * max(1.0, abs(observed))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_permutations:
        reps = min(1024, n_permutations - done)
        shuf = rng.permuted(np.broadcast_to(pooled, (reps, pooled.size)), axis=1)
        d = shuf[:, : a.size].mean(1) - shuf[:, a.size :].mean(1)
        if alternative == "greater":
            hits += int((d >= observed - tol).sum())
        elif alternative == "less":
            hits += int((d <= observed + tol).sum())
        else:
            hits += int((np.abs(d) >= abs(observed) - tol).sum())
        done += reps
    return float(observed), (hits + 1) / (n_permutations + 1)
