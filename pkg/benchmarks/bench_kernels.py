"""Time the compiled kernels against the numpy fallback on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Prints one ``kernel=... impl=... seconds=...`` line per measurement, then the
speedup, and checks that both implementations agree.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from perturbkit import _kernels_py as py
from perturbkit.kernels import compiled_kernels as cy


def auc_inputs(n_cells: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    scores = np.sort(np.round(rng.normal(size=n_cells), 2))  # rounding creates ties
    is_pos = (rng.random(n_cells) < 0.3).astype(np.uint8)
    weights = rng.random(n_cells)
    return scores, is_pos, weights


def pearson_inputs(n: int, k: int, perms: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(k, n * n))
    values[:, :: n + 1] = np.nan
    idx = np.ascontiguousarray(np.argsort(rng.random((perms, k, n * n)), axis=2).astype(np.int64))
    return values, idx


def bench(fn, args, repeats: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeats))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels unavailable; build with `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    cases = [
        ("auc_sweep", auc_inputs(400_000)),
        ("gathered_pearson_stats", pearson_inputs(40, 7, 256)),
    ]
    for name, inputs in cases:
        f_py, f_cy = getattr(py, name), getattr(cy, name)
        out_py, out_cy = np.asarray(f_py(*inputs)), np.asarray(f_cy(*inputs))
        if not np.allclose(out_py, out_cy, rtol=1e-10, atol=1e-12, equal_nan=True):
            print(f"kernel={name} MISMATCH", file=sys.stderr)
            return 1
        t_py = bench(f_py, inputs, args.repeats)
        t_cy = bench(f_cy, inputs, args.repeats)
        print(f"kernel={name} impl=python seconds={t_py:.6f}")
        print(f"kernel={name} impl=cython seconds={t_cy:.6f}")
        print(f"kernel={name} speedup={t_py / t_cy:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
