from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perturbkit import _kernels_py as py
from perturbkit import kernels

cy = kernels.compiled_kernels
needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_implementation_flag_matches_loaded_module():
    assert kernels.IMPLEMENTATION == ("cython" if cy is not None else "python")


@needs_cython
@given(st.integers(1, 300), st.integers(0, 2**31 - 1))
@settings(max_examples=80, deadline=None)
def test_auc_sweep_agrees(n, seed):
    rng = np.random.default_rng(seed)
    scores = np.sort(np.round(rng.normal(size=n), 1))
    pos = (rng.random(n) < 0.5).astype(np.uint8)
    w = rng.random(n)
    a = np.array(py.auc_sweep(scores, pos, w))
    b = np.array(cy.auc_sweep(scores, pos, w))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_auc_sweep_empty():
    empty = np.zeros(0)
    assert py.auc_sweep(empty, np.zeros(0, np.uint8), empty) == (0.0, 0.0, 0.0)


@needs_cython
@given(st.integers(3, 9), st.integers(2, 5), st.integers(1, 8), st.integers(0, 2**31 - 1), st.booleans())
@settings(max_examples=80, deadline=None)
def test_gathered_pearson_agrees(n, k, reps, seed, with_nan):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(k, n * n))
    values[:, :: n + 1] = np.nan
    if with_nan:
        values[rng.random(values.shape) < 0.1] = np.nan
    idx = np.ascontiguousarray(np.argsort(rng.random((reps, k, n * n)), axis=2).astype(np.int64))
    a, b = py.gathered_pearson_stats(values, idx), cy.gathered_pearson_stats(values, idx)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12, equal_nan=True)


def test_gathered_pearson_matches_corrcoef():
    rng = np.random.default_rng(1)
    k, m = 4, 30
    values = rng.normal(size=(k, m))
    idx = np.broadcast_to(np.arange(m), (1, k, m)).copy()
    c = np.corrcoef(values)
    expected = c[np.triu_indices(k, 1)].mean()
    assert kernels.gathered_pearson_stats(values, idx)[0] == pytest.approx(expected, abs=1e-12)


def test_constant_gathered_vector_is_nan():
    values = np.vstack([np.ones(6), np.arange(6.0)])
    idx = np.broadcast_to(np.arange(6), (1, 2, 6)).copy()
    assert np.isnan(kernels.gathered_pearson_stats(values, idx)[0])
