from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from _oracles import auc_pair_oracle
from perturbkit.analysis import TransferMatrix, clusterability_auc, weighted_auc


def block_matrix(labels, within=2.0, between=0.0):
    lab = np.asarray(labels)
    return np.where(lab[:, None] == lab[None, :], within, between).astype(float)


def test_perfect_block_matrix_gives_one():
    labels = ["a"] * 3 + ["b"] * 4
    res = clusterability_auc(block_matrix(labels), labels=labels)
    assert res.auc == 1.0
    assert res.positive_pairs == 3 * 2 + 4 * 3
    assert res.negative_pairs == 2 * 3 * 4


def test_inverted_block_gives_zero():
    labels = ["a", "a", "b", "b"]
    assert clusterability_auc(block_matrix(labels, 0.0, 1.0), labels=labels).auc == 0.0


def test_constant_matrix_is_half_with_warning():
    labels = ["a", "a", "b", "b"]
    with pytest.warns(UserWarning):
        assert clusterability_auc(np.ones((4, 4)), labels=labels).auc == 0.5


def test_hand_counted_example():
    # positives (off-diagonal, same class): 5, 3 ; negatives: 4, 1, 3, 0 (rows/cols mixed)
    v = np.array([[9.0, 5.0, 4.0], [3.0, 9.0, 1.0], [3.0, 0.0, 9.0]])
    labels = ["a", "a", "b"]
    # unweighted: pairs (5 vs 4,1,3,0) -> 4 wins; (3 vs 4,1,3,0) -> 2 wins + 1 tie
    res = clusterability_auc(v, labels=labels, reweight=False)
    assert res.auc == pytest.approx(6.5 / 8, abs=1e-15)


def test_diagonal_inclusion_changes_result():
    v = np.array([[9.0, 5.0, 4.0], [3.0, 9.0, 1.0], [3.0, 0.0, 9.0]])
    labels = ["a", "a", "b"]
    with_diag = clusterability_auc(v, labels=labels, exclude_diagonal=False, reweight=False).auc
    assert with_diag == pytest.approx(auc_pair_oracle(v, labels, exclude_diagonal=False, reweight=False), abs=1e-12)


def test_label_map_pools_classes():
    labels = ["a", "a", "b", "c"]
    v = block_matrix(["a", "a", "x", "x"])
    res = clusterability_auc(v, labels=labels, label_map={"a": "a", "b": "x", "c": "x"})
    assert res.auc == 1.0


def test_single_class_is_error():
    with pytest.raises(ValueError):
        clusterability_auc(np.zeros((3, 3)), labels=["a"] * 3)


def test_nan_cells_skipped():
    labels = ["a", "a", "b", "b"]
    v = block_matrix(labels)
    v[0, 2] = np.nan
    res = clusterability_auc(v, labels=labels)
    assert res.auc == 1.0 and res.negative_pairs == 7


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("reweight", [False, True])
def test_matches_pair_oracle(seed, reweight):
    rng = np.random.default_rng(seed)
    n = 12
    v = np.round(rng.normal(size=(n, n)), 1)  # ties present
    labels = list(rng.choice(["x", "y", "z"], size=n))
    if len(set(labels)) < 2:
        labels[0], labels[1] = "x", "y"
    res = clusterability_auc(v, labels=labels, reweight=reweight)
    assert res.auc == pytest.approx(auc_pair_oracle(v, labels, reweight=reweight), abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_unweighted_matches_sklearn(seed):
    rng = np.random.default_rng(100 + seed)
    n = 15
    v = rng.normal(size=(n, n))
    labels = rng.integers(0, 3, size=n)
    mask = ~np.eye(n, dtype=bool)
    y = (labels[:, None] == labels[None, :])[mask]
    expected = roc_auc_score(y, v[mask])
    assert clusterability_auc(v, labels=list(labels), reweight=False).auc == pytest.approx(expected, abs=1e-12)


def test_weighted_auc_matches_sklearn_sample_weights():
    rng = np.random.default_rng(5)
    s = np.round(rng.normal(size=200), 1)
    y = rng.random(200) < 0.4
    w = rng.random(200)
    assert weighted_auc(s, y, w) == pytest.approx(roc_auc_score(y, s, sample_weight=w), abs=1e-12)


def test_reweighting_removes_class_size_bias():
    # class a (big) has strong within-transfer, class b (small) has weak within-transfer.
    labels = ["a"] * 6 + ["b"] * 2
    lab = np.array(labels)
    v = np.where(lab[:, None] == lab[None, :], np.where(lab[:, None] == "a", 3.0, 1.0), 2.0)
    un = clusterability_auc(v, labels=labels, reweight=False).auc
    rw = clusterability_auc(v, labels=labels, reweight=True).auc
    # unweighted: 30 of 32 positives are class a; reweighted: half the mass each
    assert un == pytest.approx(30 / 32, abs=1e-12)
    assert rw == pytest.approx(0.5, abs=1e-12)


balanced = st.integers(2, 4).flatmap(
    lambda k: st.tuples(st.just(k), st.integers(2, 5), st.integers(0, 2**31 - 1))
)


@given(balanced)
@settings(max_examples=60, deadline=None)
def test_balanced_classes_reweighted_equals_unweighted(params):
    k, size, seed = params
    rng = np.random.default_rng(seed)
    labels = [c for c in range(k) for _ in range(size)]
    v = np.round(rng.normal(size=(k * size, k * size)), 1)
    a = clusterability_auc(v, labels=labels, reweight=True).auc
    b = clusterability_auc(v, labels=labels, reweight=False).auc
    assert abs(a - b) <= 1e-12


@given(st.integers(0, 2**31 - 1), st.booleans())
@settings(max_examples=60, deadline=None)
def test_invariant_to_monotone_transform_and_relabeling(seed, reweight):
    rng = np.random.default_rng(seed)
    n = 9
    v = rng.normal(size=(n, n))
    labels = [0, 1, 2] * 3
    a = clusterability_auc(v, labels=labels, reweight=reweight).auc
    b = clusterability_auc(np.exp(3 * v) + 1, labels=labels, reweight=reweight).auc
    perm = rng.permutation(n)
    c = clusterability_auc(v[np.ix_(perm, perm)], labels=[labels[i] for i in perm], reweight=reweight).auc
    d = clusterability_auc(v, labels=[f"c{x}" for x in labels], reweight=reweight).auc
    assert 0.0 <= a <= 1.0
    assert math.isclose(a, b, abs_tol=1e-12) and math.isclose(a, c, abs_tol=1e-12) and a == d


def test_accepts_transfer_matrix():
    labels = ["a", "a", "b"]
    tm = TransferMatrix(block_matrix(labels), ["1", "2", "3"], labels)
    assert clusterability_auc(tm).auc == 1.0
    assert clusterability_auc(tm).to_dict()["reweighted"] is True
