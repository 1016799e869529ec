"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

Every criterion runs on the built-in reference LM and synthetic data.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np
import pytest

from _oracles import auc_pair_oracle, crs_oracle, finite_difference_check, null_matrices, planted_matrices
from conftest import CORPUS, EXTRA, prefix_remapping, random_remapping, small_model
from perturbkit.analysis import (
    LabelMultiset,
    baselined_transfer,
    build_transfer_matrices,
    build_transfer_matrix,
    clusterability_auc,
    crs_similarity,
    permutation_test,
)
from perturbkit.backends import load_backend
from perturbkit.harness import fillergap as fg
from perturbkit.harness.synthetic import SEPARATION_MODE, SEPARATION_PERTURBATION, make_grammar
from perturbkit.perturbation import PerturbationConfig, effect, effects, perturb, perturbation_loss

VOCAB = sorted({w for s in CORPUS for w in s.split()} | set(EXTRA))


@contextmanager
def criterion(capsys, name):
    detail: dict = {}
    ok = False
    try:
        yield detail
        ok = True
    finally:
        with capsys.disabled():
            facts = ", ".join(f"{k}={v}" for k, v in detail.items())
            print(f"\nACCEPTANCE [{'PASS' if ok else 'FAIL'}] {name}: {facts}")


def test_algebraic_identities(capsys, causal_lm, masked_lm):
    with criterion(capsys, "algebraic identities") as d:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        rs = [random_remapping(rng, VOCAB) for _ in range(1000)]
        for m in (causal_lm, masked_lm):
            assert np.all(effects(m, m, rs) == 0.0)
            assert np.all(effects(m, m.clone_state(), rs) == 0.0)
        d["zero_effect_remappings"] = 1000
        worst = 0.0
        for m in (causal_lm, masked_lm):
            for r in rs[:5]:
                p = perturb(m, r, PerturbationConfig(learning_rate=1e-2, steps=2))
                worst = max(worst, abs(effect(r, m, p) - (perturbation_loss(m, r) - perturbation_loss(p, r))))
                assert perturb(m, r, PerturbationConfig(learning_rate=0.0, steps=2)).state_equal(m)
        d["train_identity_max_err"] = f"{worst:.2e}"
        assert worst <= 1e-9
        d["seconds"] = round(time.perf_counter() - t0, 1)
        assert d["seconds"] < 60


def test_gradient_check(capsys):
    with criterion(capsys, "gradient check") as d:
        t0 = time.perf_counter()
        worst, checked = 0.0, 0
        for mode in ("causal", "masked"):
            m = small_model(mode, trained=False)
            rs = [prefix_remapping("the dog runs to the park", 1, "glam"),
                  prefix_remapping("a cat sleeps on the mat", 3, "dogs")]
            analytic, numeric = finite_difference_check(m, [r.alternate for r in rs], [r.original for r in rs],
                                                        n_params=64, seed=7)
            assert analytic.size >= 64
            checked += analytic.size
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / np.abs(analytic))))
        d["params_checked"] = checked
        d["max_rel_err"] = f"{worst:.2e}"
        assert worst <= 1e-4
        d["seconds"] = round(time.perf_counter() - t0, 1)
        assert d["seconds"] < 60


def test_auc_oracle(capsys):
    with criterion(capsys, "AUC oracle") as d:
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            labels = list(rng.choice(["a", "b", "c"], size=20))
            v = rng.normal(size=(20, 20))
            v[rng.random((20, 20)) < 0.1] = 0.0  # ties across classes
            for reweight in (True, False):
                got = clusterability_auc(v, labels=labels, reweight=reweight).auc
                worst = max(worst, abs(got - auc_pair_oracle(v, labels, reweight=reweight)))
        d["matrices"] = 100
        d["max_err"] = f"{worst:.2e}"
        assert worst <= 1e-9
        worst_bal = 0.0
        for _ in range(20):
            labels = list(rng.permutation(["a"] * 7 + ["b"] * 7 + ["c"] * 7))
            v = rng.normal(size=(21, 21))
            a = clusterability_auc(v, labels=labels, reweight=True).auc
            b = clusterability_auc(v, labels=labels, reweight=False).auc
            worst_bal = max(worst_bal, abs(a - b))
        d["balanced_max_diff"] = f"{worst_bal:.2e}"
        assert worst_bal <= 1e-12


def test_crs_oracle(capsys):
    with criterion(capsys, "CRS oracle") as d:
        rng = np.random.default_rng(5)
        words = list("abcdefghij")
        for _ in range(100):
            a, b = ({w: int(c) for w, c in zip(words, rng.integers(0, 4, size=10)) if c} for _ in range(2))
            a = a or {"a": 1}
            b = b or {"b": 1}
            ma, mb = LabelMultiset(a), LabelMultiset(b)
            assert crs_similarity(ma, mb) == float(crs_oracle(a, b))
            assert crs_similarity(ma, mb) == crs_similarity(mb, ma)
            assert crs_similarity(ma, ma) == 1.0
        d["pairs"] = 100


def separation_auc(seed: int, trained: bool) -> float:
    g = make_grammar(seed=seed)
    m = load_backend({"name": "reference", "config": {"mode": SEPARATION_MODE, "seed": seed}, "corpus": g.corpus,
                      "extra_words": g.vocab, "trained": trained})
    cfg = PerturbationConfig.from_dict({**SEPARATION_PERTURBATION, "seed": seed})
    return clusterability_auc(build_transfer_matrix(m, g.dataset, cfg)).auc


def test_trained_vs_untrained_separation(capsys):
    with criterion(capsys, "trained-vs-untrained separation") as d:
        t0 = time.perf_counter()
        trained = [separation_auc(s, True) for s in range(5)]
        untrained = [separation_auc(s, False) for s in range(10)]
        d["trained_min"] = round(min(trained), 3)
        d["untrained_range"] = (round(min(untrained), 3), round(max(untrained), 3))
        assert min(trained) >= 0.80
        assert all(0.35 <= a <= 0.65 for a in untrained)
        d["seconds"] = round(time.perf_counter() - t0, 1)
        assert d["seconds"] < 600


def test_permutation_calibration(capsys):
    with criterion(capsys, "permutation-test calibration") as d:
        rng = np.random.default_rng(2024)
        ps = np.array([permutation_test(null_matrices(rng), n_permutations=999, seed=s).p_value for s in range(200)])
        rate = float(np.mean(ps <= 0.05))
        d["null_rejection_rate"] = rate
        assert 0.02 <= rate <= 0.08
        res = permutation_test(planted_matrices(np.random.default_rng(5)), n_permutations=5000, seed=1)
        d["planted_p"] = f"{res.p_value:.2e}"
        assert res.p_value <= 0.001


def test_cmd_matrix_determinism(capsys, tmp_path):
    from perturbkit.cli import cmd_matrix

    with criterion(capsys, "cmd_matrix determinism") as d:
        cfg = {"seed": 7, "backend": {"name": "reference", "config": {"mode": "masked"}},
               "dataset": {"id": "synthetic"}, "perturbation": SEPARATION_PERTURBATION}
        a = cmd_matrix(cfg, out=str(tmp_path / "a"))["matrices"]["eval"].read_bytes()
        b = cmd_matrix(cfg, out=str(tmp_path / "b"))["matrices"]["eval"].read_bytes()
        d["csv_bytes"] = len(a)
        assert a == b


def test_fg_harness_contracts(capsys):
    with criterion(capsys, "FG harness contracts") as d:
        items = fg.demo_fg_items(per_condition=3, seed=0)
        train, evals = fg.fg_matrix_sets(items)
        by_id = {it.id: it for it in items}
        for t in train:
            src = by_id[t.id]
            assert t.remapping.region_original.words == [src.label_fg.split()[0]]
            assert t.remapping.region_alternate.words == [src.label_nonfg.split()[0]]
        d["train_items"] = len(train)
        m = load_backend({"name": "reference", "config": {"mode": "causal", "embedding_dim": 8, "hidden_dim": 12,
                                                          "train_epochs": 5}, "corpus": fg.fg_corpus(items),
                          "extra_words": fg.fg_vocab(items)})
        mats, recs = build_transfer_matrices(m, train, evals, PerturbationConfig(seed=0), evals_per_cell=2,
                                             group_by="condition", disjoint=True, return_records=True)
        for r in recs:
            assert fg.critical_region(by_id[r.train_id]) != fg.critical_region(by_id[r.eval_id])
        d["disjoint_records"] = len(recs)
        base = mats["fg"]
        assert np.all(baselined_transfer(base, base).values[np.isfinite(base.values)] == 0.0)
        with pytest.raises(fg.FgDataError):
            fg.build_fg_remappings([items[0]], "eval_fg", train_item=items[0])
