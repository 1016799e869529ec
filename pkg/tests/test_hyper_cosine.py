from __future__ import annotations

import logging
import zlib

import numpy as np
import pytest

from perturbkit.analysis import best_layer_oracle, cosine_similarity_matrix
from perturbkit.backends import BackendError, DivergenceError, ModelHandle, TokenizedRegion
from perturbkit.harness.hyper import HyperGrid, hyper_search
from perturbkit.remapping import Item, LabeledExampleSet, Remapping, TokenString

WORDS = {"dog": "animal", "cat": "animal", "cow": "animal", "saw": "tool", "axe": "tool", "awl": "tool"}


class PlantedLM(ModelHandle):
    """A lookup-table model with a planted learning-rate response.

    Region score is the sum of per-word values. One training step at a
    learning rate in [1e-3, 1e-1] lowers every word of the original word's
    class; above that range every word is lowered (transfer collapses to a
    constant); below it nothing changes.
    """

    backend_id = "planted"
    mode = "masked"
    vocab_size = len(WORDS) + 1
    depth = 2

    def __init__(self, theta=None, layer_signal=(0.0, 1.0)):
        self.theta = dict(theta or {w: 0.0 for w in WORDS})
        self.layer_signal = layer_signal

    def tokenize(self, region):
        return TokenizedRegion(tuple(range(len(region))), tuple((k, k + 1) for k in range(len(region))),
                               (True,) * len(region))

    def score_region(self, context, region, *, first_subword_only=False):
        return float(sum(self.theta.get(w, 0.0) for w in region.words))

    pll_score_region = score_region

    def train_step(self, positive, negative, learning_rate, **options):
        theta = dict(self.theta)
        if learning_rate > 1e-1:
            theta = {w: v - 1.0 for w, v in theta.items()}
        elif learning_rate >= 1e-3:
            for _, region in negative:
                for w in region.words:
                    for other, c in WORDS.items():
                        if c == WORDS[w]:
                            theta[other] -= 1.0
        return PlantedLM(theta, self.layer_signal)

    def clone_state(self):
        return PlantedLM(self.theta, self.layer_signal)

    def restore_state(self, state):
        return state.clone_state()

    def embed(self, context, region, layer):
        if not 0 <= layer <= self.depth:
            raise BackendError("bad layer")
        w = region.words[0]
        rng = np.random.default_rng(zlib.crc32(f"{w}/{layer}".encode()))
        onehot = np.array([WORDS[w] == "animal", WORDS[w] == "tool"], dtype=float)
        s = self.layer_signal[layer - 1] if layer else 0.0
        v = np.concatenate([s * 10 * onehot, rng.normal(size=4)])
        return v / np.linalg.norm(v)

    def perplexity(self, corpus):
        raise BackendError("not a language model")


def planted_set():
    items = []
    for w, c in WORDS.items():
        ctx = TokenString.from_words(["the"])
        items.append(Item(w, Remapping(ctx, TokenString.from_words([w], start=2), ctx,
                                       TokenString.from_words(["glam"], start=2)), c))
    return LabeledExampleSet("planted", items)


def test_grid_validation():
    with pytest.raises(ValueError, match="empty"):
        HyperGrid([], [1])
    with pytest.raises(ValueError):
        HyperGrid([0.0], [1])
    assert HyperGrid([1e-2], [1, 2]).points() == [(1e-2, 1), (1e-2, 2)]


def test_single_point_grid_returns_it():
    with pytest.warns(UserWarning, match="identical"):
        res = hyper_search(PlantedLM(), planted_set(), HyperGrid([0.5], [3]))
    assert (res.learning_rate, res.steps) == (0.5, 3)


def test_planted_sweep_selects_middle_point(caplog):
    with caplog.at_level(logging.INFO, logger="perturbkit.harness.hyper"):
        with pytest.warns(UserWarning, match="identical"):
            res = hyper_search(PlantedLM(), planted_set(), HyperGrid([1e-4, 1e-2, 1.0], [1]))
    assert res.learning_rate == 1e-2 and res.auc == 1.0
    aucs = {row["learning_rate"]: row["auc"] for row in res.table}
    assert aucs[1e-4] == 0.5 and aucs[1.0] == 0.5
    assert sum("grid lr=" in r.message for r in caplog.records) == 3  # one audit line per point


def test_ties_break_to_lower_rate_then_fewer_steps():
    res = hyper_search(None, None, HyperGrid([0.3, 0.1], [2, 1]), score=lambda lr, s: 0.9)
    assert (res.learning_rate, res.steps) == (0.1, 1)


def test_all_points_diverging_raises():
    def boom(lr, steps):
        raise DivergenceError("nan")

    with pytest.raises(DivergenceError, match="every grid point"):
        hyper_search(None, None, HyperGrid([0.1], [1]), score=boom)


def test_partial_divergence_is_recorded():
    def score(lr, steps):
        if lr > 0.5:
            raise DivergenceError("nan")
        return 0.7

    res = hyper_search(None, None, HyperGrid([0.1, 1.0], [1]), score=score)
    assert res.learning_rate == 0.1
    assert [r["error"] is not None for r in res.table] == [False, True]


# -- cosine baseline ---------------------------------------------------------------------------


def test_cosine_matrix_is_symmetric_with_unit_diagonal():
    m = cosine_similarity_matrix(PlantedLM(), planted_set(), layer=-1)
    assert np.allclose(m.values, m.values.T) and np.allclose(np.diag(m.values), 1.0)
    assert m.meta["layer"] == 2
    with pytest.raises(BackendError):
        cosine_similarity_matrix(PlantedLM(), planted_set(), layer=5)


def test_best_layer_picks_planted_layer():
    res = best_layer_oracle(PlantedLM(layer_signal=(0.0, 1.0)), {"w": planted_set()})
    assert res.per_word["w"]["layer"] == 2 and res.per_word["w"]["auc"] == 1.0
    res = best_layer_oracle(PlantedLM(layer_signal=(1.0, 0.0)), {"w": planted_set()})
    assert res.per_word["w"]["layer"] == 1
    assert res.last_layer_mean_auc == res.per_word["w"]["aucs"][2]


def test_best_layer_ties_go_to_lower_layer():
    res = best_layer_oracle(PlantedLM(layer_signal=(1.0, 1.0)), [planted_set()])
    assert res.per_word["planted"]["layer"] == 1


def test_cosine_on_reference_model(masked_lm):
    from conftest import sentence_remapping

    items = [Item(f"x{k}", sentence_remapping(s, 1, "glam"), c) for k, (s, c) in enumerate(
        [("the dog runs", "a"), ("the cat runs", "a"), ("the bird sings", "b"), ("a bird runs", "b")])]
    res = best_layer_oracle(masked_lm, {"x": LabeledExampleSet("x", items)})
    assert set(res.per_word["x"]["aucs"]) == {1}
    assert 0.0 <= res.mean_auc <= 1.0
