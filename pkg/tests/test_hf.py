"""The transformers adapter, exercised on tiny randomly initialized models."""

from __future__ import annotations

import pytest

pytest.importorskip("transformers")
tokenizers = pytest.importorskip("tokenizers")

import numpy as np  # noqa: E402
import torch  # noqa: E402
from tokenizers.models import WordPiece  # noqa: E402
from tokenizers.pre_tokenizers import Whitespace  # noqa: E402
from transformers import BertConfig, BertForMaskedLM, GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast  # noqa: E402

from conftest import prefix_remapping, sentence_remapping  # noqa: E402
from perturbkit.backends import BackendError  # noqa: E402
from perturbkit.backends.hf import HFModel  # noqa: E402
from perturbkit.perturbation import PerturbationConfig, effect, perturb, perturbation_loss  # noqa: E402
from perturbkit.remapping import TokenString  # noqa: E402

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]"]
WORDS = ["the", "a", "dog", "cat", "runs", "sleeps", "to", "park", "on", "mat", "glam", "run", "##ning", "bl", "##ick"]


def tokenizer():
    vocab = {t: k for k, t in enumerate(SPECIALS + WORDS)}
    tok = tokenizers.Tokenizer(WordPiece(vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = Whitespace()
    return PreTrainedTokenizerFast(tokenizer_object=tok, pad_token="[PAD]", unk_token="[UNK]", cls_token="[CLS]",
                                   sep_token="[SEP]", mask_token="[MASK]", bos_token="[BOS]")


@pytest.fixture(scope="module")
def causal():
    torch.manual_seed(0)
    cfg = GPT2Config(vocab_size=len(SPECIALS) + len(WORDS), n_positions=32, n_embd=16, n_layer=2, n_head=2,
                     resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    return HFModel(GPT2LMHeadModel(cfg), tokenizer(), "causal", "tiny-gpt2")


@pytest.fixture(scope="module")
def masked():
    torch.manual_seed(0)
    cfg = BertConfig(vocab_size=len(SPECIALS) + len(WORDS), hidden_size=16, num_hidden_layers=2, num_attention_heads=2,
                     intermediate_size=32, max_position_embeddings=32, hidden_dropout_prob=0.0,
                     attention_probs_dropout_prob=0.0)
    return HFModel(BertForMaskedLM(cfg), tokenizer(), "masked", "tiny-bert")


def test_tokenize_splits_words_into_subwords(masked):
    t = masked.tokenize(TokenString.from_words(["dog", "running", "blick"]))
    assert len(t.subword_ids) == 5
    assert t.word_boundaries == ((0, 1), (1, 3), (3, 5))
    assert t.single_tokenized == (True, False, False)


def test_causal_score_is_sum_of_next_token_logprobs(causal):
    ctx = TokenString.from_words(["the", "dog"])
    reg = TokenString.from_words(["running"], start=2)
    ids = [causal.tokenizer.bos_token_id] + causal.tokenizer("the dog running", add_special_tokens=False)["input_ids"]
    with torch.no_grad():
        lp = torch.log_softmax(causal.model(torch.tensor([ids])).logits[0].double(), -1)
    expected = float(lp[2, ids[3]] + lp[3, ids[4]])
    assert causal.score_region(ctx, reg) == pytest.approx(expected, abs=1e-9)
    assert causal.score_region(ctx, reg, first_subword_only=True) == pytest.approx(float(lp[2, ids[3]]), abs=1e-9)


def test_masked_pll_masks_current_and_later_subwords(masked):
    tok = masked.tokenizer
    ctx = TokenString.from_words(["the", "dog"])
    reg = TokenString.from_words(["running"], start=2)
    ids = [tok.cls_token_id] + tok("the dog running", add_special_tokens=False)["input_ids"] + [tok.sep_token_id]
    total = 0.0
    for pos in (3, 4):
        x = list(ids)
        for k in range(pos, 5):
            x[k] = tok.mask_token_id
        with torch.no_grad():
            lp = torch.log_softmax(masked.model(torch.tensor([x])).logits[0, pos].double(), -1)
        total += float(lp[ids[pos]])
    assert masked.pll_score_region(ctx, reg) == pytest.approx(total, abs=1e-9)


@pytest.mark.parametrize("fixture,build", [("causal", prefix_remapping), ("masked", sentence_remapping)])
def test_identities(fixture, build, request):
    m = request.getfixturevalue(fixture)
    r = build("the dog runs to the park", 1, "glam")
    assert effect(r, m, m) == 0.0
    p = perturb(m, r, PerturbationConfig(learning_rate=1e-2, steps=2))
    assert abs(effect(r, m, p) - (perturbation_loss(m, r) - perturbation_loss(p, r))) <= 1e-9
    assert effect(r, m, p) > 0


def test_zero_learning_rate_is_state_identity(causal):
    r = prefix_remapping("the cat sleeps on the mat", 1, "glam")
    p = perturb(causal, r, PerturbationConfig(learning_rate=0.0, steps=3))
    for a, b in zip(causal.model.state_dict().values(), p.model.state_dict().values()):
        assert torch.equal(a, b)


def test_train_step_transfers_ownership(causal):
    base = causal.clone_state()
    r = prefix_remapping("the dog runs", 1, "cat")
    ctx, reg = r.context_original, r.region_original
    before = causal.score_region(ctx, reg)
    nxt = base.train_step([(r.context_alternate, r.region_alternate)], [(ctx, reg)], 1e-2)
    with pytest.raises(BackendError, match="consumed"):
        base.score_region(ctx, reg)
    assert nxt.score_region(ctx, reg) != before
    assert causal.score_region(ctx, reg) == before  # the source of the clone is untouched
    assert len(nxt.training_log["step_losses"]) == 1


def test_perplexity_and_mode_errors(causal, masked):
    corpus = [TokenString.from_words("the dog runs to the park".split())]
    ppl = causal.perplexity(corpus)
    assert ppl > 1.0 and causal.perplexity(corpus) == ppl
    with pytest.raises(BackendError):
        masked.perplexity(corpus)
    with pytest.raises(BackendError):
        causal.pll_score_region(corpus[0], TokenString.from_words(["dog"], start=9))
    with pytest.raises(BackendError):
        causal.perplexity([])


def test_embed_unit_norm_and_layer_range(masked):
    ctx = TokenString.from_words(["the"])
    reg = TokenString.from_words(["running"], start=1)
    for layer in range(masked.depth + 1):
        assert np.linalg.norm(masked.embed(ctx, reg, layer)) == pytest.approx(1.0)
    with pytest.raises(BackendError):
        masked.embed(ctx, reg, masked.depth + 1)
