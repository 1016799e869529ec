"""Two-class synthetic grammar for exercising the full pipeline on the reference LM.

Words of two classes (animals, tools) occur in class-specific frames in the
training corpus and in shared neutral frames. Evaluation items put each word
in a neutral frame and remap it to a nonce target, so class membership is only
recoverable from what a model learned about the word's distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..remapping import Item, LabeledExampleSet, parse_remapping

CLASS_WORDS = {
    "animal": ["cat", "dog", "cow", "pig", "fox", "owl", "bat", "rat", "hen", "elk"],
    "tool": ["saw", "axe", "pin", "nail", "drill", "file", "rake", "hoe", "awl", "vise"],
}
# X marks the word slot; cue words after X are the class-diagnostic tokens
PRE_FRAMES = {
    "animal": ["the furry X", "a small X", "my hungry X"],
    "tool": ["the sharp X", "a heavy X", "my rusty X"],
}
POST_FRAMES = {
    "animal": ["the X barks", "a X sleeps", "my X eats"],
    "tool": ["the X cuts", "a X breaks", "my X bends"],
}
NEUTRAL_FRAMES = ["i see the X", "we want a X", "look at the X", "they found a X", "she likes the X"]
NONCE = "glam"


@dataclass
class SyntheticGrammar:
    corpus: list[str]
    heldout: list[tuple[str, str, str]]  # (sentence, word class, diagnostic token)
    dataset: LabeledExampleSet
    vocab: list[str]
    diagnostic: dict[str, set[str]]


def _fill(frame: str, word: str) -> str:
    return frame.replace("X", word)


def make_grammar(
    words_per_class: int = 10,
    holdout_fraction: float = 0.2,
    seed: int = 0,
    target: str = NONCE,
    repeats: int = 1,
) -> SyntheticGrammar:
    """Corpus, held-out probes and the evaluation set (one item per word)."""
    rng = np.random.default_rng(seed)
    corpus, heldout = [], []
    words = {c: ws[:words_per_class] for c, ws in CLASS_WORDS.items()}
    for cls, ws in words.items():
        for w in ws:
            corpus.extend(_fill(f, w) for f in PRE_FRAMES[cls])
            corpus.extend(_fill(f, w) for f in NEUTRAL_FRAMES)
            for f in POST_FRAMES[cls]:
                sentence = _fill(f, w)
                if rng.random() < holdout_fraction:
                    heldout.append((sentence, cls, f.split()[-1]))
                else:
                    corpus.append(sentence)
    corpus = corpus * repeats
    items = []
    for cls, ws in words.items():
        for k, w in enumerate(ws):
            frame = NEUTRAL_FRAMES[k % len(NEUTRAL_FRAMES)]
            slot = frame.split().index("X") + 1
            rec = {
                "original_text": _fill(frame, w),
                "alternate_text": _fill(frame, target),
                "region_original_span": [slot, slot],
                "region_alternate_span": [slot, slot],
            }
            items.append(Item(f"{cls}-{w}", parse_remapping(rec), cls, {"frame": str(k % len(NEUTRAL_FRAMES))}))
    vocab = sorted({t for s in corpus for t in s.split()} | {target} | {s.split()[-1] for s, _, _ in heldout})
    diagnostic = {c: {f.split()[-1] for f in POST_FRAMES[c]} for c in words}
    return SyntheticGrammar(corpus, heldout, LabeledExampleSet("synthetic", items), vocab, diagnostic)


def heldout_accuracy(model, grammar: SyntheticGrammar) -> float:
    """Share of held-out sentences whose class-diagnostic token is predicted in-class.

    The diagnostic token is the last word; the model must rank some token of
    the right class's diagnostic set first given the (unseen) word.
    """
    from ..remapping import TokenString

    hits = 0
    cands = sorted(set().union(*grammar.diagnostic.values()))
    for sentence, cls, _ in grammar.heldout:
        words = sentence.split()
        ctx = TokenString.from_words(words[:-1])
        scores = {}
        for c in cands:
            reg = TokenString.from_words([c], start=len(words))
            scores[c] = model.score_region(ctx, reg)
        best = max(scores, key=scores.get)
        hits += best in grammar.diagnostic[cls]
    return hits / len(grammar.heldout)


# Chosen on tuning seeds 100-104 (masked reference LM), disjoint from the seeds
# the acceptance check evaluates.
SEPARATION_MODE = "masked"
SEPARATION_PERTURBATION = {"learning_rate": 3e-2, "steps": 1}

# Causal-mode perturbation for the perplexity selectivity check: the smallest
# single-step rate within 0.02 AUC of the best single-step rate on tuning seed
# 100 (1e-2 scores best there but moves corpus perplexity by up to 9%).
SELECTIVITY_PERTURBATION = {"learning_rate": 3e-3, "steps": 1}
