"""Adapter for Hugging Face ``transformers`` causal and masked language models.

Words are mapped to subwords through the fast tokenizer's character offsets
on the space-joined word sequence, so a word's tokenization depends on its
position just as it does in running text. Training mutates the weights in
place: ``train_step`` hands ownership to the returned handle and the old one
becomes unusable. Use ``clone_state`` to branch from a shared state.
"""

from __future__ import annotations

import copy
import math
import os
import warnings
from typing import Sequence

import numpy as np
import torch

from ..remapping import TokenString, merge
from . import BackendError, DivergenceError, ModelHandle, Span, TokenizedRegion

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def _import_transformers():
    try:
        import transformers
    except ImportError as exc:  # pragma: no cover - exercised only without the extra
        raise BackendError("the 'hf' backend needs the transformers package (pip install perturbkit[hf])") from exc
    return transformers


class HFModel(ModelHandle):
    backend_id = "hf"

    def __init__(self, model, tokenizer, mode: str, name: str = "custom", device: str = "cpu", optimizer=None):
        if mode not in ("causal", "masked"):
            raise ValueError("mode is 'causal' or 'masked'")
        if not getattr(tokenizer, "is_fast", False):
            raise BackendError("a fast tokenizer (with offset mapping) is required")
        self.model = model.to(device)
        self.model.eval()
        self.tokenizer = tokenizer
        self.mode = mode
        self.name = name
        self.device = device
        self.vocab_size = int(model.config.vocab_size)
        self.depth = int(model.config.num_hidden_layers)
        self._optimizer = optimizer
        self._consumed = False
        self.training_log: dict = {"step_losses": []}
        if mode == "masked" and tokenizer.mask_token_id is None:
            raise BackendError("masked mode needs a tokenizer with a mask token")

    def __repr__(self):
        return f"HFModel({self.name!r}, mode={self.mode!r})"

    def _check(self):
        if self._consumed:
            raise BackendError("this handle was consumed by train_step; use the returned handle")

    # -- tokenization ------------------------------------------------------------------

    def _encode(self, tokens: list):
        """Subword ids of the space-joined words and, per word, its subword index range."""
        text, spans, pos = [], [], 0
        for k, t in enumerate(tokens):
            if k:
                pos += 1
            spans.append((pos, pos + len(t.surface)))
            text.append(t.surface)
            pos += len(t.surface)
        enc = self.tokenizer(" ".join(text), add_special_tokens=False, return_offsets_mapping=True)
        ids, offsets = enc["input_ids"], enc["offset_mapping"]
        ranges = [[None, None] for _ in tokens]
        for j, (s, e) in enumerate(offsets):
            best, overlap = None, 0
            for w, (ws, we) in enumerate(spans):
                ov = min(e, we) - max(s, ws)
                if ov > overlap:
                    best, overlap = w, ov
            if best is None:
                continue
            r = ranges[best]
            r[0] = j if r[0] is None else r[0]
            r[1] = j + 1
        for t, r in zip(tokens, ranges):
            if r[0] is None:
                raise BackendError(f"word {t.surface!r} produced no subwords")
        return ids, ranges

    def _prefix(self) -> list[int]:
        tok = self.tokenizer
        if self.mode == "causal":
            first = tok.bos_token_id if tok.bos_token_id is not None else tok.eos_token_id
            return [first] if first is not None else []
        return [tok.cls_token_id] if tok.cls_token_id is not None else []

    def _suffix(self) -> list[int]:
        if self.mode == "masked" and self.tokenizer.sep_token_id is not None:
            return [self.tokenizer.sep_token_id]
        return []

    def tokenize(self, region: TokenString) -> TokenizedRegion:
        ids, ranges = self._encode(list(region.tokens))
        sub, bounds, single = [], [], []
        for s, e in ranges:
            bounds.append((len(sub), len(sub) + e - s))
            sub.extend(ids[s:e])
            single.append(e - s == 1)
        return TokenizedRegion(tuple(sub), tuple(bounds), tuple(single))

    def _layout(self, context: TokenString, region: TokenString, first_only: bool):
        tokens = merge(context, region)
        ids, ranges = self._encode(tokens)
        pre = self._prefix()
        region_set = set(region.tokens)
        slots = []
        for t, (s, e) in zip(tokens, ranges):
            if t in region_set:
                slots.extend((len(pre) + k, len(pre) + s, len(pre) + e) for k in range(s, e if not first_only else s + 1))
        return pre + ids + self._suffix(), slots

    # -- scoring -----------------------------------------------------------------------

    def _batch(self, seqs: list[list[int]]):
        L = max(len(s) for s in seqs)
        pad = self.tokenizer.pad_token_id if self.tokenizer.pad_token_id is not None else 0
        ids = torch.full((len(seqs), L), pad, dtype=torch.long)
        att = torch.zeros((len(seqs), L), dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            att[i, : len(s)] = 1
        return ids.to(self.device), att.to(self.device)

    def _span_logprobs(self, spans: Sequence[Span], flags: Sequence[bool]) -> torch.Tensor:
        """Per-span summed region log-probabilities (differentiable)."""
        out = torch.zeros(len(spans), dtype=torch.float64, device=self.device)
        seqs, targets, tpos, owner = [], [], [], []
        for si, ((ctx, reg), first_only) in enumerate(zip(spans, flags)):
            if not reg:
                continue
            if self.mode == "causal" and ctx and max(ctx.positions) > min(reg.positions):
                raise BackendError("causal scoring needs every region position after every context position")
            ids, slots = self._layout(ctx, reg, first_only)
            if self.mode == "causal":
                if slots[0][0] == 0:
                    raise BackendError("causal scoring of the first token needs a BOS token")
                seqs.append(ids)
                for flat, _, _ in slots:
                    tpos.append((len(seqs) - 1, flat - 1))
                    targets.append(ids[flat])
                    owner.append(si)
            else:
                for flat, _, wend in slots:
                    masked = list(ids)
                    for k in range(flat, wend):
                        masked[k] = self.tokenizer.mask_token_id
                    seqs.append(masked)
                    tpos.append((len(seqs) - 1, flat))
                    targets.append(ids[flat])
                    owner.append(si)
        if not targets:
            return out
        ids, att = self._batch(seqs)
        logits = self.model(input_ids=ids, attention_mask=att).logits
        rows = torch.tensor([r for r, _ in tpos], device=self.device)
        cols = torch.tensor([c for _, c in tpos], device=self.device)
        lp = torch.log_softmax(logits[rows, cols].double(), dim=-1)
        tl = lp[torch.arange(len(targets)), torch.tensor(targets, device=self.device)]
        return out.index_add(0, torch.tensor(owner, device=self.device), tl)

    def score_many(self, spans, *, first_subword_only=False) -> np.ndarray:
        self._check()
        flags = [first_subword_only] * len(spans) if isinstance(first_subword_only, bool) else list(first_subword_only)
        with torch.no_grad():
            return self._span_logprobs(list(spans), flags).cpu().numpy()

    def score_region(self, context, region, *, first_subword_only=False) -> float:
        return float(self.score_many([(context, region)], first_subword_only=first_subword_only)[0])

    def pll_score_region(self, context, region, *, first_subword_only=False) -> float:
        if self.mode != "masked":
            raise BackendError("pseudo-log-likelihood is defined for masked models")
        if not region:
            warnings.warn("empty region scores 0", stacklevel=2)
            return 0.0
        return self.score_region(context, region, first_subword_only=first_subword_only)

    # -- training ----------------------------------------------------------------------

    def train_step(self, positive, negative, learning_rate: float, *, first_subword_only=False,
                   token_weighting: str = "sum", remapping_id=None, **_):
        self._check()
        pos = [positive] if isinstance(positive, tuple) else list(positive)
        neg = None if negative is None else ([negative] if isinstance(negative, tuple) else list(negative))
        flags = [first_subword_only] * len(pos) if isinstance(first_subword_only, bool) else list(first_subword_only)
        if self._optimizer is None:
            self._optimizer = torch.optim.Adam(self.model.parameters(), lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
        for g in self._optimizer.param_groups:
            g["lr"] = learning_rate
        self.model.train(False)  # dropout off: the step is a deterministic function of the state
        spans = pos + (neg or [])
        lps = self._span_logprobs(spans, flags + (flags if neg else []))
        n = len(pos)
        if token_weighting == "mean":
            all_flags = flags + (flags if neg else [])
            counts = [len(r) if f else len(self.tokenize(r).subword_ids) for (_, r), f in zip(spans, all_flags)]
            lps = lps / torch.tensor([max(1, c) for c in counts], dtype=torch.float64, device=self.device)
        loss = -lps[:n].mean() + (lps[n:].mean() if neg else 0.0)
        if not torch.isfinite(loss):
            raise DivergenceError("non-finite perturbation loss", remapping_id)
        self._optimizer.zero_grad()
        loss.backward()
        self._optimizer.step()
        nxt = HFModel.__new__(HFModel)
        nxt.__dict__.update(self.__dict__)
        nxt.training_log = {"step_losses": self.training_log["step_losses"] + [float(loss.detach())]}
        nxt._consumed = False
        self._consumed = True
        return nxt

    def clone_state(self) -> "HFModel":
        self._check()
        return HFModel(copy.deepcopy(self.model), self.tokenizer, self.mode, self.name, self.device)

    def restore_state(self, state: "HFModel") -> "HFModel":
        self._check()
        self.model.load_state_dict(state.model.state_dict())
        self._optimizer = None
        return self

    def fingerprint(self) -> str:
        return f"hf:{self.name}:{self.mode}"

    # -- embeddings & perplexity -------------------------------------------------------

    def embed(self, context, region, layer: int) -> np.ndarray:
        self._check()
        if not 0 <= layer <= self.depth:
            raise BackendError(f"layer {layer} outside 0..{self.depth}")
        if not region:
            raise BackendError("cannot embed an empty region")
        ids, slots = self._layout(context, region, False)
        with torch.no_grad():
            out = self.model(input_ids=torch.tensor([ids], device=self.device), output_hidden_states=True)
        h = out.hidden_states[layer][0, [s[0] for s in slots]].double().mean(0).cpu().numpy()
        return h / np.linalg.norm(h)

    def perplexity(self, corpus) -> float:
        self._check()
        if self.mode != "causal":
            raise BackendError("perplexity needs a causal model")
        stream = []
        for ts in corpus:
            ids, _ = self._encode(list(ts.tokens))
            stream.extend(ids)
        if not stream:
            raise BackendError("empty corpus")
        window = int(getattr(self.model.config, "max_position_embeddings", 1024) or 1024) - 1
        pre = self._prefix()
        total, count = 0.0, 0
        with torch.no_grad():
            for start in range(0, len(stream), window):
                # without a BOS token the first subword of each chunk goes unscored
                chunk = pre + stream[start:start + window]
                logits = self.model(input_ids=torch.tensor([chunk], device=self.device)).logits[0]
                lp = torch.log_softmax(logits[:-1].double(), -1)
                tgt = torch.tensor(chunk[1:], device=self.device)
                total += float(lp[torch.arange(len(tgt)), tgt].sum())
                count += len(tgt)
        return math.exp(-total / count)


def load_backend(spec: dict) -> HFModel:
    """``{"name": "hf", "checkpoint": id, "revision": str, "mode": "causal"|"masked", "trained": bool}``.

    Untrained models are built from the checkpoint's configuration with
    ``seed``-controlled random initialization. Downloads are cached under
    ``$PERTURBKIT_CACHE`` when set.
    """
    tf = _import_transformers()
    ckpt = spec.get("checkpoint")
    if not ckpt:
        raise BackendError("hf backend needs a 'checkpoint' id")
    mode = spec.get("mode", "causal")
    kw = {"revision": spec["revision"]} if spec.get("revision") else {}
    cache = spec.get("cache_dir") or os.environ.get("PERTURBKIT_CACHE")
    if cache:
        kw["cache_dir"] = cache
    auto = tf.AutoModelForCausalLM if mode == "causal" else tf.AutoModelForMaskedLM
    try:
        tokenizer = tf.AutoTokenizer.from_pretrained(ckpt, use_fast=True, **kw)
        if spec.get("trained", True):
            model = auto.from_pretrained(ckpt, **kw)
        else:
            torch.manual_seed(int(spec.get("seed", 0)))
            model = auto.from_config(tf.AutoConfig.from_pretrained(ckpt, **kw))
    except OSError as exc:
        raise BackendError(f"cannot load checkpoint {ckpt!r}: {exc}") from exc
    model = model.double() if spec.get("dtype") == "float64" else model
    name = ckpt + (f"@{spec['revision']}" if spec.get("revision") else "") + ("" if spec.get("trained", True) else ":untrained")
    return HFModel(model, tokenizer, mode, name, spec.get("device", "cpu"))
