"""Built-in tiny reference language models.

Two architectures, both in float64 so finite-difference checks are meaningful:

* ``causal``: feed-forward network over a fixed window of preceding tokens
  (embedding -> tanh -> tanh -> softmax).
* ``masked``: bidirectional self-attention blocks with learned positions,
  scored with the within-word left-to-right pseudo-log-likelihood.

Handles never mutate their parameters; every training step builds new tensors.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .._io import atomic_write_bytes, config_hash, write_json
from ..remapping import TokenString, merge
from . import BackendError, DivergenceError, ModelHandle, Span, TokenizedRegion
from .tokenizer import TokenizationError, WordPieceTokenizer

log = logging.getLogger(__name__)

DTYPE = torch.float64
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class ReferenceLMConfig:
    vocab: list[str]
    mode: str = "masked"
    embedding_dim: int = 32
    hidden_dim: int = 64
    # causal: number of preceding tokens seen; masked: maximum sequence length
    context_window: int | None = None
    seed: int = 0
    n_blocks: int = 1
    include_bos: bool = True
    train_epochs: int = 400
    train_learning_rate: float = 1e-2
    loss_threshold: float | None = None

    def __post_init__(self):
        if self.mode not in ("causal", "masked"):
            raise ValueError(f"mode must be 'causal' or 'masked', not {self.mode!r}")
        if self.context_window is None:
            self.context_window = 4 if self.mode == "causal" else 32
        for name in ("embedding_dim", "hidden_dim", "context_window", "n_blocks"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# -- parameter construction ---------------------------------------------------------


def _init_params(cfg: ReferenceLMConfig, vocab_size: int) -> dict[str, torch.Tensor]:
    gen = torch.Generator().manual_seed(int(cfg.seed))

    def normal(*shape, scale):
        return torch.randn(*shape, generator=gen, dtype=DTYPE) * scale

    d, h, V = cfg.embedding_dim, cfg.hidden_dim, vocab_size
    p: dict[str, torch.Tensor] = {"emb": normal(V, d, scale=1.0)}
    if cfg.mode == "causal":
        W = cfg.context_window
        p["w1"] = normal(W * d, h, scale=1 / math.sqrt(W * d))
        p["b1"] = torch.zeros(h, dtype=DTYPE)
        p["w2"] = normal(h, h, scale=1 / math.sqrt(h))
        p["b2"] = torch.zeros(h, dtype=DTYPE)
        p["out"] = normal(h, V, scale=1 / math.sqrt(h))
    else:
        p["pos"] = normal(cfg.context_window, d, scale=0.5)
        for b in range(cfg.n_blocks):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"{name}{b}"] = normal(d, d, scale=1 / math.sqrt(d))
            p[f"f1{b}"] = normal(d, h, scale=1 / math.sqrt(d))
            p[f"fb1{b}"] = torch.zeros(h, dtype=DTYPE)
            p[f"f2{b}"] = normal(h, d, scale=1 / math.sqrt(h))
            p[f"fb2{b}"] = torch.zeros(d, dtype=DTYPE)
        p["out"] = normal(d, V, scale=1 / math.sqrt(d))
    p["out_b"] = torch.zeros(V, dtype=DTYPE)
    return p


# -- forward passes -----------------------------------------------------------------


def _causal_hidden(p, windows: torch.Tensor) -> list[torch.Tensor]:
    n, W = windows.shape
    x = p["emb"][windows].reshape(n, -1)
    h1 = torch.tanh(x @ p["w1"] + p["b1"])
    h2 = torch.tanh(h1 @ p["w2"] + p["b2"])
    return [p["emb"][windows[:, -1]], h1, h2]


def _masked_hidden(p, seqs: torch.Tensor, pad: torch.Tensor, n_blocks: int) -> list[torch.Tensor]:
    L = seqs.shape[1]
    x = p["emb"][seqs] + p["pos"][:L]
    layers = [x]
    d = x.shape[-1]
    key_mask = pad[:, None, :]  # (n, 1, L) True where padding
    for b in range(n_blocks):
        z = F.layer_norm(x, (d,))
        q, k, v = z @ p[f"wq{b}"], z @ p[f"wk{b}"], z @ p[f"wv{b}"]
        att = (q @ k.transpose(1, 2)) / math.sqrt(d)
        att = att.masked_fill(key_mask, float("-inf")).softmax(-1)
        x = x + (att @ v) @ p[f"wo{b}"]
        z = F.layer_norm(x, (d,))
        x = x + torch.tanh(z @ p[f"f1{b}"] + p[f"fb1{b}"]) @ p[f"f2{b}"] + p[f"fb2{b}"]
        layers.append(x)
    return layers


def _logits_from(p, hidden: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "masked":
        hidden = F.layer_norm(hidden, (hidden.shape[-1],))
    return hidden @ p["out"] + p["out_b"]


# -- query compilation --------------------------------------------------------------


@dataclass
class _Queries:
    """Flattened scoring targets for one batch of (context, region) spans."""

    span_index: list[int] = field(default_factory=list)
    targets: list[int] = field(default_factory=list)
    windows: list[list[int]] = field(default_factory=list)  # causal
    seqs: list[list[int]] = field(default_factory=list)  # masked
    tpos: list[int] = field(default_factory=list)  # masked


class ReferenceLM(ModelHandle):
    backend_id = "reference"

    def __init__(
        self,
        config: ReferenceLMConfig,
        params: dict[str, torch.Tensor],
        tokenizer: WordPieceTokenizer | None = None,
        opt_state: dict | None = None,
        training_log: dict | None = None,
    ):
        self.config = config
        self.tokenizer = tokenizer or WordPieceTokenizer(config.vocab)
        self.params = params
        self.opt_state = opt_state
        self.training_log = training_log or {}
        self.mode = config.mode
        self.vocab_size = len(self.tokenizer)
        self.depth = 2 if self.mode == "causal" else config.n_blocks

    def __repr__(self):
        return f"ReferenceLM(mode={self.mode}, vocab={self.vocab_size}, seed={self.config.seed})"

    # -- tokenization ---------------------------------------------------------------

    def _word_ids(self, word: str) -> list[int]:
        try:
            return self.tokenizer.encode_word(word)
        except TokenizationError as exc:
            raise BackendError(str(exc)) from None

    def tokenize(self, region: TokenString) -> TokenizedRegion:
        ids: list[int] = []
        bounds = []
        single = []
        for tok in region:
            w = self._word_ids(tok.surface)
            bounds.append((len(ids), len(ids) + len(w)))
            single.append(len(w) == 1)
            ids.extend(w)
        return TokenizedRegion(tuple(ids), tuple(bounds), tuple(single))

    def _layout(self, context: TokenString, region: TokenString):
        """Subword sequence for ``context ∪ region`` plus region subword bookkeeping.

        Returns ``(ids, region_slots)`` where each slot is
        ``(flat_index, word_start, word_end)`` in ``ids`` (BOS included).
        """
        region_set = set(region.tokens)
        ids = [self.tokenizer.bos_id] if self.config.include_bos else []
        slots = []
        for tok in merge(context, region):
            w = self._word_ids(tok.surface)
            start = len(ids)
            ids.extend(w)
            if tok in region_set:
                slots.extend((start + k, start, start + len(w)) for k in range(len(w)))
        return ids, slots

    def _compile(self, spans: Sequence[Span], flags: Sequence[bool]) -> _Queries:
        q = _Queries()
        W = self.config.context_window
        for si, ((ctx, reg), first_only) in enumerate(zip(spans, flags)):
            if not reg:
                continue
            if self.mode == "causal" and ctx and max(ctx.positions) > min(reg.positions):
                raise BackendError(
                    "causal scoring needs every region position after every context position"
                )
            ids, slots = self._layout(ctx, reg)
            if first_only:
                slots = [s for s in slots if s[0] == s[1]]
            if self.mode == "causal":
                for flat, _, _ in slots:
                    left = ids[max(0, flat - W):flat]
                    q.windows.append([self.tokenizer.pad_id] * (W - len(left)) + left)
                    q.targets.append(ids[flat])
                    q.span_index.append(si)
            else:
                seq_ids = ids + [self.tokenizer.eos_id]
                if len(seq_ids) > self.config.context_window:
                    raise BackendError(
                        f"sequence of {len(seq_ids)} subwords exceeds context_window "
                        f"{self.config.context_window}"
                    )
                for flat, _, wend in slots:
                    masked = list(seq_ids)
                    # mask the current subword and every later subword of the same word
                    for k in range(flat, wend):
                        masked[k] = self.tokenizer.mask_id
                    q.seqs.append(masked)
                    q.tpos.append(flat)
                    q.targets.append(ids[flat])
                    q.span_index.append(si)
        return q

    def _target_logprobs(self, params, q: _Queries) -> torch.Tensor:
        if not q.targets:
            return torch.zeros(0, dtype=DTYPE)
        targets = torch.tensor(q.targets)
        if self.mode == "causal":
            hidden = _causal_hidden(params, torch.tensor(q.windows))[-1]
        else:
            seqs, pad = self._pad(q.seqs)
            h = _masked_hidden(params, seqs, pad, self.config.n_blocks)[-1]
            hidden = h[torch.arange(len(q.tpos)), torch.tensor(q.tpos)]
        logp = _logits_from(params, hidden, self.mode).log_softmax(-1)
        return logp.gather(1, targets[:, None])[:, 0]

    def _pad(self, seqs: list[list[int]]):
        L = max(len(s) for s in seqs)
        arr = torch.full((len(seqs), L), self.tokenizer.pad_id, dtype=torch.long)
        pad = torch.ones((len(seqs), L), dtype=torch.bool)
        for i, s in enumerate(seqs):
            arr[i, : len(s)] = torch.tensor(s)
            pad[i, : len(s)] = False
        return arr, pad

    # -- scoring ----------------------------------------------------------------------

    def score_many(self, spans, *, first_subword_only=False) -> np.ndarray:
        flags = [first_subword_only] * len(spans) if isinstance(first_subword_only, bool) else list(first_subword_only)
        q = self._compile(spans, flags)
        with torch.no_grad():
            lp = self._target_logprobs(self.params, q)
        out = torch.zeros(len(spans), dtype=DTYPE)
        if q.targets:
            out.index_add_(0, torch.tensor(q.span_index), lp)
        return out.numpy()

    def score_region(self, context, region, *, first_subword_only=False) -> float:
        if not region:
            return 0.0
        return float(self.score_many([(context, region)], first_subword_only=first_subword_only)[0])

    def pll_score_region(self, context, region, *, first_subword_only=False) -> float:
        if self.mode != "masked":
            raise BackendError("pseudo-log-likelihood requires a masked-mode model")
        if not region:
            warnings.warn("empty region: pseudo-log-likelihood is 0", stacklevel=2)
            return 0.0
        return self.score_region(context, region, first_subword_only=first_subword_only)

    def pll_trace(self, context, region) -> list[tuple[list[str], int, float]]:
        """Per-pass record ``(masked tokens, target index, log-prob)`` for auditing PLL."""
        q = self._compile([(context, region)], [False])
        with torch.no_grad():
            lp = self._target_logprobs(self.params, q)
        return [
            (self.tokenizer.decode(s), t, float(v)) for s, t, v in zip(q.seqs, q.tpos, lp)
        ]

    # -- training ---------------------------------------------------------------------

    def objective(
        self,
        params,
        positive: Sequence[Span],
        negative: Sequence[Span] | None,
        *,
        first_subword_only: Sequence[bool] | bool = False,
        token_weighting: str = "sum",
    ) -> torch.Tensor:
        """Mean over remappings of ``-log p(R_a|C_a) + log p(R_o|C_o)``.

        Both strings go through one batch; the original-side targets simply carry
        a negated coefficient, which flips their gradient sign.
        """
        m = len(positive)
        if negative is not None and len(negative) != m:
            raise ValueError("positive and negative lists differ in length")
        flags = [first_subword_only] * m if isinstance(first_subword_only, bool) else list(first_subword_only)
        spans = list(positive) + (list(negative) if negative is not None else [])
        q = self._compile(spans, flags + (flags if negative is not None else []))
        if not q.targets:
            return torch.zeros((), dtype=DTYPE)
        lp = self._target_logprobs(params, q)
        idx = torch.tensor(q.span_index)
        sign = torch.where(idx < m, -1.0, 1.0).to(DTYPE)
        if token_weighting == "mean":
            counts = torch.bincount(idx, minlength=len(spans)).to(DTYPE)
            coeff = sign / counts[idx]
        elif token_weighting == "sum":
            coeff = sign
        else:
            raise ValueError(f"token_weighting must be 'sum' or 'mean', not {token_weighting!r}")
        return (coeff * lp).sum() / m

    def gradient(self, positive, negative, **options) -> tuple[float, dict[str, torch.Tensor]]:
        params = {k: v.detach().clone().requires_grad_(True) for k, v in self.params.items()}
        loss = self.objective(params, positive, negative, **options)
        grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
        return float(loss.detach()), {
            k: (g if g is not None else torch.zeros_like(params[k])) for k, g in zip(params, grads)
        }

    def train_step(
        self,
        positive,
        negative,
        learning_rate: float,
        *,
        first_subword_only=False,
        token_weighting: str = "sum",
        remapping_id: str | None = None,
    ) -> "ReferenceLM":
        positive = _as_span_list(positive)
        negative = None if negative is None else _as_span_list(negative)
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        loss, grads = self.gradient(
            positive, negative, first_subword_only=first_subword_only, token_weighting=token_weighting
        )
        if not math.isfinite(loss) or not all(torch.isfinite(g).all() for g in grads.values()):
            raise DivergenceError(f"non-finite loss {loss} (remapping {remapping_id})", remapping_id)
        params, opt = adam_update(self.params, grads, self.opt_state, learning_rate)
        log_ = dict(self.training_log)
        log_.setdefault("step_losses", [])
        log_["step_losses"] = log_["step_losses"] + [loss]
        return ReferenceLM(self.config, params, self.tokenizer, opt, log_)

    # -- state --------------------------------------------------------------------------

    def clone_state(self) -> "ReferenceLM":
        """Independent copy with a fresh optimizer (each perturbation starts clean)."""
        params = {k: v.detach().clone() for k, v in self.params.items()}
        return ReferenceLM(self.config, params, self.tokenizer, None, {})

    def restore_state(self, state: "ReferenceLM") -> "ReferenceLM":
        if state.config.to_dict() != self.config.to_dict():
            raise BackendError("state belongs to a differently configured model")
        return state.clone_state()

    def replace_params(self, **arrays) -> "ReferenceLM":
        params = {k: v.detach().clone() for k, v in self.params.items()}
        for k, v in arrays.items():
            if k not in params:
                raise KeyError(k)
            params[k] = torch.as_tensor(np.asarray(v), dtype=DTYPE).reshape(params[k].shape).clone()
        return ReferenceLM(self.config, params, self.tokenizer, None, dict(self.training_log))

    def state_equal(self, other: "ReferenceLM") -> bool:
        """Bitwise equality of parameters."""
        return self.params.keys() == other.params.keys() and all(
            torch.equal(self.params[k], other.params[k]) for k in self.params
        )

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([v.detach().numpy().ravel() for v in self.params.values()])

    def fingerprint(self) -> str:
        return f"reference:{self.mode}:{config_hash(self.config.to_dict())}"

    # -- embeddings & perplexity ----------------------------------------------------------

    def embed(self, context, region, layer: int) -> np.ndarray:
        if not 0 <= layer <= self.depth:
            raise BackendError(f"layer {layer} outside 0..{self.depth}")
        if not region:
            raise BackendError("cannot embed an empty region")
        ids, slots = self._layout(context, region)
        flat = [s[0] for s in slots]
        with torch.no_grad():
            if self.mode == "causal":
                W = self.config.context_window
                windows = []
                for f in flat:
                    left = ids[max(0, f - W + 1): f + 1]
                    windows.append([self.tokenizer.pad_id] * (W - len(left)) + left)
                vecs = _causal_hidden(self.params, torch.tensor(windows))[layer]
            else:
                seqs, pad = self._pad([ids + [self.tokenizer.eos_id]])
                h = _masked_hidden(self.params, seqs, pad, self.config.n_blocks)[layer]
                vecs = h[0, flat]
        v = vecs.mean(0).numpy()
        return v / np.linalg.norm(v)

    def perplexity(self, corpus) -> float:
        if self.mode != "causal":
            raise BackendError("perplexity requires a causal-mode model")
        spans = []
        for s in corpus:
            ts = TokenString.from_words(s.split()) if isinstance(s, str) else s
            if ts:
                spans.append((TokenString(), ts))
        if not spans:
            raise BackendError("empty corpus")
        q = self._compile(spans, [False] * len(spans))
        with torch.no_grad():
            lp = self._target_logprobs(self.params, q)
        return float(torch.exp(-lp.mean()))

    # -- persistence ------------------------------------------------------------------------

    def save(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.bin`` (float64 little-endian blob) and ``<prefix>.json``."""
        prefix = Path(prefix)
        entries, chunks, offset = [], [], 0
        for name, t in self.params.items():
            arr = np.ascontiguousarray(t.detach().numpy(), dtype="<f8")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.size
        blob = prefix.with_suffix(".bin")
        manifest = prefix.with_suffix(".json")
        atomic_write_bytes(blob, b"".join(chunks))
        cfg = self.config.to_dict()
        write_json(
            manifest,
            {
                "backend": "reference",
                "config": cfg,
                "config_hash": config_hash(cfg),
                "seed": self.config.seed,
                "tensors": entries,
                "dtype": "float64-le",
                "training_log": {k: v for k, v in self.training_log.items() if k != "step_losses"},
            },
        )
        return blob, manifest

    @classmethod
    def load(cls, prefix) -> "ReferenceLM":
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        cfg = ReferenceLMConfig(**manifest["config"])
        if config_hash(cfg.to_dict()) != manifest["config_hash"]:
            raise BackendError("manifest config hash mismatch")
        flat = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8")
        params = {}
        for e in manifest["tensors"]:
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            arr = flat[e["offset"]: e["offset"] + n].reshape(e["shape"])
            params[e["name"]] = torch.tensor(arr.copy(), dtype=DTYPE)
        return cls(cfg, params, training_log=manifest.get("training_log"))


def _as_span_list(x) -> list[Span]:
    if isinstance(x, tuple) and len(x) == 2 and isinstance(x[0], TokenString):
        return [x]
    return list(x)


def adam_update(params, grads, state, lr: float):
    """One functional Adam step; returns new (params, state) without touching inputs."""
    b1, b2 = ADAM_BETAS
    if state is None:
        state = {"t": 0, "m": {k: torch.zeros_like(v) for k, v in params.items()},
                 "v": {k: torch.zeros_like(v) for k, v in params.items()}}
    t = state["t"] + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state["m"][k] + (1 - b1) * g
        v = b2 * state["v"][k] + (1 - b2) * g * g
        new_m[k], new_v[k] = m, v
        if lr == 0:
            new_p[k] = p.clone()
            continue
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new_p[k] = p - lr * mhat / (vhat.sqrt() + ADAM_EPS)
    return new_p, {"t": t, "m": new_m, "v": new_v}


# -- construction ---------------------------------------------------------------------


def _corpus_strings(corpus) -> list[TokenString]:
    out = []
    for s in corpus:
        out.append(TokenString.from_words(s.split()) if isinstance(s, str) else s)
    return out


def _training_queries(model: ReferenceLM, corpus: list[TokenString]) -> _Queries:
    """Every subword of every sentence as a target (next-token or single-mask)."""
    spans = [(TokenString(), s) for s in corpus if s]
    return model._compile(spans, [False] * len(spans))


def init_reference_lm(config: ReferenceLMConfig, corpus=None, *, trained: bool = True) -> ReferenceLM:
    """Build a reference LM; deterministic in ``config.seed``.

    With ``trained`` and a corpus, run full-batch Adam on every corpus target
    until the mean per-token loss drops below ``config.loss_threshold`` or
    ``config.train_epochs`` passes have been made.
    """
    tok = WordPieceTokenizer(config.vocab)
    model = ReferenceLM(config, _init_params(config, len(tok)), tok)
    if not trained:
        return model
    if not corpus:
        raise ValueError("a trained reference LM needs a nonempty corpus")
    sentences = _corpus_strings(corpus)
    missing = sorted({w for s in sentences for w in s.words if w not in tok})
    if missing:
        raise ValueError(f"corpus words not covered by config.vocab: {missing[:10]}")
    q = _training_queries(model, sentences)
    params = {k: v.clone() for k, v in model.params.items()}
    state = None
    loss_val = float("nan")
    epochs = 0
    for epochs in range(1, config.train_epochs + 1):
        leaf = {k: v.requires_grad_(True) for k, v in params.items()}
        loss = -model._target_logprobs(leaf, q).mean()
        grads = torch.autograd.grad(loss, list(leaf.values()))
        loss_val = float(loss.detach())
        if config.loss_threshold is not None and loss_val < config.loss_threshold:
            break
        params = {k: v.detach() for k, v in params.items()}
        params, state = adam_update(params, dict(zip(leaf, grads)), state, config.train_learning_rate)
    params = {k: v.detach() for k, v in params.items()}
    trained_model = ReferenceLM(config, params, tok, None, {"train_loss": loss_val, "train_epochs": epochs})
    if config.loss_threshold is not None and loss_val >= config.loss_threshold:
        warnings.warn(
            f"reference LM stopped at loss {loss_val:.4f} above threshold {config.loss_threshold}",
            stacklevel=2,
        )
    log.info("reference LM trained: loss=%.4f epochs=%d", loss_val, epochs)
    return trained_model


def load_backend(spec: dict) -> ReferenceLM:
    """Backend loader for ``{"name": "reference", ...}`` specs.

    Accepts ``state`` (a saved prefix), or ``config`` plus ``corpus`` (list of
    sentences or a path to a one-sentence-per-line file) and ``trained``.
    """
    if spec.get("state"):
        return ReferenceLM.load(spec["state"])
    cfg = dict(spec.get("config") or {})
    corpus = spec.get("corpus")
    if isinstance(corpus, str):
        corpus = [ln.strip() for ln in Path(corpus).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if "vocab" not in cfg:
        if not corpus:
            raise BackendError("reference backend needs config.vocab or a corpus")
        from .tokenizer import build_vocab

        cfg["vocab"] = build_vocab(corpus + list(spec.get("extra_words", ())))
    try:
        config = ReferenceLMConfig(**cfg)
    except TypeError as exc:
        raise BackendError(f"bad reference config: {exc}") from None
    return init_reference_lm(config, corpus, trained=spec.get("trained", True))
