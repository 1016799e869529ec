"""Perturbation objective, perturb-then-evaluate trials and the transfer effect.

The perturbation loss on a remapping is the negative log-ratio of alternate
to original region probability; the effect of a perturbation on an evaluation
remapping is the log odds-ratio of alternate to original, after versus before.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .backends import DivergenceError, ModelHandle
from .remapping import Remapping


@dataclass(frozen=True)
class PerturbationConfig:
    learning_rate: float = 1e-2
    steps: int = 5
    loss_mode: str = "contrastive"  # or "positive_only"
    aggregation: str = "mean"
    seed: int = 0
    token_weighting: str = "sum"  # or "mean"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.loss_mode not in ("contrastive", "positive_only"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.aggregation != "mean":
            raise ValueError("only mean aggregation over remappings is supported")
        if self.token_weighting not in ("sum", "mean"):
            raise ValueError(f"unknown token_weighting {self.token_weighting!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class EffectRecord:
    train_id: str
    eval_id: str
    effect: float
    trial: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.effect):
            raise ValueError(f"non-finite effect for {self.train_id}->{self.eval_id}")


def _log_probs(model: ModelHandle, remappings: Sequence[Remapping]) -> tuple[np.ndarray, np.ndarray]:
    """(log p(R_a|C_a), log p(R_o|C_o)) for each remapping, batched in one call."""
    spans = [r.alternate for r in remappings] + [r.original for r in remappings]
    flags = [r.first_subword_only for r in remappings] * 2
    scores = model.score_many(spans, first_subword_only=flags)
    n = len(remappings)
    if not np.all(np.isfinite(scores)):
        raise DivergenceError("non-finite region score")
    return scores[:n], scores[n:]


def perturbation_loss(model: ModelHandle, remapping: Remapping) -> float:
    """``-(log p(R_a|C_a) - log p(R_o|C_o))``; pseudo-log-likelihoods on masked models."""
    alt, orig = _log_probs(model, [remapping])
    return float(-(alt[0] - orig[0]))


def effect(remapping: Remapping, base: ModelHandle, perturbed: ModelHandle) -> float:
    """Log odds-ratio of alternate over original, perturbed relative to base."""
    return float(effects(base, perturbed, [remapping])[0])


def effects(
    base: ModelHandle,
    perturbed: ModelHandle,
    remappings: Sequence[Remapping],
    base_scores: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Vectorized :func:`effect`; pass ``base_scores`` to reuse unperturbed scores."""
    if base.mode != perturbed.mode:
        raise ValueError("base and perturbed models differ in mode")
    b_alt, b_orig = base_scores if base_scores is not None else _log_probs(base, remappings)
    p_alt, p_orig = _log_probs(perturbed, remappings)
    # Group as (alt change) - (orig change) so identical models give exactly 0.
    return (p_alt - b_alt) - (p_orig - b_orig)


def perturb(
    model: ModelHandle,
    remappings: Remapping | Sequence[Remapping],
    config: PerturbationConfig,
    *,
    remapping_id: str | None = None,
    loss_trace: list | None = None,
) -> ModelHandle:
    """Fine-tune a clone of ``model`` on ``remappings`` for ``config.steps`` Adam steps.

    With several remappings the per-step loss is their mean. ``loss_trace``, if
    given, receives the loss evaluated before every step.
    """
    if isinstance(remappings, Remapping):
        remappings = [remappings]
    remappings = list(remappings)
    if not remappings:
        raise ValueError("perturb needs at least one remapping")
    positive = [r.alternate for r in remappings]
    negative = None if config.loss_mode == "positive_only" else [r.original for r in remappings]
    flags = [r.first_subword_only for r in remappings]
    current = model.clone_state()
    for step in range(config.steps):
        try:
            current = current.train_step(
                positive,
                negative,
                config.learning_rate,
                first_subword_only=flags,
                token_weighting=config.token_weighting,
                remapping_id=remapping_id,
            )
        except DivergenceError as exc:
            raise DivergenceError(
                f"perturbation diverged at step {step}: {exc}", remapping_id, step
            ) from exc
        if loss_trace is not None:
            loss_trace.append(current.training_log["step_losses"][-1])
    return current


def run_trial(
    base: ModelHandle,
    train: Sequence[Remapping],
    evaluations: Sequence[Remapping],
    config: PerturbationConfig,
    *,
    base_scores=None,
    remapping_id: str | None = None,
) -> np.ndarray:
    """Clone, perturb, evaluate every remapping against the frozen perturbed state."""
    perturbed = perturb(base, train, config, remapping_id=remapping_id)
    out = effects(base, perturbed, evaluations, base_scores)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite effect", remapping_id)
    return out


# -- effect record streams -----------------------------------------------------------------

RECORD_COLUMNS = ("train_id", "eval_id", "trial", "effect")


def write_records(records: Iterable[EffectRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([r.train_id, r.eval_id, r.trial, repr(float(r.effect))])
    return buf.getvalue()


def read_records(text: str) -> list[EffectRecord]:
    rows = csv.DictReader(io.StringIO(text))
    if rows.fieldnames is None or tuple(rows.fieldnames[:4]) != RECORD_COLUMNS:
        raise ValueError(f"effect CSV must start with columns {RECORD_COLUMNS}")
    return [
        EffectRecord(r["train_id"], r["eval_id"], float(r["effect"]), int(r["trial"]))
        for r in rows
    ]
