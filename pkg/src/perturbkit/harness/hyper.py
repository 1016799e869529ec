"""Grid search over perturbation learning rate and step count, scored by clusterability."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from ..analysis.auc import clusterability_auc
from ..analysis.matrix import build_transfer_matrix
from ..backends import DivergenceError, ModelHandle
from ..perturbation import PerturbationConfig
from ..remapping import LabeledExampleSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperGrid:
    learning_rates: tuple[float, ...]
    step_counts: tuple[int, ...]
    objective: str = "auc"

    def __post_init__(self):
        object.__setattr__(self, "learning_rates", tuple(float(x) for x in self.learning_rates))
        object.__setattr__(self, "step_counts", tuple(int(x) for x in self.step_counts))
        if not self.learning_rates or not self.step_counts:
            raise ValueError("hyperparameter grid is empty")
        if any(lr <= 0 for lr in self.learning_rates) or any(s < 1 for s in self.step_counts):
            raise ValueError("learning rates must be positive and step counts >= 1")
        if self.objective != "auc":
            raise ValueError("the only supported objective is 'auc'")

    def points(self) -> list[tuple[float, int]]:
        return [(lr, s) for lr in self.learning_rates for s in self.step_counts]


@dataclass
class HyperResult:
    learning_rate: float
    steps: int
    auc: float
    table: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate, "steps": self.steps, "auc": self.auc, "grid": self.table}


def hyper_search(
    base: ModelHandle,
    train_set: LabeledExampleSet,
    grid: HyperGrid,
    config: PerturbationConfig | None = None,
    *,
    exclude_diagonal: bool = True,
    reweight: bool = True,
    label_map: Callable | dict | None = None,
    score: Callable[[float, int], float] | None = None,
    **matrix_kwargs,
) -> HyperResult:
    """Clusterability AUC on ``train_set`` at every grid point; return the best.

    Ties go to the lower learning rate, then to fewer steps. A point whose
    matrix diverges is recorded as failed. ``score`` replaces matrix building
    with a direct ``(lr, steps) -> auc`` callable.
    """
    config = config or PerturbationConfig()
    table = []
    for lr, steps in grid.points():
        row = {"learning_rate": lr, "steps": steps, "auc": None, "error": None}
        try:
            if score is not None:
                auc = float(score(lr, steps))
            else:
                cfg = replace(config, learning_rate=lr, steps=steps)
                m = build_transfer_matrix(base, train_set, cfg, **matrix_kwargs)
                auc = clusterability_auc(m, exclude_diagonal, reweight, label_map=label_map).auc
            row["auc"] = auc
            log.info("grid lr=%g steps=%d auc=%.6f", lr, steps, auc)
        except DivergenceError as exc:
            row["error"] = str(exc)
            log.warning("grid lr=%g steps=%d diverged: %s", lr, steps, exc)
        table.append(row)
    ok = [r for r in table if r["auc"] is not None]
    if not ok:
        raise DivergenceError("every grid point diverged")
    best = min(ok, key=lambda r: (-r["auc"], r["learning_rate"], r["steps"]))
    return HyperResult(best["learning_rate"], best["steps"], best["auc"], table)
