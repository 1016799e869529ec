"""Transfer matrices: construction from perturbation trials, transforms and file I/O."""

from __future__ import annotations

import io
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .._io import atomic_write_text, read_json, write_json
from ..backends import DivergenceError, ModelHandle
from ..perturbation import EffectRecord, PerturbationConfig, effects, perturb
from ..remapping import Item, LabeledExampleSet

log = logging.getLogger(__name__)


@dataclass
class TransferMatrix:
    """Cell ``(i, j)``: mean effect on item/condition ``j`` after perturbing on ``i``."""

    values: np.ndarray
    item_ids: list[str]
    class_labels: list[str]
    factors: list[dict] = field(default_factory=list)
    diagonal_policy: str = "kept"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.item_ids)
        if self.values.shape != (n, n):
            raise ValueError(f"values shape {self.values.shape} does not match {n} item ids")
        if len(self.class_labels) != n:
            raise ValueError("one class label per item required")
        if not self.factors:
            self.factors = [{} for _ in range(n)]
        if self.diagonal_policy not in ("kept", "excluded"):
            raise ValueError("diagonal_policy is 'kept' or 'excluded'")

    @property
    def n(self) -> int:
        return len(self.item_ids)

    def subset(self, indices: Sequence[int]) -> "TransferMatrix":
        idx = list(indices)
        return TransferMatrix(
            self.values[np.ix_(idx, idx)],
            [self.item_ids[i] for i in idx],
            [self.class_labels[i] for i in idx],
            [self.factors[i] for i in idx],
            self.diagonal_policy,
            dict(self.meta),
        )

    def off_diagonal(self) -> np.ndarray:
        return self.values[~np.eye(self.n, dtype=bool)]


def symmetrize(matrix: TransferMatrix) -> TransferMatrix:
    """Average each cell with its transpose; the diagonal is unchanged."""
    v = (matrix.values + matrix.values.T) / 2
    np.fill_diagonal(v, np.diag(matrix.values))
    return replace(matrix, values=v, meta={**matrix.meta, "symmetrized": True})


def baselined_transfer(fg: TransferMatrix, nonfg: TransferMatrix) -> TransferMatrix:
    """Cellwise ``fg - nonfg`` for matrices over the same ids."""
    if list(fg.item_ids) != list(nonfg.item_ids):
        raise ValueError("baselined transfer needs matrices with aligned item ids")
    return replace(fg, values=fg.values - nonfg.values, meta={**fg.meta, "baselined": True})


# -- construction ------------------------------------------------------------------------


def critical_region(item: Item) -> tuple[tuple[str, ...], tuple[str, ...]]:
    r = item.remapping
    return tuple(r.region_original.words), tuple(r.region_alternate.words)


def labels_disjoint(a: Item, b: Item) -> bool:
    """True unless both items remap the same original region to the same alternate."""
    return critical_region(a) != critical_region(b)


@dataclass
class _Plan:
    """Everything a worker needs to compute one matrix row."""

    base: ModelHandle
    config: PerturbationConfig
    rows: list[str]
    row_pools: dict[str, list[Item]]
    columns: list[str]
    eval_pools: dict[str, dict[str, list[Item]]]  # eval set name -> column -> items
    trials: int
    evals_per_cell: int
    grouped: bool
    disjoint: bool
    seed: int
    skip_failures: bool


_ORDER_STREAM = 2**31 - 1


def _rng(seed: int, row: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, row, trial]))


def _compute_row(plan: _Plan, r: int):
    """Return ``({eval name: (row values, per-cell counts)}, records, flagged)``."""
    cond = plan.rows[r]
    names = list(plan.eval_pools)
    sums = {k: np.zeros(len(plan.columns)) for k in names}
    counts = {k: np.zeros(len(plan.columns), dtype=int) for k in names}
    records: list[EffectRecord] = []
    flagged = []
    pool = plan.row_pools[cond]
    if plan.grouped:
        order = _rng(plan.seed, r, _ORDER_STREAM).permutation(len(pool))
    for t in range(plan.trials):
        rng = _rng(plan.seed, r, t)
        train = pool[order[t % len(pool)]] if plan.grouped else pool[0]
        targets: list[tuple[str, int, Item]] = []
        drawn: dict[tuple, list[str]] = {}  # (column, candidate ids) -> picked ids
        for name in names:
            for c, col in enumerate(plan.columns):
                cands = plan.eval_pools[name][col]
                if plan.disjoint:
                    cands = [it for it in cands if labels_disjoint(train, it)]
                if plan.grouped:
                    cands = [it for it in cands if it.id != train.id]
                    if not cands:
                        continue
                    # eval sets with the same candidate ids (e.g. FG and non-FG
                    # versions of one item pool) are evaluated on the same draw
                    ids = tuple(it.id for it in cands)
                    if (c, ids) not in drawn:
                        k = min(plan.evals_per_cell, len(cands))
                        drawn[c, ids] = [ids[i] for i in sorted(rng.choice(len(cands), size=k, replace=False))]
                    chosen = set(drawn[c, ids])
                    picks = [it for it in cands if it.id in chosen]
                else:
                    picks = cands[:1]
                targets.extend((name, c, it) for it in picks)
        try:
            perturbed = perturb(plan.base, train.remapping, plan.config, remapping_id=train.id)
            rems = [it.remapping for _, _, it in targets]
            eff = effects(plan.base, perturbed, rems) if rems else np.zeros(0)
            if not np.all(np.isfinite(eff)):
                raise DivergenceError("non-finite effect", train.id)
        except DivergenceError as exc:
            if not plan.skip_failures:
                raise
            log.warning("row %s trial %d flagged: %s", cond, t, exc)
            flagged.append({"row": cond, "trial": t, "train_id": train.id, "error": str(exc)})
            continue
        for (name, c, it), e in zip(targets, eff):
            sums[name][c] += e
            counts[name][c] += 1
            records.append(
                EffectRecord(train.id, it.id, float(e), t, {"eval_set": name, "row": cond, "column": plan.columns[c]})
            )
    return {k: (sums[k], counts[k]) for k in names}, records, flagged


def _row_worker(args):
    plan, r = args
    return _compute_row(plan, r)


def build_transfer_matrices(
    base: ModelHandle,
    train_set: LabeledExampleSet,
    eval_sets: dict[str, LabeledExampleSet],
    config: PerturbationConfig,
    *,
    trials: int = 1,
    evals_per_cell: int = 1,
    group_by: str | None = None,
    disjoint: bool = False,
    jobs: int = 1,
    skip_failures: bool = False,
    return_records: bool = False,
):
    """Build one transfer matrix per evaluation set from shared perturbations.

    Without ``group_by`` every training item is one row and the evaluation
    items with the same ids are the columns. With ``group_by`` (a factor name,
    or ``"class"``), rows and columns are conditions: each trial perturbs on one
    item drawn without replacement from the row condition and evaluates
    ``evals_per_cell`` items sampled from each column condition. Sampling is
    seeded per (row, trial), so parallel and serial runs agree exactly.
    """
    if trials < 1 or evals_per_cell < 1:
        raise ValueError("trials and evals_per_cell must be positive")
    grouped = group_by is not None

    def key(it: Item) -> str:
        return it.class_label if group_by == "class" else it.factors[group_by]

    if grouped:
        conditions: list[str] = []
        for it in train_set:
            if key(it) not in conditions:
                conditions.append(key(it))
        row_pools = {c: [it for it in train_set if key(it) == c] for c in conditions}
        eval_pools = {
            name: {c: [it for it in es if key(it) == c] for c in conditions} for name, es in eval_sets.items()
        }
        rep = {c: row_pools[c][0] for c in conditions}
        class_labels = [rep[c].class_label for c in conditions]
        factors = [
            {k: v for k, v in rep[c].factors.items() if all(it.factors.get(k) == v for it in row_pools[c])}
            for c in conditions
        ]
    else:
        if evals_per_cell != 1:
            raise ValueError("evals_per_cell applies only to grouped matrices")
        conditions = train_set.ids
        row_pools = {it.id: [it] for it in train_set}
        eval_pools = {}
        for name, es in eval_sets.items():
            index = {it.id: it for it in es}
            missing = [i for i in conditions if i not in index]
            if missing:
                raise ValueError(f"evaluation set {name!r} lacks ids {missing[:5]}")
            eval_pools[name] = {i: [index[i]] for i in conditions}
        class_labels = train_set.class_labels
        factors = [dict(it.factors) for it in train_set]

    plan = _Plan(
        base, config, conditions, row_pools, conditions, eval_pools, trials,
        evals_per_cell, grouped, disjoint, config.seed, skip_failures,
    )
    tasks = [(plan, r) for r in range(len(conditions))]
    if jobs > 1 and len(tasks) > 1:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
            rows = list(ex.map(_row_worker, tasks))
    else:
        rows = [_row_worker(t) for t in tasks]

    n = len(conditions)
    out = {}
    flagged = [f for _, _, fl in rows for f in fl]
    for name in eval_sets:
        vals = np.full((n, n), np.nan)
        cell_counts = np.zeros((n, n), dtype=int)
        for r, (acc, _, _) in enumerate(rows):
            s, c = acc[name]
            with np.errstate(invalid="ignore", divide="ignore"):
                vals[r] = np.where(c > 0, s / np.maximum(c, 1), np.nan)
            cell_counts[r] = c
        meta = {
            "config": config.to_dict(),
            "trials": trials,
            "evals_per_cell": evals_per_cell,
            "group_by": group_by,
            "disjoint": disjoint,
            "eval_set": name,
            "backend": base.fingerprint(),
            "cell_counts_min": int(cell_counts.min()) if n else 0,
            "cell_counts_max": int(cell_counts.max()) if n else 0,
            "flagged": flagged,
        }
        out[name] = TransferMatrix(vals, list(conditions), list(class_labels), factors, "kept", meta)
    if return_records:
        return out, [rec for _, recs, _ in rows for rec in recs]
    return out


def build_transfer_matrix(
    base: ModelHandle,
    dataset: LabeledExampleSet,
    config: PerturbationConfig,
    trials: int = 1,
    evals_per_cell: int = 1,
    *,
    eval_set: LabeledExampleSet | None = None,
    return_records: bool = False,
    **kwargs,
):
    """Single-matrix form of :func:`build_transfer_matrices` (eval set defaults to ``dataset``)."""
    res = build_transfer_matrices(
        base,
        dataset,
        {"eval": eval_set if eval_set is not None else dataset},
        config,
        trials=trials,
        evals_per_cell=evals_per_cell,
        return_records=return_records,
        **kwargs,
    )
    if return_records:
        mats, recs = res
        return mats["eval"], recs
    return res["eval"]


# -- files -------------------------------------------------------------------------------


def matrix_csv(matrix: TransferMatrix) -> str:
    buf = io.StringIO()
    for row in matrix.values:
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def write_matrix(matrix: TransferMatrix, prefix) -> tuple[Path, Path]:
    """``<prefix>.csv`` holds raw values (full precision); ``<prefix>.json`` the metadata."""
    prefix = Path(prefix)
    csv_path, side = prefix.with_suffix(".csv"), prefix.with_suffix(".json")
    atomic_write_text(csv_path, matrix_csv(matrix))
    write_json(
        side,
        {
            "item_ids": matrix.item_ids,
            "class_labels": matrix.class_labels,
            "factors": matrix.factors,
            "diagonal_policy": matrix.diagonal_policy,
            "meta": matrix.meta,
        },
    )
    return csv_path, side


def read_matrix(prefix) -> TransferMatrix:
    prefix = Path(prefix)
    if prefix.suffix in (".csv", ".json"):
        prefix = prefix.with_suffix("")
    side_path = prefix.with_suffix(".json")
    if not side_path.exists():
        raise FileNotFoundError(f"matrix sidecar {side_path} not found")
    side = read_json(side_path)
    rows = [ln for ln in prefix.with_suffix(".csv").read_text().splitlines() if ln.strip()]
    values = np.array([[float(x) for x in ln.split(",")] for ln in rows]) if rows else np.zeros((0, 0))
    return TransferMatrix(
        values,
        side["item_ids"],
        side["class_labels"],
        side.get("factors") or [],
        side.get("diagonal_policy", "kept"),
        side.get("meta", {}),
    )
