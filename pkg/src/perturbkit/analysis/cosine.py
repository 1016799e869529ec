"""Cosine similarity of contextual embeddings, the non-interventional baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..backends import BackendError, ModelHandle
from ..remapping import LabeledExampleSet
from .auc import clusterability_auc
from .matrix import TransferMatrix


def _resolve_layer(base: ModelHandle, layer: int) -> int:
    resolved = layer + base.depth + 1 if layer < 0 else layer
    if not 0 <= resolved <= base.depth:
        raise BackendError(f"layer {layer} outside 0..{base.depth}")
    return resolved


def cosine_similarity_matrix(base: ModelHandle, dataset: LabeledExampleSet, layer: int = -1) -> TransferMatrix:
    """Cell (i, j): dot product of unit embeddings of items i and j at ``layer``.

    Each item is embedded as its original region in its original context.
    Negative layers count from the top (-1 is the last layer).
    """
    layer = _resolve_layer(base, layer)
    vecs = []
    for item in dataset.items:
        v = np.asarray(base.embed(*item.remapping.original, layer), dtype=np.float64)
        vecs.append(v / np.linalg.norm(v))
    E = np.stack(vecs)
    sims = np.clip(E @ E.T, -1.0, 1.0)
    return TransferMatrix(
        sims,
        list(dataset.ids),
        list(dataset.class_labels),
        [dict(it.factors) for it in dataset.items],
        "kept",
        {"kind": "cosine", "layer": layer, "backend": base.fingerprint()},
    )


@dataclass
class BestLayerResult:
    per_word: dict[str, dict]  # word -> {"layer": int, "auc": float, "aucs": {layer: auc}}
    mean_auc: float
    last_layer_mean_auc: float

    def to_dict(self) -> dict:
        return {
            "mean_auc": self.mean_auc,
            "last_layer_mean_auc": self.last_layer_mean_auc,
            "per_word": {
                w: {"layer": d["layer"], "auc": d["auc"], "aucs": {str(k): v for k, v in d["aucs"].items()}}
                for w, d in self.per_word.items()
            },
        }


def best_layer_oracle(
    base: ModelHandle,
    sets: dict[str, LabeledExampleSet] | Sequence[LabeledExampleSet],
    layers: Sequence[int] | None = None,
    exclude_diagonal: bool = True,
    reweight: bool = True,
) -> BestLayerResult:
    """Per word, cosine AUC at every layer; keep each word's best layer.

    Layers default to ``1..depth`` (the embedding layer is left out). Ties go
    to the lower layer. Also reports the last-layer mean for comparison.
    """
    if not isinstance(sets, dict):
        sets = {s.dataset_id: s for s in sets}
    layers = list(range(1, base.depth + 1)) if layers is None else [_resolve_layer(base, l) for l in layers]
    if not layers:
        raise ValueError("need at least one layer")
    per_word = {}
    for word, ds in sets.items():
        aucs = {
            l: clusterability_auc(cosine_similarity_matrix(base, ds, l), exclude_diagonal, reweight).auc
            for l in layers
        }
        best = max(layers, key=lambda l: (aucs[l], -l))
        per_word[word] = {"layer": best, "auc": aucs[best], "aucs": aucs}
    last = max(layers)
    return BestLayerResult(
        per_word,
        float(np.mean([d["auc"] for d in per_word.values()])),
        float(np.mean([d["aucs"][last] for d in per_word.values()])),
    )
