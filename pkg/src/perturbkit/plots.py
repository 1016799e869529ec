"""Heatmaps and effect-distribution plots (SVG by default)."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "perturbkit"  # stable element ids
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import FuncNorm  # noqa: E402

from ._io import atomic_write_bytes, write_json  # noqa: E402
from .analysis.matrix import TransferMatrix  # noqa: E402


@dataclass
class PlotSpec:
    clip: float | None = None
    color_gamma: float = 1.0
    group_order: list[str] = field(default_factory=list)
    subgroup: str | None = None  # item factor for the inner grouping level
    annotations: bool = True  # medians on distribution plots
    title: str | None = None

    def __post_init__(self):
        if self.color_gamma <= 0:
            raise ValueError("color_gamma must be positive")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip must be positive")


def _order(matrix: TransferMatrix, spec: PlotSpec) -> list[int]:
    labels = list(matrix.class_labels)
    known = list(dict.fromkeys(labels))
    unknown = [g for g in spec.group_order if g not in known]
    if unknown:
        raise ValueError(f"unknown groups in group_order: {unknown}")
    order = list(spec.group_order) + [g for g in known if g not in spec.group_order]
    rank = {g: k for k, g in enumerate(order)}
    sub = lambda i: str(matrix.factors[i].get(spec.subgroup, "")) if spec.subgroup else ""
    return sorted(range(matrix.n), key=lambda i: (rank[labels[i]], sub(i)))


def _boundaries(keys: Sequence) -> list[int]:
    return [k for k in range(1, len(keys)) if keys[k] != keys[k - 1]]


def _power_norm(vmax: float, gamma: float) -> FuncNorm:
    # sign-preserving power law keeps zero at the colormap centre
    fwd = lambda x: np.sign(x) * np.abs(x) ** gamma
    inv = lambda y: np.sign(y) * np.abs(y) ** (1.0 / gamma)
    return FuncNorm((fwd, inv), vmin=-vmax, vmax=vmax)


def _save(fig, path: Path) -> None:
    buf = io.BytesIO()
    fmt = path.suffix.lstrip(".") or "svg"
    # fixed metadata keeps SVG output byte-stable across runs
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(buf, format=fmt, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def heatmap(matrix: TransferMatrix, spec: PlotSpec, path: str | Path) -> tuple[Path, Path]:
    """Render ``matrix`` grouped by class (then ``spec.subgroup``); returns (image, legend JSON).

    Clipping and color normalization affect only the rendering; the legend
    sidecar lists the raw values in rendered order.
    """
    path = Path(path)
    order = _order(matrix, spec)
    raw = matrix.values[np.ix_(order, order)]
    shown = raw if spec.clip is None else np.clip(raw, -spec.clip, spec.clip)
    finite = shown[np.isfinite(shown)]
    vmax = float(np.max(np.abs(finite))) if finite.size and np.max(np.abs(finite)) > 0 else 1.0
    n = matrix.n
    size = min(2.0 + 0.18 * n, 24.0)
    fig, ax = plt.subplots(figsize=(size + 1.2, size))
    im = ax.imshow(np.ma.masked_invalid(shown), cmap="RdBu_r", norm=_power_norm(vmax, spec.color_gamma),
                   interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    groups = [matrix.class_labels[i] for i in order]
    subs = [(groups[k], str(matrix.factors[i].get(spec.subgroup, ""))) for k, i in enumerate(order)] if spec.subgroup else groups
    for b in _boundaries(subs):
        ax.axhline(b - 0.5, color="0.4", lw=0.5)
        ax.axvline(b - 0.5, color="0.4", lw=0.5)
    for b in _boundaries(groups):
        ax.axhline(b - 0.5, color="k", lw=1.6)
        ax.axvline(b - 0.5, color="k", lw=1.6)
    starts = [0] + _boundaries(groups)
    ends = starts[1:] + [n]
    ticks = [(s + e - 1) / 2 for s, e in zip(starts, ends)]
    ax.set_xticks(ticks, [groups[s] for s in starts], rotation=90)
    ax.set_yticks(ticks, [groups[s] for s in starts])
    ax.set_xlabel("evaluation")
    ax.set_ylabel("perturbation")
    if spec.title:
        ax.set_title(spec.title)
    _save(fig, path)
    legend = {
        "spec": asdict(spec),
        "item_ids": [matrix.item_ids[i] for i in order],
        "groups": [{"label": groups[s], "start": s, "end": e} for s, e in zip(starts, ends)],
        "color_range": [-vmax, vmax],
        "clipped_cells": int(np.sum(np.isfinite(raw) & (raw != shown))),
        "values": [[None if not np.isfinite(v) else float(v) for v in row] for row in raw],
    }
    side = path.with_suffix(".legend.json")
    write_json(side, legend)
    return path, side


def distribution(
    groups: dict[str, Sequence[float]],
    spec: PlotSpec,
    path: str | Path,
) -> tuple[Path, dict[str, float]]:
    """Violin plot of effect values per group with median markers; returns (image, medians)."""
    path = Path(path)
    unknown = [g for g in spec.group_order if g not in groups]
    if unknown:
        raise ValueError(f"unknown groups in group_order: {unknown}")
    names = list(spec.group_order) + [g for g in groups if g not in spec.group_order]
    data = [np.asarray(groups[g], dtype=np.float64) for g in names]
    data = [d[np.isfinite(d)] for d in data]
    if any(d.size == 0 for d in data):
        raise ValueError("every group needs at least one finite value")
    medians = {g: float(np.median(d)) for g, d in zip(names, data)}
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(names), 4))
    shown = [d if spec.clip is None else np.clip(d, -spec.clip, spec.clip) for d in data]
    ax.violinplot(shown, showextrema=False)
    if spec.annotations:
        xs = np.arange(1, len(names) + 1)
        ax.scatter(xs, [medians[g] for g in names], color="k", marker="_", s=300, zorder=3)
        for x, g in zip(xs, names):
            ax.annotate(f"{medians[g]:.2f}", (x, medians[g]), textcoords="offset points", xytext=(8, 4), fontsize=8)
    ax.axhline(0, color="0.6", lw=0.5)
    ax.set_xticks(np.arange(1, len(names) + 1), names)
    ax.set_ylabel("effect (log odds ratio)")
    if spec.title:
        ax.set_title(spec.title)
    _save(fig, path)
    return path, medians


def relation_groups(matrix: TransferMatrix, exclude_diagonal: bool = True) -> dict[str, list[float]]:
    """Off-diagonal cells split by class relation: each within-class block, then between."""
    out: dict[str, list[float]] = {}
    labels = matrix.class_labels
    for i in range(matrix.n):
        for j in range(matrix.n):
            if exclude_diagonal and i == j:
                continue
            key = f"{labels[i]}" if labels[i] == labels[j] else "between"
            out.setdefault(key, []).append(float(matrix.values[i, j]))
    return out
