from __future__ import annotations

import json

import numpy as np
import pytest

from perturbkit.analysis import TransferMatrix, read_matrix, write_matrix
from perturbkit.plots import PlotSpec, distribution, heatmap, relation_groups


def matrix():
    v = np.array([[9.0, 1.0, -8.0], [2.0, 4.0, 0.5], [-1.0, 12.0, 3.0]])
    return TransferMatrix(v, ["x", "y", "z"], ["b", "a", "b"], [{"s": "2"}, {"s": "1"}, {"s": "1"}])


def test_clip_is_render_only(tmp_path):
    m = matrix()
    write_matrix(m, tmp_path / "m")
    before = (tmp_path / "m.csv").read_bytes()
    img, side = heatmap(read_matrix(tmp_path / "m"), PlotSpec(clip=7.0), tmp_path / "h.svg")
    legend = json.loads(side.read_text())
    assert (tmp_path / "m.csv").read_bytes() == before
    assert legend["clipped_cells"] == 3  # 9, -8, 12
    assert legend["color_range"] == [-7.0, 7.0]
    raw = np.array(legend["values"])
    assert raw.max() == 12.0 and raw.min() == -8.0
    assert img.read_text().lstrip().startswith("<?xml")


def test_heatmap_groups_and_order(tmp_path):
    _, side = heatmap(matrix(), PlotSpec(group_order=["b"], subgroup="s"), tmp_path / "h.svg")
    legend = json.loads(side.read_text())
    assert legend["item_ids"] == ["z", "x", "y"]  # b first, then subgroup s within b
    assert legend["groups"] == [{"label": "b", "start": 0, "end": 2}, {"label": "a", "start": 2, "end": 3}]
    assert legend["values"][0] == [3.0, -1.0, 12.0]


def test_svg_output_is_deterministic(tmp_path):
    heatmap(matrix(), PlotSpec(color_gamma=0.5), tmp_path / "a.svg")
    heatmap(matrix(), PlotSpec(color_gamma=0.5), tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_png_output(tmp_path):
    img, _ = heatmap(matrix(), PlotSpec(), tmp_path / "h.png")
    assert img.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_spec_validation_and_unknown_group(tmp_path):
    with pytest.raises(ValueError):
        PlotSpec(color_gamma=0)
    with pytest.raises(ValueError):
        PlotSpec(color_gamma=-1.0)
    with pytest.raises(ValueError, match="unknown"):
        heatmap(matrix(), PlotSpec(group_order=["c"]), tmp_path / "h.svg")
    with pytest.raises(ValueError, match="unknown"):
        distribution({"a": [1.0]}, PlotSpec(group_order=["q"]), tmp_path / "d.svg")


def test_distribution_medians(tmp_path):
    groups = relation_groups(matrix())
    assert sorted(groups["b"]) == [-8.0, -1.0]
    assert sorted(groups["between"]) == [0.5, 1.0, 2.0, 12.0]
    assert "a" not in groups  # one-item class has no off-diagonal cells
    img, med = distribution(groups, PlotSpec(clip=3.0), tmp_path / "d.svg")
    assert med == {"b": -4.5, "between": 1.5}  # medians of raw values, not clipped ones
    assert img.exists()
