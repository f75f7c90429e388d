"""Tests for cross-view edges, union-find grouping and candidate ranking."""

import random
from collections import deque

import numpy as np
import pytest

from ambiver.config import FusionConfig
from ambiver.exceptions import (
    EmptyGroupError,
    IndexOutOfRangeError,
    LengthMismatchError,
    MissingFileError,
)
from ambiver.fusion import (
    Detection2D,
    build_edges,
    fuse,
    fuse_without_grouping,
    group_score,
    load_detections,
    representative_score,
    save_detections,
    union_find_components,
)
from ambiver.geometry import BBox2D, Ray3


def _det(view, size=50.0, score=0.9, x=100.0, y=100.0, w=640, h=480):
    return Detection2D(view, BBox2D(x, y, x + size, y + size), score, w, h)


def _toward(origin, point):
    return Ray3.through(origin, np.asarray(point, float) - np.asarray(origin, float))


def _bfs_components(n, edges):
    adjacency = {i: set() for i in range(n)}
    for i, j in edges:
        adjacency[i].add(j)
        adjacency[j].add(i)
    seen, components = set(), []
    for start in range(n):
        if start in seen:
            continue
        component, queue = set(), deque([start])
        while queue:
            node = queue.popleft()
            if node in component:
                continue
            component.add(node)
            queue.extend(adjacency[node] - component)
        seen |= component
        components.append(component)
    return components


def test_edge_requires_distinct_views():
    """Two detections from one view are never linked."""

    target = (0.0, 0.0, 2.0)
    rays = [_toward((-0.5, 0, 0), target), _toward((0.5, 0, 0), target)]
    assert build_edges([_det(0), _det(0)], rays) == []


def test_edge_for_converging_rays():
    """Rays meeting at one point 28 degrees apart with equal boxes are linked."""

    target = (0.0, 0.0, 2.0)
    rays = [_toward((-0.5, 0, 0), target), _toward((0.5, 0, 0), target)]
    assert build_edges([_det(0), _det(1)], rays) == [(0, 1)]


def test_no_edge_when_box_areas_differ():
    """A 50x50 and a 10x10 box (ratio 0.04) are not linked."""

    target = (0.0, 0.0, 2.0)
    rays = [_toward((-0.5, 0, 0), target), _toward((0.5, 0, 0), target)]
    assert build_edges([_det(0, size=50.0), _det(1, size=10.0)], rays) == []


def test_no_edge_outside_angle_window():
    """Rays meeting at a wide angle fail the angle constraint."""

    target = (0.0, 0.0, 0.5)
    rays = [_toward((-2.0, 0, 0), target), _toward((2.0, 0, 0), target)]
    assert build_edges([_det(0), _det(1)], rays) == []
    wide = FusionConfig(theta_max=170.0)
    assert build_edges([_det(0), _det(1)], rays, wide) == [(0, 1)]


def test_build_edges_length_mismatch():
    """Detections and rays must pair up one to one."""

    with pytest.raises(LengthMismatchError):
        build_edges([_det(0)], [])


def test_union_find_examples():
    """Isolated nodes and a chain plus a singleton."""

    assert union_find_components(3, []) == [{0}, {1}, {2}]
    assert union_find_components(4, [(0, 1), (1, 2)]) == [{0, 1, 2}, {3}]
    with pytest.raises(IndexOutOfRangeError):
        union_find_components(3, [(0, 5)])


def test_union_find_matches_breadth_first_search():
    """Random graphs partition the same way under union-find and BFS."""

    rng = random.Random(3)
    for _ in range(5):
        edges = [(rng.randrange(200), rng.randrange(200)) for _ in range(400)]
        edges = [(i, j) for i, j in edges if i != j]
        expected = sorted(_bfs_components(200, edges), key=min)
        assert union_find_components(200, edges) == expected


def test_group_score_examples():
    """Area-weighted means of one and two members."""

    one = [_det(0, score=0.9)]
    assert group_score({0}, one) == pytest.approx(0.9, abs=1e-12)

    equal = [_det(0, size=10.0, score=1.0), _det(1, size=10.0, score=0.5)]
    assert group_score({0, 1}, equal) == pytest.approx(0.75, abs=1e-12)

    weighted = [
        Detection2D(0, BBox2D(0, 0, 30, 10), 1.0, 640, 480),
        Detection2D(1, BBox2D(0, 0, 10, 10), 0.5, 640, 480),
    ]
    assert group_score({0, 1}, weighted) == pytest.approx(0.875, abs=1e-12)

    with pytest.raises(EmptyGroupError):
        group_score(set(), weighted)


def test_group_score_stays_within_member_scores():
    """The weighted mean never leaves the range of member scores."""

    rng = np.random.default_rng(11)
    for _ in range(2000):
        n = int(rng.integers(1, 6))
        dets = [
            _det(i, size=float(rng.uniform(1, 200)), score=float(rng.uniform(0, 1)))
            for i in range(n)
        ]
        score = group_score(set(range(n)), dets)
        assert min(d.score for d in dets) <= score <= max(d.score for d in dets)


def test_representative_score_examples():
    """Full-image, centered and border-touching boxes."""

    full = Detection2D(0, BBox2D(0, 0, 100, 100), 1.0, 100, 100)
    assert representative_score(full) == pytest.approx(0.5, abs=1e-12)

    centered = Detection2D(0, BBox2D(450, 450, 550, 550), 0.8, 1000, 1000)
    assert representative_score(centered) == pytest.approx(0.008, abs=1e-12)

    near_left = Detection2D(0, BBox2D(3, 450, 103, 550), 0.8, 1000, 1000)
    assert representative_score(near_left) == pytest.approx(0.004, abs=1e-12)
    assert representative_score(near_left, confidence_only=True) == 0.8


def test_fuse_empty():
    """No detections yield no candidates."""

    assert fuse([], []) == []


def test_fuse_three_views_and_a_stray():
    """One object seen three times and another seen once give two candidates."""

    target = (0.0, 0.0, 2.0)
    dets = [_det(0), _det(1), _det(2), _det(3, score=0.5)]
    rays = [
        _toward((-0.5, 0, 0), target),
        _toward((0.5, 0, 0), target),
        _toward((0, -0.5, 0), target),
        Ray3.through((10.0, 10.0, 0.0), (0.0, 0.0, 1.0)),
    ]
    candidates = fuse(dets, rays)
    assert [c.cardinality for c in candidates] == [3, 1]
    assert candidates[0].member_indices == (0, 1, 2)
    assert candidates[0].representative_view == 0
    assert candidates[0].group_score == pytest.approx(0.9)
    assert candidates[1].representative_view == 3


def test_fuse_keeps_top_k_groups():
    """Ten separated objects are cut to the six best-scoring groups."""

    rng = np.random.default_rng(5)
    scores = rng.uniform(0.1, 1.0, size=10)
    dets, rays = [], []
    for i, score in enumerate(scores):
        target = (0.25, 10.0 * i, 2.0)
        for j, x in enumerate((0.0, 0.5)):
            dets.append(_det(2 * i + j, score=float(score)))
            rays.append(_toward((x, 10.0 * i, 0.0), target))

    candidates = fuse(dets, rays, FusionConfig(top_k=6))
    assert len(candidates) == 6
    assert all(c.cardinality == 2 for c in candidates)
    expected = sorted(scores, reverse=True)[:6]
    assert [c.group_score for c in candidates] == pytest.approx(expected)


def test_representative_choice_and_confidence_only():
    """Visibility favors the larger box; the confidence-only ablation does not."""

    target = (0.0, 0.0, 2.0)
    dets = [_det(0, size=50.0, score=0.9), _det(1, size=100.0, score=0.8)]
    rays = [_toward((-0.5, 0, 0), target), _toward((0.5, 0, 0), target)]

    assert fuse(dets, rays)[0].representative_view == 1
    assert fuse(dets, rays, confidence_only=True)[0].representative_view == 0


def test_fuse_without_grouping():
    """Every detection is its own candidate, ranked by confidence."""

    dets = [_det(0, score=0.3), _det(1, score=0.9), _det(2, score=0.6)]
    candidates = fuse_without_grouping(dets, FusionConfig(top_k=2))
    assert [c.representative_view for c in candidates] == [1, 2]
    assert all(c.cardinality == 1 for c in candidates)


def test_detection_validation():
    """Scores outside [0, 1] and boxes leaving the image are rejected."""

    with pytest.raises(ValueError):
        _det(0, score=1.5)
    with pytest.raises(ValueError):
        Detection2D(0, BBox2D(600, 0, 700, 50), 0.5, 640, 480)


def test_detections_file(tmp_path):
    """Detections survive a write and read."""

    dets = [_det(0), _det(4, score=0.25, x=10.0)]
    path = save_detections(dets, tmp_path / "dets.json")
    assert load_detections(path) == dets
    with pytest.raises(MissingFileError):
        load_detections(tmp_path / "missing.json")
