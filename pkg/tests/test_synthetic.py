"""Tests for synthetic scenes, rendering and the simulated detector."""

import math
from collections import Counter

import numpy as np
import pytest

from ambiver.exceptions import LengthMismatchError
from ambiver.fusion import build_edges, union_find_components
from ambiver.geometry import back_project, look_at, point_to_ray_distance
from ambiver.reasoning import Label
from ambiver.synthetic import (
    DetectionNoise,
    SceneObject,
    SceneSpec,
    SyntheticScene,
    generate_instruction_suite,
    generate_scene,
    load_scene,
    panorama_trajectory,
    partition_labels,
    rand_index,
    render_detections,
    render_frame,
    save_scene,
    synthetic_intrinsics,
)

K = synthetic_intrinsics()
BOX = SceneObject(0, "cup", (3.0, 3.0, 0.3), (0.2, 0.2, 0.3), ("red",), (200, 40, 40))


def _single_box_scene():
    return SyntheticScene((BOX,), (6.0, 6.0, 3.0), seed=0, scene_id="one")


def test_generate_scene_is_deterministic():
    """One seed always yields the same scene."""

    assert generate_scene(seed=7) == generate_scene(seed=7)
    assert generate_scene(seed=7) != generate_scene(seed=8)


def test_generated_boxes_are_disjoint():
    """Twenty random boxes fit the room without overlapping."""

    scene = generate_scene(SceneSpec(n_objects=20), seed=3)
    assert len(scene.objects) == 20
    for i, a in enumerate(scene.objects):
        assert np.all(a.lower >= 0) and np.all(a.upper <= scene.room_extent)
        assert not any(a.overlaps(b) for b in scene.objects[i + 1 :])


def test_ring_layout():
    """Ring objects sit on the ring and equal classes are never neighbours."""

    spec = SceneSpec(n_objects=6, layout="ring")
    for seed in range(10):
        scene = generate_scene(spec, seed=seed)
        assert len(scene.objects) == 6
        angles = []
        for obj in scene.objects:
            dx, dy = obj.center[0] - 3.0, obj.center[1] - 3.0
            assert math.hypot(dx, dy) == pytest.approx(2.0)
            angles.append(math.atan2(dy, dx))
        order = [scene.objects[i].category for i in np.argsort(angles)]
        for i in range(6):
            assert order[i] != order[(i + 1) % 6]

    with pytest.raises(ValueError):
        SceneSpec(n_objects=7, layout="ring")


def test_scene_validation():
    """Overlapping or escaping boxes are rejected."""

    twin = SceneObject(1, "cup", (3.1, 3.0, 0.3), (0.2, 0.2, 0.3))
    with pytest.raises(ValueError, match="overlap"):
        SyntheticScene((BOX, twin), (6.0, 6.0, 3.0), seed=0)
    outside = SceneObject(1, "cup", (5.9, 3.0, 0.3), (0.2, 0.2, 0.3))
    with pytest.raises(ValueError, match="leaves the room"):
        SyntheticScene((outside,), (6.0, 6.0, 3.0), seed=0)


def test_scene_file_round_trip(tmp_path):
    """A saved scene loads back equal."""

    scene = generate_scene(SceneSpec(n_objects=4), seed=5)
    path = save_scene(scene, tmp_path / "scene.json")
    assert load_scene(path) == scene


def test_render_frame_depth():
    """Depth along the optical axis is the distance to the floor or the box."""

    empty = SyntheticScene((), (6.0, 6.0, 3.0), seed=0)
    pose = look_at([0.5, 3.0, 1.5], [3.0, 3.0, 0.0])
    color, depth = render_frame(empty, pose, K)
    assert color.shape == (240, 320, 3) and depth.shape == (240, 320)
    assert depth[120, 160] == pytest.approx(math.sqrt(2.5**2 + 1.5**2))

    eye = look_at([3.0, 0.0, 0.3], [3.0, 3.0, 0.3])
    color, depth = render_frame(_single_box_scene(), eye, K)
    assert depth[120, 160] == pytest.approx(2.8)
    red, green, _ = color[120, 160].tolist()
    assert red > 100 and green < 60


def test_detection_ray_hits_object_center():
    """A box seen head-on is detected around the principal point."""

    pose = look_at([3.0, 0.0, 0.3], [3.0, 3.0, 0.3])
    observation = render_detections(_single_box_scene(), [pose], K, query_class="cup")
    assert len(observation.detections) == 1
    assert observation.true_group == {0: 0}
    ray = back_project(observation.detections[0], pose, K)
    assert point_to_ray_distance(BOX.center, ray) < 1e-6


def test_detections_need_the_object_in_front():
    """Objects behind the camera, other classes and dropped views yield nothing."""

    scene = _single_box_scene()
    away = look_at([3.0, 1.0, 0.3], [3.0, -3.0, 0.3])
    facing = look_at([3.0, 0.0, 0.3], [3.0, 3.0, 0.3])
    assert render_detections(scene, [away], K, query_class="cup").detections == []
    assert render_detections(scene, [facing], K, query_class="lamp").detections == []

    noise = DetectionNoise(dropout_prob=1.0)
    dropped = render_detections(scene, [facing], K, noise, query_class="cup")
    assert dropped.detections == []


def test_detection_noise_is_seeded():
    """The same seed reproduces noisy detections exactly."""

    scene = generate_scene(SceneSpec(n_objects=6, layout="ring"), seed=2)
    trajectory = panorama_trajectory(scene.center)
    noise = DetectionNoise(bbox_sigma_px=2.0, dropout_prob=0.1)
    classes = sorted(scene.class_counts())
    a = render_detections(scene, trajectory, K, noise, classes, seed=11)
    b = render_detections(scene, trajectory, K, noise, classes, seed=11)
    assert a.detections == b.detections
    assert a.true_group == b.true_group

    with pytest.raises(ValueError):
        DetectionNoise(score_range=(0.9, 0.5))


def test_fusion_recovers_ring_instances():
    """Noise-free panorama detections fuse into exactly the true objects."""

    spec = SceneSpec(n_objects=6, layout="ring")
    for seed in range(5):
        scene = generate_scene(spec, seed=seed)
        trajectory = panorama_trajectory(scene.center)
        for category in scene.class_counts():
            observation = render_detections(scene, trajectory, K, query_class=category)
            detections = observation.detections
            rays = [
                back_project(d, trajectory[d.view_index], K) for d in detections
            ]
            groups = union_find_components(
                len(detections), build_edges(detections, rays)
            )
            found = partition_labels(groups, len(detections))
            assert rand_index(found, observation.labels()) == 1.0


def test_fusion_under_detection_noise():
    """Jittered boxes with dropped views still fuse close to the true objects."""

    spec = SceneSpec(n_objects=6, layout="ring")
    noise = DetectionNoise(bbox_sigma_px=2.0, dropout_prob=0.1)
    scores = []
    for seed in range(8):
        scene = generate_scene(spec, seed=seed)
        trajectory = panorama_trajectory(scene.center)
        for category in scene.class_counts():
            observation = render_detections(
                scene, trajectory, K, noise, query_class=category, seed=seed
            )
            detections = observation.detections
            rays = [
                back_project(d, trajectory[d.view_index], K) for d in detections
            ]
            groups = union_find_components(
                len(detections), build_edges(detections, rays)
            )
            found = partition_labels(groups, len(detections))
            scores.append(rand_index(found, observation.labels()))
    assert scores
    assert np.mean(scores) >= 0.95


def test_rand_index():
    """Pairwise agreement of two partitions."""

    assert rand_index([0, 0, 1], [5, 5, 9]) == 1.0
    assert rand_index([0, 0, 1], [0, 1, 1]) == pytest.approx(1 / 3)
    assert rand_index([3], [4]) == 1.0
    with pytest.raises(LengthMismatchError):
        rand_index([0, 1], [0])
    assert partition_labels([{0, 2}, {1}], 3) == [0, 1, 0]


def test_instruction_suite_is_balanced():
    """Labels alternate and every ambiguous item names a subtype."""

    scene = generate_scene(SceneSpec(n_objects=6, layout="ring"), seed=4)
    items = generate_instruction_suite(scene, 20, seed=1)
    counts = Counter(item.label for item in items)
    assert counts[Label.AMBIGUOUS] == counts[Label.UNAMBIGUOUS] == 10
    assert len({item.instruction_id for item in items}) == 20
    assert all(item.scene_id == scene.scene_id for item in items)
    assert all(item.text[0].isupper() for item in items)
    assert items == generate_instruction_suite(scene, 20, seed=1)


def test_instruction_suite_for_a_single_object():
    """A lone object gets plain and vague-verb instructions only."""

    items = generate_instruction_suite(_single_box_scene(), 4, seed=0)
    subtypes = {item.subtype for item in items}
    assert subtypes == {None, "Action"}
    for item in items:
        assert item.text.lower().rstrip().endswith(("cup", "cup for me"))

    with pytest.raises(ValueError):
        generate_instruction_suite(_single_box_scene(), 0)
