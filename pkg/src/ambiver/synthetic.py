"""Synthetic box scenes with exact ground truth.

Scenes are axis-aligned boxes standing on the floor of a rectangular room.
From a scene this module derives everything the pipeline consumes: camera
trajectories, rendered color and depth frames, detections with known
provenance and benchmark instructions whose labels follow from the scene
geometry by construction. All randomness comes from explicit seeds.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .evaluation import LabeledInstruction
from .exceptions import (
    InsufficientSceneError,
    IoFailureError,
    LengthMismatchError,
    MissingFileError,
    PlacementFailureError,
)
from .fusion import Detection2D
from .geometry import BBox2D, CameraPose, Intrinsics, look_at, project_point
from .reasoning import Label

logger = logging.getLogger(__name__)

Frame = Tuple[np.ndarray, np.ndarray, CameraPose]

DEFAULT_CLASSES = (
    "chair",
    "table",
    "cup",
    "lamp",
    "pillow",
    "plant",
    "book",
    "bottle",
    "backpack",
    "monitor",
)

RGB = Tuple[int, int, int]

COLORS: Dict[str, RGB] = {
    "red": (200, 40, 40),
    "green": (40, 160, 60),
    "blue": (40, 70, 200),
    "yellow": (220, 200, 40),
    "white": (235, 235, 235),
    "black": (30, 30, 30),
    "brown": (120, 80, 40),
    "orange": (230, 130, 30),
}

FLOOR_COLORS = ((150, 150, 150), (120, 120, 120))

# Class-count patterns for the ring layout; equal classes never share adjacent slots.
RING_SLOTS = 6
RING_PATTERNS: Tuple[Tuple[int, ...], ...] = (
    (2, 2, 2),
    (3, 3),
    (2, 2, 1, 1),
    (2, 1, 1, 1, 1),
    (3, 1, 1, 1),
    (1, 1, 1, 1, 1, 1),
    (2, 2, 1),
    (3, 1, 1),
    (2, 1, 1, 1),
    (1, 1, 1, 1, 1),
    (2, 2),
    (3, 1),
    (2, 1, 1),
    (1, 1, 1, 1),
    (3,),
    (2, 1),
    (1, 1, 1),
    (2,),
    (1, 1),
    (1,),
)

LAYOUTS = ("random", "ring")


@dataclass(frozen=True)
class SceneObject:
    """An axis-aligned box."""

    id: int
    category: str
    center: Tuple[float, float, float]
    half_extents: Tuple[float, float, float]
    attributes: Tuple[str, ...] = ()
    color: Tuple[int, int, int] = (128, 128, 128)

    def __post_init__(self) -> None:
        if len(self.center) != 3 or len(self.half_extents) != 3:
            raise ValueError("center and half_extents need three components")
        if min(self.half_extents) <= 0:
            raise ValueError("half extents must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.half_extents)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.half_extents)

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz

    def corners(self) -> np.ndarray:
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        return np.asarray(self.center) + signs * np.asarray(self.half_extents)

    def overlaps(self, other: "SceneObject") -> bool:
        return bool(
            np.all(self.lower < other.upper) and np.all(other.lower < self.upper)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "class": self.category,
            "center": list(self.center),
            "half_extents": list(self.half_extents),
            "attributes": list(self.attributes),
            "color": list(self.color),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneObject":
        cx, cy, cz = (float(v) for v in data["center"])
        hx, hy, hz = (float(v) for v in data["half_extents"])
        r, g, b = (int(v) for v in data.get("color", (128, 128, 128)))
        return cls(
            id=int(data["id"]),
            category=str(data["class"]),
            center=(cx, cy, cz),
            half_extents=(hx, hy, hz),
            attributes=tuple(data.get("attributes", ())),
            color=(r, g, b),
        )


@dataclass(frozen=True)
class SyntheticScene:
    """Boxes in a room ``[0, x] x [0, y] x [0, z]``."""

    objects: Tuple[SceneObject, ...]
    room_extent: Tuple[float, float, float]
    seed: int
    scene_id: str = ""

    def __post_init__(self) -> None:
        room = np.asarray(self.room_extent, dtype=np.float64)
        for obj in self.objects:
            if np.any(obj.lower < 0) or np.any(obj.upper > room):
                raise ValueError(f"object {obj.id} ({obj.category}) leaves the room")
        for i, a in enumerate(self.objects):
            for b in self.objects[i + 1 :]:
                if a.overlaps(b):
                    raise ValueError(f"objects {a.id} and {b.id} overlap")

    @property
    def center(self) -> np.ndarray:
        """Room center on the floor."""
        x, y, _ = self.room_extent
        return np.array([x / 2.0, y / 2.0, 0.0])

    def class_counts(self) -> Counter:
        return Counter(obj.category for obj in self.objects)

    def instances_of(self, category: str) -> List[SceneObject]:
        return [obj for obj in self.objects if obj.category == category]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "room_extent": list(self.room_extent),
            "objects": [obj.to_dict() for obj in self.objects],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticScene":
        x, y, z = (float(v) for v in data["room_extent"])
        return cls(
            objects=tuple(SceneObject.from_dict(o) for o in data["objects"]),
            room_extent=(x, y, z),
            seed=int(data["seed"]),
            scene_id=str(data.get("scene_id", "")),
        )


def save_scene(scene: SyntheticScene, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(scene.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailureError(f"Failed to write scene {path}: {e}")
    return path


def load_scene(path: Union[str, Path]) -> SyntheticScene:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"Scene file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        return SyntheticScene.from_dict(json.load(fh))


@dataclass(frozen=True)
class SceneSpec:
    """What :func:`generate_scene` should place.

    ``layout="random"`` rejection-samples positions anywhere in the room.
    ``layout="ring"`` puts up to six objects on evenly spaced slots around the
    room center, with instances of one class never in adjacent slots.
    """

    n_objects: int = 6
    class_pool: Tuple[str, ...] = DEFAULT_CLASSES
    attribute_pool: Tuple[str, ...] = tuple(COLORS)
    room_extent: Tuple[float, float, float] = (6.0, 6.0, 3.0)
    layout: str = "random"
    ring_radius: float = 2.0
    max_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.n_objects < 1:
            raise ValueError("n_objects must be at least 1")
        if not self.class_pool:
            raise ValueError("class_pool is empty")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {', '.join(LAYOUTS)}")
        if self.layout == "ring" and self.n_objects > RING_SLOTS:
            raise ValueError(f"the ring layout holds at most {RING_SLOTS} objects")


def scene_seed(seed: int, index: int) -> int:
    """Independent, stable seed for the ``index``-th scene of a batch."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _random_color(rng: np.random.Generator) -> RGB:
    r, g, b = (int(c) for c in rng.integers(40, 230, size=3))
    return r, g, b


def _appearance(
    rng: np.random.Generator, pool: Sequence[str]
) -> Tuple[Tuple[str, ...], RGB]:
    if not pool:
        return (), _random_color(rng)
    attribute = str(pool[int(rng.integers(len(pool)))])
    color = COLORS.get(attribute) or _random_color(rng)
    return (attribute,), color


def _random_layout(spec: SceneSpec, rng: np.random.Generator) -> List[SceneObject]:
    room = np.asarray(spec.room_extent, dtype=np.float64)
    objects: List[SceneObject] = []
    for obj_id in range(spec.n_objects):
        category = str(spec.class_pool[int(rng.integers(len(spec.class_pool)))])
        attributes, color = _appearance(rng, spec.attribute_pool)
        for _ in range(spec.max_attempts):
            hx, hy = rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45)
            half = np.array([hx, hy, rng.uniform(0.15, 0.6)])
            xy = rng.uniform(half[:2], room[:2] - half[:2])
            candidate = SceneObject(
                obj_id,
                category,
                (float(xy[0]), float(xy[1]), float(half[2])),
                tuple(float(h) for h in half),  # type: ignore[arg-type]
                attributes,
                color,
            )
            if not any(candidate.overlaps(o) for o in objects):
                objects.append(candidate)
                break
        else:
            raise PlacementFailureError(
                f"Could not place object {obj_id + 1} of {spec.n_objects} in "
                f"{spec.max_attempts} attempts"
            )
    return objects


def _slot_options(count: int) -> List[Tuple[int, ...]]:
    step = RING_SLOTS // count
    return [
        tuple((s + i * step) % RING_SLOTS for i in range(count)) for s in range(step)
    ]


def _assign_slots(
    counts: Sequence[int], rng: np.random.Generator, used: frozenset = frozenset()
) -> Optional[List[Tuple[int, ...]]]:
    if not counts:
        return []
    options = [o for o in _slot_options(counts[0]) if used.isdisjoint(o)]
    for i in rng.permutation(len(options)):
        rest = _assign_slots(counts[1:], rng, used | frozenset(options[i]))
        if rest is not None:
            return [options[i]] + rest
    return None


def _ring_layout(spec: SceneSpec, rng: np.random.Generator) -> List[SceneObject]:
    n_classes = len(spec.class_pool)
    patterns = [
        p for p in RING_PATTERNS if sum(p) == spec.n_objects and len(p) <= n_classes
    ]
    if not patterns:
        raise PlacementFailureError(f"No ring pattern places {spec.n_objects} objects")
    counts = sorted(patterns[int(rng.integers(len(patterns)))], reverse=True)
    chosen = rng.choice(np.array(spec.class_pool), size=len(counts), replace=False)
    classes = [str(c) for c in chosen]

    slots = _assign_slots(counts, rng)
    if slots is None:
        raise PlacementFailureError(
            f"Cannot assign ring slots for class counts {counts}"
        )

    room = np.asarray(spec.room_extent, dtype=np.float64)
    center = room[:2] / 2.0
    offset = rng.uniform(0.0, 2 * math.pi / RING_SLOTS)

    placed = []
    for category, group in zip(classes, slots):
        for slot in group:
            attributes, color = _appearance(rng, spec.attribute_pool)
            hx = float(rng.uniform(0.12, 0.25))
            hy = float(rng.uniform(0.12, 0.25))
            hz = float(rng.uniform(0.15, 0.45))
            angle = offset + 2 * math.pi * slot / RING_SLOTS
            heading = np.array([math.cos(angle), math.sin(angle)])
            x, y = center + spec.ring_radius * heading
            box = ((float(x), float(y), hz), (hx, hy, hz))
            placed.append((slot, category, *box, attributes, color))

    placed.sort(key=lambda item: item[0])
    objects = [SceneObject(i, *item[1:]) for i, item in enumerate(placed)]
    for obj in objects:
        if np.any(obj.lower < 0) or np.any(obj.upper > room):
            raise PlacementFailureError(
                f"ring radius {spec.ring_radius} m leaves the room"
            )
    return objects


def generate_scene(
    spec: Optional[SceneSpec] = None, seed: int = 0, scene_id: str = ""
) -> SyntheticScene:
    """Place ``spec.n_objects`` non-overlapping boxes, deterministically per seed.

    Raises:
        PlacementFailureError: If an object cannot be placed within
            ``spec.max_attempts`` tries.
    """

    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    if spec.layout == "ring":
        objects = _ring_layout(spec, rng)
    else:
        objects = _random_layout(spec, rng)
    scene_id = scene_id or f"synthetic-{seed}"
    scene = SyntheticScene(tuple(objects), spec.room_extent, seed, scene_id)
    logger.debug("generated scene %s with %d objects", scene.scene_id, len(objects))
    return scene


def synthetic_intrinsics(
    width: int = 320, height: int = 240, focal: float = 200.0
) -> Intrinsics:
    return Intrinsics(focal, focal, width / 2.0, height / 2.0, width, height)


def orbit_trajectory(
    center: Sequence[float],
    radius: float,
    n_poses: int = 24,
    height: float = 1.5,
) -> List[CameraPose]:
    """Cameras on a horizontal circle around ``center``, all looking at it."""

    c = np.asarray(center, dtype=np.float64)
    poses = []
    for i in range(n_poses):
        angle = 2 * math.pi * i / n_poses
        heading = np.array([math.cos(angle), math.sin(angle)])
        eye = np.array([*(c[:2] + radius * heading), height])
        poses.append(look_at(eye, c, frame_index=i))
    return poses


def panorama_trajectory(
    center: Sequence[float],
    radius: float = 0.3,
    n_poses: int = 24,
    height: float = 1.2,
    look_distance: float = 2.0,
    look_height: float = 0.2,
) -> List[CameraPose]:
    """A camera turning in place near ``center``, looking outward and down."""

    c = np.asarray(center, dtype=np.float64)
    poses = []
    for i in range(n_poses):
        angle = 2 * math.pi * i / n_poses
        heading = np.array([math.cos(angle), math.sin(angle)])
        eye = np.array([*(c[:2] + radius * heading), height])
        target = np.array([*(c[:2] + look_distance * heading), look_height])
        poses.append(look_at(eye, target, frame_index=i))
    return poses


def default_orbit(
    scene: SyntheticScene, n_poses: int = 24, height: float = 1.5
) -> List[CameraPose]:
    """24-pose orbit at 1.5 times the room's half-diagonal."""
    x, y, _ = scene.room_extent
    return orbit_trajectory(scene.center, 1.5 * math.hypot(x, y) / 2.0, n_poses, height)


def _pixel_rays(pose: CameraPose, k: Intrinsics) -> np.ndarray:
    vs, us = np.mgrid[0 : k.height, 0 : k.width]
    cam = np.stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones((k.height, k.width))], axis=-1
    ).reshape(-1, 3)
    # camera z stays 1, so the ray parameter of a hit is its depth
    return cam @ pose.rotation.T


def render_frame(
    scene: SyntheticScene, pose: CameraPose, k: Intrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    """Ray-cast color (uint8) and depth (meters, 0 = no hit) images."""

    rays = _pixel_rays(pose, k)
    origin = pose.translation
    n = len(rays)
    depth = np.full(n, np.inf)
    color = np.zeros((n, 3), dtype=np.uint8)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = -origin[2] / rays[:, 2]
        hits = origin + t_floor[:, None] * rays
        on_floor = (
            (rays[:, 2] < 0)
            & (t_floor > 0)
            & (hits[:, 0] >= 0)
            & (hits[:, 0] <= scene.room_extent[0])
            & (hits[:, 1] >= 0)
            & (hits[:, 1] <= scene.room_extent[1])
        )
        checker = (np.floor(hits[:, 0]) + np.floor(hits[:, 1])) % 2 == 0
        depth[on_floor] = t_floor[on_floor]
        color[on_floor & checker] = FLOOR_COLORS[0]
        color[on_floor & ~checker] = FLOOR_COLORS[1]

        inverse = 1.0 / rays
        shading = np.array([0.85, 0.7, 1.0])
        for obj in scene.objects:
            t1 = (obj.lower - origin) * inverse
            t2 = (obj.upper - origin) * inverse
            near = np.minimum(t1, t2)
            far = np.maximum(t1, t2)
            t_near = np.nanmax(near, axis=1)
            t_far = np.nanmin(far, axis=1)
            hit = (t_near <= t_far) & (t_near > 0) & (t_near < depth)
            if not np.any(hit):
                continue
            face = np.nanargmax(near[hit], axis=1)
            depth[hit] = t_near[hit]
            shaded = np.asarray(obj.color, dtype=np.float64) * shading[face][:, None]
            color[hit] = shaded.astype(np.uint8)

    depth[~np.isfinite(depth)] = 0.0
    return color.reshape(k.height, k.width, 3), depth.reshape(k.height, k.width)


def render_frames(
    scene: SyntheticScene, trajectory: Sequence[CameraPose], k: Intrinsics
) -> List[Frame]:
    return [(*render_frame(scene, pose, k), pose) for pose in trajectory]


@dataclass(frozen=True)
class DetectionNoise:
    """Perturbations applied by :func:`render_detections`."""

    bbox_sigma_px: float = 0.0
    score_range: Tuple[float, float] = (0.6, 0.95)
    dropout_prob: float = 0.0

    def __post_init__(self) -> None:
        low, high = self.score_range
        if not 0 <= low <= high <= 1:
            raise ValueError("score_range must satisfy 0 <= low <= high <= 1")
        if self.bbox_sigma_px < 0:
            raise ValueError("bbox_sigma_px must be non-negative")
        if not 0 <= self.dropout_prob <= 1:
            raise ValueError("dropout_prob must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class SyntheticObservation:
    """Detections with their true object ids."""

    detections: List[Detection2D]
    true_group: Dict[int, int]
    poses: List[CameraPose]
    frames: Optional[List[Frame]] = None

    def __post_init__(self) -> None:
        if set(self.true_group) != set(range(len(self.detections))):
            raise ValueError("every detection needs exactly one true object")

    def labels(self) -> List[int]:
        return [self.true_group[i] for i in range(len(self.detections))]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "detections": [d.to_dict() for d in self.detections],
            "true_group": {str(i): obj for i, obj in self.true_group.items()},
            "poses": [p.matrix.reshape(-1).tolist() for p in self.poses],
        }


def _projected_box(
    obj: SceneObject, pose: CameraPose, k: Intrinsics
) -> Optional[np.ndarray]:
    cam = pose.to_camera(obj.corners())
    if np.any(cam[:, 2] <= 1e-6):
        return None
    center = project_point(obj.center, pose, k)
    if center is None or not (0 <= center[0] < k.width and 0 <= center[1] < k.height):
        return None
    u = k.fx * cam[:, 0] / cam[:, 2] + k.cx
    v = k.fy * cam[:, 1] / cam[:, 2] + k.cy
    return np.array([u.min(), v.min(), u.max(), v.max()])


def render_detections(
    scene: SyntheticScene,
    trajectory: Sequence[CameraPose],
    k: Intrinsics,
    noise: Optional[DetectionNoise] = None,
    query_class: Union[str, Iterable[str]] = "",
    seed: int = 0,
    views: Optional[Iterable[int]] = None,
) -> SyntheticObservation:
    """Simulate an open-vocabulary detector on ``trajectory``.

    Each object of the query class(es) whose box lies in front of the camera
    and whose projected center falls inside the image yields one detection:
    the bounding box of its projected corners, perturbed and clipped, with a
    uniform random score. Occlusion is ignored.

    Args:
        scene: The scene.
        trajectory: Camera poses; ``frame_index`` becomes the view index.
        k: Shared intrinsics.
        noise: Box noise, score range and dropout; none by default.
        query_class: A class name or several.
        seed: Seed of the noise generator.
        views: Restrict to poses with these frame indices.
    """

    noise = noise or DetectionNoise()
    classes = {query_class} if isinstance(query_class, str) else set(query_class)
    wanted = None if views is None else set(views)
    rng = np.random.default_rng(seed)

    detections: List[Detection2D] = []
    true_group: Dict[int, int] = {}
    poses = [p for p in trajectory if wanted is None or p.frame_index in wanted]
    targets = [obj for obj in scene.objects if obj.category in classes]

    for pose in poses:
        for obj in targets:
            box = _projected_box(obj, pose, k)
            if box is None:
                continue
            dropped = rng.random() < noise.dropout_prob
            jitter = np.zeros(4)
            if noise.bbox_sigma_px > 0:
                jitter = rng.normal(0.0, noise.bbox_sigma_px, size=4)
            score = float(rng.uniform(*noise.score_range))
            if dropped:
                continue
            x0, y0, x1, y1 = box + jitter
            x0, x1 = max(0.0, float(x0)), min(float(k.width), float(x1))
            y0, y1 = max(0.0, float(y0)), min(float(k.height), float(y1))
            if x1 - x0 < 1.0 or y1 - y0 < 1.0:
                continue
            true_group[len(detections)] = obj.id
            bbox = BBox2D(x0, y0, x1, y1)
            detections.append(
                Detection2D(pose.frame_index, bbox, score, k.width, k.height)
            )

    return SyntheticObservation(detections, true_group, list(poses))


def rand_index(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Fraction of item pairs on which two partitions agree."""

    if len(a) != len(b):
        raise LengthMismatchError(f"{len(a)} labels against {len(b)} labels")
    n = len(a)
    if n < 2:
        return 1.0
    codes_a = np.unique(np.array([str(x) for x in a]), return_inverse=True)[1]
    codes_b = np.unique(np.array([str(x) for x in b]), return_inverse=True)[1]
    same_a = codes_a[:, None] == codes_a[None, :]
    same_b = codes_b[:, None] == codes_b[None, :]
    upper = np.triu_indices(n, k=1)
    return float(np.mean(same_a[upper] == same_b[upper]))


def partition_labels(groups: Iterable[Iterable[int]], n: int) -> List[int]:
    """Component label of every index ``0..n-1``."""
    labels = [-1] * n
    for g, members in enumerate(groups):
        for i in members:
            labels[i] = g
    return labels


# Instruction templates. Each yields (text, label, subtype) options for a scene.
_PICK_VERBS = ("pick up", "bring me", "grab", "move")
_VAGUE_VERBS = ("handle", "adjust", "manage", "deal with")
_SUBJECTIVE = ("large", "big", "small", "nice")
_OBSERVER_RELATIONS = ("to the left of", "to the right of", "behind", "in front of")
_NEUTRAL_RELATIONS = ("by", "next to", "near")
_PREFIXES = ("", "please ", "could you ", "could you please ")
_SUFFIXES = ("", " for me")

Option = Tuple[str, Label, Optional[str]]


def _pick(rng: np.random.Generator, values: Sequence[str]) -> str:
    return str(values[int(rng.integers(len(values)))])


def _nearest_other(obj: SceneObject, scene: SyntheticScene) -> Optional[SceneObject]:
    others = [o for o in scene.objects if o.category != obj.category]
    if not others:
        return None
    c = np.asarray(obj.center[:2])

    def distance(o: SceneObject) -> Tuple[float, int]:
        return float(np.linalg.norm(np.asarray(o.center[:2]) - c)), o.id

    return min(others, key=distance)


def _template_options(
    scene: SyntheticScene, rng: np.random.Generator
) -> Tuple[List[Option], List[Option]]:
    counts = scene.class_counts()
    classes = sorted(counts)

    def verb() -> str:
        return _pick(rng, _PICK_VERBS)

    ambiguous: List[Option] = []
    unambiguous: List[Option] = []
    for c in classes:
        instances = scene.instances_of(c)
        if counts[c] >= 2:
            ambiguous.append((f"{verb()} the {c}", Label.AMBIGUOUS, "Instance"))
            text = f"{verb()} the {_pick(rng, _SUBJECTIVE)} {c}"
            ambiguous.append((text, Label.AMBIGUOUS, "Attribute"))
            volumes = [o.volume for o in instances]
            if len(set(volumes)) == len(volumes):
                extreme = ("largest", "smallest")
                text = f"{verb()} the {_pick(rng, extreme)} {c}"
                unambiguous.append((text, Label.UNAMBIGUOUS, None))
            for o in classes:
                if o == c or counts[o] != 1:
                    continue
                anchored = [
                    inst
                    for inst in instances
                    if getattr(_nearest_other(inst, scene), "category", None) == o
                ]
                if len(anchored) == 1:
                    text = f"{verb()} the {c} {_pick(rng, _NEUTRAL_RELATIONS)} the {o}"
                    unambiguous.append((text, Label.UNAMBIGUOUS, None))
        else:
            unambiguous.append((f"{verb()} the {c}", Label.UNAMBIGUOUS, None))
            text = f"{_pick(rng, _VAGUE_VERBS)} the {c}"
            ambiguous.append((text, Label.AMBIGUOUS, "Action"))
        for o in classes:
            if o != c:
                text = f"{verb()} the {c} {_pick(rng, _OBSERVER_RELATIONS)} the {o}"
                ambiguous.append((text, Label.AMBIGUOUS, "Spatial"))
                break
    return ambiguous, unambiguous


def generate_instruction_suite(
    scene: SyntheticScene,
    n: int,
    seed: int = 0,
    split: str = "test",
) -> List[LabeledInstruction]:
    """Template instructions whose labels follow from the scene by construction.

    Ambiguous and unambiguous items alternate, so the label split stays
    within one item of even whenever both kinds are available.

    Raises:
        InsufficientSceneError: If no template applies to the scene.
    """

    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    ambiguous, unambiguous = _template_options(scene, rng)
    if not ambiguous and not unambiguous:
        raise InsufficientSceneError(
            f"No instruction template fits scene {scene.scene_id}"
        )

    queues: Dict[bool, List[Option]] = {True: [], False: []}
    pools = {True: ambiguous, False: unambiguous}

    items = []
    for i in range(n):
        want = i % 2 == 0
        if not pools[want]:
            want = not want
        if not queues[want]:
            queues[want] = [pools[want][j] for j in rng.permutation(len(pools[want]))]
        core, label, subtype = queues[want].pop()
        text = f"{_pick(rng, _PREFIXES)}{core}{_pick(rng, _SUFFIXES)}"
        items.append(
            LabeledInstruction(
                scene_id=scene.scene_id,
                instruction_id=f"{scene.scene_id}-i{i:03d}",
                text=text[0].upper() + text[1:],
                label=label,
                subtype=subtype,
                split=split,
            )
        )
    return items


__all__ = [
    "COLORS",
    "DEFAULT_CLASSES",
    "DetectionNoise",
    "SceneObject",
    "SceneSpec",
    "SyntheticObservation",
    "SyntheticScene",
    "default_orbit",
    "generate_instruction_suite",
    "generate_scene",
    "load_scene",
    "orbit_trajectory",
    "panorama_trajectory",
    "partition_labels",
    "rand_index",
    "render_detections",
    "render_frame",
    "render_frames",
    "save_scene",
    "scene_seed",
]
