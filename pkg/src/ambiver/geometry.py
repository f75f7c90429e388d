"""Pose, ray and projection math shared by every perception stage.

All poses are camera-to-world transforms in a single camera convention:
``+z`` forward, ``+x`` right and ``+y`` down. Dataset loaders convert into it
before anything else touches the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import BBoxOutOfBoundsError, MissingFileError, MissingIntrinsicsError

if TYPE_CHECKING:
    from .fusion import Detection2D

# Below this cross-product norm the two-ray system is treated as singular.
PARALLEL_EPS = 1e-12

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(values: ArrayLike, shape: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rigid transform of one frame."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_index: int = 0

    def __post_init__(self) -> None:
        rotation = _frozen(self.rotation, (3, 3), "rotation")
        translation = _frozen(self.translation, (3,), "translation")

        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) >= 1e-6:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) >= 1e-6:
            raise ValueError("rotation must be a proper rotation (det = 1)")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")

        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls, frame_index: int = 0) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3), frame_index)

    @classmethod
    def from_matrix(
        cls, matrix: ArrayLike, frame_index: int = 0, orthonormalize: bool = False
    ) -> "CameraPose":
        """Build a pose from a 4x4 camera-to-world matrix.

        Args:
            matrix: Row-major 4x4 homogeneous transform.
            frame_index: Index of the frame in its stream.
            orthonormalize: Project the rotation block back onto SO(3). Useful
                for poses read from text files with limited precision.
        """
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        rotation = m[:3, :3]
        if orthonormalize:
            u, _, vt = np.linalg.svd(rotation)
            rotation = u @ vt
            if np.linalg.det(rotation) < 0:
                u[:, -1] *= -1
                rotation = u @ vt
        return cls(rotation, m[:3, 3], frame_index)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_world(self, points_cam: np.ndarray) -> np.ndarray:
        """Map ``(N, 3)`` camera-frame points into the world frame."""
        return points_cam @ self.rotation.T + self.translation

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        """Map ``(N, 3)`` world points into the camera frame."""
        return (points_world - self.translation) @ self.rotation

    def with_frame_index(self, frame_index: int) -> "CameraPose":
        return CameraPose(self.rotation, self.translation, frame_index)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics of a scene's color and depth frames."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_value(cls, value: Any) -> "Intrinsics":
        if isinstance(value, cls):
            return value
        if isinstance(value, Mapping):
            required = ("fx", "fy", "cx", "cy", "width", "height")
            missing = [k for k in required if k not in value]
            if missing:
                raise MissingIntrinsicsError(
                    f"Intrinsics are missing field(s): {', '.join(missing)}"
                )
            return cls(
                fx=float(value["fx"]),
                fy=float(value["fy"]),
                cx=float(value["cx"]),
                cy=float(value["cy"]),
                width=int(value["width"]),
                height=int(value["height"]),
            )
        raise TypeError(
            "Intrinsics must be built from a mapping or an Intrinsics instance."
        )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True, eq=False)
class Ray3:
    """Half-line ``origin + t * direction`` for ``t >= 0``."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        origin = _frozen(self.origin, (3,), "origin")
        direction = _frozen(self.direction, (3,), "direction")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError("direction must be unit-norm")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    @classmethod
    def through(cls, origin: ArrayLike, direction: ArrayLike) -> "Ray3":
        """Build a ray, normalizing ``direction``."""
        d = np.asarray(direction, dtype=np.float64)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise ValueError("direction must be non-zero")
        return cls(np.asarray(origin, dtype=np.float64), d / norm)

    def at(self, t: float) -> np.ndarray:
        return self.origin + max(t, 0.0) * self.direction


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned pixel box."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box: {self.as_list()}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox2D":
        if len(values) != 4:
            raise ValueError("a box needs exactly four coordinates")
        return cls(*(float(v) for v in values))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_list(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def clipped(self, width: float, height: float) -> "BBox2D":
        """Clip to ``[0, width] x [0, height]``."""
        return BBox2D(
            max(0.0, self.x_min),
            max(0.0, self.y_min),
            min(float(width), self.x_max),
            min(float(height), self.y_max),
        )

    def expanded(self, margin: float, width: float, height: float) -> "BBox2D":
        """Grow each side by ``margin`` of the box size, then clip to the image."""
        dx = self.width * margin
        dy = self.height * margin
        return BBox2D(
            self.x_min - dx, self.y_min - dy, self.x_max + dx, self.y_max + dy
        ).clipped(width, height)


def pose_deviation(a: CameraPose, b: CameraPose) -> Tuple[float, float]:
    """Translation (meters) and geodesic rotation (degrees) between two poses."""

    translation = float(np.linalg.norm(a.translation - b.translation))
    relative = a.rotation.T @ b.rotation
    cos_angle = np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)
    return translation, float(np.degrees(np.arccos(cos_angle)))


def back_project(det: "Detection2D", pose: CameraPose, k: Intrinsics) -> Ray3:
    """Cast the ray through the center of a detection's box.

    Raises:
        BBoxOutOfBoundsError: If the box center lies outside the image.
    """

    u, v = det.bbox.center
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise BBoxOutOfBoundsError(
            f"Box center ({u:.1f}, {v:.1f}) outside {k.width}x{k.height} image"
        )

    direction_cam = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    direction = pose.rotation @ direction_cam
    return Ray3(pose.translation.copy(), direction / np.linalg.norm(direction))


def point_to_ray_distance(point: ArrayLike, ray: Ray3) -> float:
    """Distance from ``point`` to the closest point of ``ray`` (t clamped at 0)."""

    p = np.asarray(point, dtype=np.float64)
    t = max(float(np.dot(p - ray.origin, ray.direction)), 0.0)
    return float(np.linalg.norm(p - (ray.origin + t * ray.direction)))


def _ray_key(ray: Ray3) -> Tuple[float, ...]:
    return tuple(ray.origin.tolist()) + tuple(ray.direction.tolist())


def ray_min_distance(a: Ray3, b: Ray3) -> float:
    """Minimum distance between two half-lines.

    The unconstrained closest-point pair is used when both parameters are
    non-negative; otherwise the minimum lies on a clamped boundary. The pair is
    put in a canonical order first so the result is exactly symmetric.
    """

    if _ray_key(b) < _ray_key(a):
        a, b = b, a

    w0 = a.origin - b.origin
    # Both endpoints at t = 0 bound the result from above.
    best = float(np.linalg.norm(w0))

    if np.linalg.norm(np.cross(a.direction, b.direction)) < PARALLEL_EPS:
        return min(
            best,
            point_to_ray_distance(a.origin, b),
            point_to_ray_distance(b.origin, a),
        )

    c = float(np.dot(a.direction, b.direction))
    d = float(np.dot(a.direction, w0))
    e = float(np.dot(b.direction, w0))
    denom = 1.0 - c * c

    candidates = [
        ((c * e - d) / denom, (e - c * d) / denom),
        (0.0, max(e, 0.0)),
        (max(-d, 0.0), 0.0),
    ]
    for s, t in candidates:
        if s < 0 or t < 0:
            continue
        gap = (a.origin + s * a.direction) - (b.origin + t * b.direction)
        best = min(best, float(np.linalg.norm(gap)))
    return best


def ray_angle(a: Ray3, b: Ray3) -> float:
    """Angle between ray directions in degrees, in ``[0, 180]``."""
    cos_angle = np.clip(float(np.dot(a.direction, b.direction)), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_angle)))


def area_ratio(a: BBox2D, b: BBox2D) -> float:
    """Smaller box area over larger box area, in ``(0, 1]``."""
    small, large = sorted((a.area, b.area))
    return small / large


def project_point(
    point: ArrayLike, pose: CameraPose, k: Intrinsics
) -> Optional[Tuple[float, float, float]]:
    """Project a world point to ``(u, v, depth)``; ``None`` behind the camera."""

    p_cam = pose.to_camera(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]
    if p_cam[2] <= 1e-9:
        return None
    u = k.fx * p_cam[0] / p_cam[2] + k.cx
    v = k.fy * p_cam[1] / p_cam[2] + k.cy
    return float(u), float(v), float(p_cam[2])


def look_at(
    eye: ArrayLike,
    target: ArrayLike,
    frame_index: int = 0,
    up: ArrayLike = (0.0, 0.0, 1.0),
) -> CameraPose:
    """Pose of a camera at ``eye`` looking at ``target`` with world ``up``."""

    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)

    up_vec = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up_vec)
    if np.linalg.norm(right) < 1e-9:
        # Looking along ``up``: pick world +y as the image "up" instead.
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)

    return CameraPose(np.column_stack([right, down, forward]), eye, frame_index)


def _frame_key(path: Path) -> Tuple[int, str]:
    stem = path.stem
    return (int(stem), stem) if stem.isdigit() else (-1, stem)


def load_poses(path: Union[str, Path]) -> List[CameraPose]:
    """Read camera-to-world poses.

    ``path`` is either one text file holding 16 numbers per pose (one pose per
    line or a single pose spread over four lines) or a directory of such
    files, read in name order.
    """

    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"Pose file not found: {path}")

    if path.is_dir():
        files = sorted(
            (p for p in path.iterdir() if p.suffix == ".txt"), key=_frame_key
        )
    else:
        files = [path]
    values: List[float] = []
    for file in files:
        values.extend(float(tok) for tok in file.read_text(encoding="utf-8").split())

    if len(values) % 16:
        raise ValueError(f"{path}: pose data is not a multiple of 16 numbers")

    matrices = np.array(values, dtype=np.float64).reshape(-1, 4, 4)
    return [
        CameraPose.from_matrix(m, frame_index=i, orthonormalize=True)
        for i, m in enumerate(matrices)
    ]


def save_poses(poses: Sequence[CameraPose], path: Union[str, Path]) -> Path:
    """Write poses one row-major 4x4 matrix per line."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        " ".join(repr(float(x)) for x in pose.matrix.reshape(-1)) for pose in poses
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_intrinsics(path: Union[str, Path]) -> Intrinsics:
    """Read ``{fx, fy, cx, cy, width, height}`` from a JSON file."""

    path = Path(path)
    if not path.exists():
        raise MissingIntrinsicsError(f"Intrinsics file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        return Intrinsics.from_value(json.load(fh))


def save_intrinsics(k: Intrinsics, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(k.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


__all__ = [
    "BBox2D",
    "CameraPose",
    "Intrinsics",
    "PARALLEL_EPS",
    "Ray3",
    "area_ratio",
    "back_project",
    "load_intrinsics",
    "load_poses",
    "look_at",
    "point_to_ray_distance",
    "pose_deviation",
    "project_point",
    "ray_angle",
    "ray_min_distance",
    "save_intrinsics",
    "save_poses",
]
