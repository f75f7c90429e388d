"""Scene sources and grounding detectors.

A scene source hands out the posed frame stream of one scan; a detector turns
a grounding query into per-view :class:`~ambiver.fusion.Detection2D` lists.

On disk a scene is a directory::

    <scene_id>/
        poses.txt          one camera-to-world 4x4 matrix per line
        intrinsics.json    {"fx", "fy", "cx", "cy", "width", "height"}
        color/<i>.png      RGB frames
        depth/<i>.png      16-bit depth in millimeters, 0 = invalid
        scene.json         optional synthetic ground truth
"""

from __future__ import annotations

import hashlib
import logging
import re
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .evaluation import LabeledInstruction
from .exceptions import IoFailureError, MissingFileError, MissingKeyframeError
from .fusion import Detection2D, load_detections, save_detections
from .geometry import (
    CameraPose,
    Intrinsics,
    load_intrinsics,
    load_poses,
    save_intrinsics,
    save_poses,
)
from .synthetic import (
    DetectionNoise,
    SceneSpec,
    SyntheticScene,
    default_orbit,
    generate_instruction_suite,
    generate_scene,
    load_scene,
    panorama_trajectory,
    render_detections,
    render_frame,
    save_scene,
    scene_seed,
    synthetic_intrinsics,
)

logger = logging.getLogger(__name__)

Frame = Tuple[np.ndarray, np.ndarray, CameraPose]

DEPTH_SCALE = 1000.0
_WORD_RE = re.compile(r"[a-z0-9]+")


def save_depth_png(depth: np.ndarray, path: Union[str, Path]) -> Path:
    """Store meters as 16-bit millimeters."""

    path = Path(path)
    scaled = np.round(np.asarray(depth, dtype=np.float64) * DEPTH_SCALE)
    millimeters = np.clip(scaled, 0, 65535)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(millimeters.astype(np.uint16)).save(path, format="PNG")
    except OSError as e:
        raise IoFailureError(f"Failed to write depth image {path}: {e}")
    return path


def load_depth_png(path: Union[str, Path]) -> np.ndarray:
    """Read a 16-bit millimeter PNG as float meters."""

    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"Depth image not found: {path}")
    with Image.open(path) as image:
        return np.asarray(image, dtype=np.float64) / DEPTH_SCALE


def load_color(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"Color image not found: {path}")
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"))


def save_color(color: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.asarray(color, dtype=np.uint8)).save(path, format="PNG")
    except OSError as e:
        raise IoFailureError(f"Failed to write color image {path}: {e}")
    return path


class SceneSource(ABC):
    """Posed RGB-D frames of one scene."""

    scene_id: str
    intrinsics: Intrinsics

    @abstractmethod
    def poses(self) -> List[CameraPose]:
        """All camera poses in stream order."""

    @abstractmethod
    def color(self, view: int) -> np.ndarray:
        """RGB frame of ``view``."""

    @abstractmethod
    def depth(self, view: int) -> np.ndarray:
        """Depth of ``view`` in meters."""

    @property
    def synthetic_scene(self) -> Optional[SyntheticScene]:
        return None

    def pose(self, view: int) -> CameraPose:
        poses = self.poses()
        if not 0 <= view < len(poses):
            raise MissingKeyframeError(f"Scene {self.scene_id} has no view {view}")
        return poses[view]

    def frames(self, views: Iterable[int]) -> List[Frame]:
        return [(self.color(v), self.depth(v), self.pose(v)) for v in views]

    def keyframe_store(self, views: Iterable[int]) -> Dict[int, np.ndarray]:
        return {v: self.color(v) for v in views}


class DirectoryScene(SceneSource):
    """A scene stored as a directory (see the module docstring)."""

    def __init__(self, root: Union[str, Path], scene_id: Optional[str] = None) -> None:
        self.root = Path(root)
        if not self.root.is_dir():
            raise MissingFileError(f"Scene directory not found: {self.root}")
        self.scene_id = scene_id or self.root.name
        self.intrinsics = load_intrinsics(self.root / "intrinsics.json")
        self._poses: Optional[List[CameraPose]] = None
        self._scene: Optional[SyntheticScene] = None
        if (self.root / "scene.json").exists():
            self._scene = load_scene(self.root / "scene.json")

    def poses(self) -> List[CameraPose]:
        if self._poses is None:
            self._poses = load_poses(self.root / "poses.txt")
        return self._poses

    def _frame_path(self, kind: str, view: int) -> Path:
        for suffix in (".png", ".jpg"):
            path = self.root / kind / f"{view}{suffix}"
            if path.exists():
                return path
        raise MissingKeyframeError(f"Scene {self.scene_id} has no {kind} frame {view}")

    def color(self, view: int) -> np.ndarray:
        return load_color(self._frame_path("color", view))

    def depth(self, view: int) -> np.ndarray:
        return load_depth_png(self._frame_path("depth", view))

    @property
    def synthetic_scene(self) -> Optional[SyntheticScene]:
        return self._scene


class SyntheticSceneSource(SceneSource):
    """Frames ray-cast on demand from a :class:`SyntheticScene`."""

    def __init__(
        self,
        scene: SyntheticScene,
        trajectory: Sequence[CameraPose],
        intrinsics: Intrinsics,
    ) -> None:
        self.scene = scene
        self.scene_id = scene.scene_id
        self.intrinsics = intrinsics
        self._poses = list(trajectory)
        self._rendered: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def poses(self) -> List[CameraPose]:
        return self._poses

    def _render(self, view: int) -> Tuple[np.ndarray, np.ndarray]:
        with self._lock:
            if view not in self._rendered:
                self._rendered[view] = render_frame(
                    self.scene, self.pose(view), self.intrinsics
                )
            return self._rendered[view]

    def color(self, view: int) -> np.ndarray:
        return self._render(view)[0]

    def depth(self, view: int) -> np.ndarray:
        return self._render(view)[1]

    @property
    def synthetic_scene(self) -> Optional[SyntheticScene]:
        return self.scene

    def write(self, root: Union[str, Path]) -> DirectoryScene:
        """Materialize as a scene directory and return it."""

        root = Path(root)
        save_intrinsics(self.intrinsics, root / "intrinsics.json")
        save_poses(self._poses, root / "poses.txt")
        save_scene(self.scene, root / "scene.json")
        for view in range(len(self._poses)):
            save_color(self.color(view), root / "color" / f"{view}.png")
            save_depth_png(self.depth(view), root / "depth" / f"{view}.png")
        return DirectoryScene(root, self.scene_id)


class DetectorBackend(ABC):
    """Open-vocabulary grounding detector."""

    version = "abstract"

    @abstractmethod
    def detect(
        self, source: SceneSource, query: str, views: Sequence[int]
    ) -> List[Detection2D]:
        """Detections of ``query`` in the given views, in view order."""


def _query_seed(scene_id: str, query: str, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}\0{scene_id}\0{query}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class SyntheticDetector(DetectorBackend):
    """Detects every object whose class name occurs as a word of the query.

    Works on scenes that carry synthetic ground truth. Noise is seeded from the
    scene id and the query, so repeated calls agree.
    """

    def __init__(
        self,
        noise: Optional[DetectionNoise] = None,
        seed: int = 0,
        version: str = "synthetic-1",
    ) -> None:
        self.noise = noise or DetectionNoise()
        self.seed = seed
        self.version = version

    def detect(
        self, source: SceneSource, query: str, views: Sequence[int]
    ) -> List[Detection2D]:
        scene = source.synthetic_scene
        if scene is None:
            raise MissingFileError(
                f"Scene {source.scene_id} has no synthetic ground truth"
            )
        words = set(_WORD_RE.findall(query.lower()))
        classes = sorted(c for c in scene.class_counts() if c in words)
        if not classes:
            return []
        observation = render_detections(
            scene,
            source.poses(),
            source.intrinsics,
            self.noise,
            classes,
            seed=_query_seed(source.scene_id, query, self.seed),
        )
        # noise is drawn over the whole stream so a view subset sees the same boxes
        wanted = set(views)
        return [d for d in observation.detections if d.view_index in wanted]


class DetectionCache:
    """Detections stored under a hash of ``(scene_id, query, detector_version)``."""

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)

    @staticmethod
    def key(scene_id: str, query: str, detector_version: str) -> str:
        text = f"{scene_id}\0{query}\0{detector_version}"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def path(self, scene_id: str, query: str, detector_version: str) -> Path:
        key = self.key(scene_id, query, detector_version)
        return self.root / key[:2] / f"{key}.json"

    def get(
        self, scene_id: str, query: str, detector_version: str
    ) -> Optional[List[Detection2D]]:
        path = self.path(scene_id, query, detector_version)
        if not path.exists():
            return None
        return load_detections(path)

    def put(
        self,
        scene_id: str,
        query: str,
        detector_version: str,
        detections: Sequence[Detection2D],
    ) -> Path:
        path = self.path(scene_id, query, detector_version)
        # write next to the target first so readers never see a partial file
        tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
        save_detections(detections, tmp)
        tmp.replace(path)
        return path


class CachedDetector(DetectorBackend):
    """Serves detections from a :class:`DetectionCache`, filling it on a miss."""

    def __init__(self, inner: DetectorBackend, cache: DetectionCache) -> None:
        self.inner = inner
        self.cache = cache
        self.version = inner.version

    def detect(
        self, source: SceneSource, query: str, views: Sequence[int]
    ) -> List[Detection2D]:
        # the cache key has no view list, so always store the full stream
        cached = self.cache.get(source.scene_id, query, self.version)
        if cached is None:
            cached = self.inner.detect(source, query, range(len(source.poses())))
            self.cache.put(source.scene_id, query, self.version, cached)
            logger.debug(
                "cached %d detections for %r in %s", len(cached), query, source.scene_id
            )
        wanted = set(views)
        return [d for d in cached if d.view_index in wanted]


def load_scenes(root: Union[str, Path]) -> Dict[str, DirectoryScene]:
    """Every scene directory under ``root/scenes``, keyed by scene id."""

    scenes_dir = Path(root) / "scenes"
    if not scenes_dir.is_dir():
        raise MissingFileError(f"Scene folder not found: {scenes_dir}")
    return {
        p.name: DirectoryScene(p) for p in sorted(scenes_dir.iterdir()) if p.is_dir()
    }


def build_synthetic_benchmark(
    n_scenes: int,
    seed: int = 0,
    instructions_per_scene: int = 6,
    spec: Optional[SceneSpec] = None,
    intrinsics: Optional[Intrinsics] = None,
    trajectory: str = "panorama",
) -> Tuple[List[SyntheticSceneSource], List[LabeledInstruction]]:
    """Seeded synthetic scenes with their instruction suites.

    Scene ``i`` is generated from ``scene_seed(seed, i)``. The default is the
    ring layout observed by a camera turning in place at the room center.
    """

    spec = spec or SceneSpec(layout="ring")
    k = intrinsics or synthetic_intrinsics()
    sources: List[SyntheticSceneSource] = []
    items: List[LabeledInstruction] = []
    for i in range(n_scenes):
        s = scene_seed(seed, i)
        scene = generate_scene(spec, s, scene_id=f"scene{i:04d}")
        if trajectory == "orbit":
            poses = default_orbit(scene)
        elif trajectory == "panorama":
            poses = panorama_trajectory(scene.center, look_distance=spec.ring_radius)
        else:
            raise ValueError(
                f"trajectory must be 'panorama' or 'orbit', got {trajectory!r}"
            )
        sources.append(SyntheticSceneSource(scene, poses, k))
        items.extend(generate_instruction_suite(scene, instructions_per_scene, seed=s))
    logger.info(
        "built %d synthetic scenes with %d instructions", len(sources), len(items)
    )
    return sources, items


__all__ = [
    "CachedDetector",
    "DetectionCache",
    "DetectorBackend",
    "DirectoryScene",
    "SceneSource",
    "SyntheticDetector",
    "SyntheticSceneSource",
    "build_synthetic_benchmark",
    "load_color",
    "load_depth_png",
    "load_scenes",
    "save_color",
    "save_depth_png",
]
