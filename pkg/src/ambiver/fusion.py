"""Cross-view instance fusion.

Per-view detections of the grounding query are linked into a connectivity
graph whenever two detections from different views agree geometrically:

* their back-projected rays pass within ``eps_d`` meters of each other,
* the angle between the rays lies in ``[theta_min, theta_max]`` degrees,
* the ratio of their box areas exceeds ``sigma_s``.

Connected components of that graph are treated as one 3D instance each. Groups
are scored by area-weighted confidence, the best ``top_k`` survive and each is
represented by the member that is confident, large in its frame and away from
the image border.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

from .config import FusionConfig
from .exceptions import (
    EmptyGroupError,
    IndexOutOfRangeError,
    IoFailureError,
    LengthMismatchError,
    MissingFileError,
)
from .geometry import BBox2D, Ray3, area_ratio, ray_angle, ray_min_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection2D:
    """One detector hit in one keyframe."""

    view_index: int
    bbox: BBox2D
    score: float
    image_width: int
    image_height: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        b = self.bbox
        w, h = self.image_width, self.image_height
        if b.x_min < 0 or b.y_min < 0 or b.x_max > w or b.y_max > h:
            raise ValueError(f"box {b.as_list()} outside {w}x{h} image")

    @property
    def area(self) -> float:
        return self.bbox.area

    def to_dict(self) -> Dict[str, Any]:
        return {
            "view_index": self.view_index,
            "bbox": self.bbox.as_list(),
            "score": self.score,
            "image_width": self.image_width,
            "image_height": self.image_height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Detection2D":
        return cls(
            view_index=int(data["view_index"]),
            bbox=BBox2D.from_list(data["bbox"]),
            score=float(data["score"]),
            image_width=int(data["image_width"]),
            image_height=int(data["image_height"]),
        )


@dataclass(frozen=True)
class InstanceGroup:
    """A connected component of the detection graph."""

    member_indices: FrozenSet[int]
    group_score: float

    def __post_init__(self) -> None:
        if not self.member_indices:
            raise EmptyGroupError("An instance group needs at least one member")

    @property
    def cardinality(self) -> int:
        return len(self.member_indices)


@dataclass(frozen=True)
class Candidate:
    """A fused instance and the view that best shows it."""

    representative_view: int
    representative_bbox: BBox2D
    group_score: float
    cardinality: int
    representative_index: int = -1
    member_indices: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.cardinality < 1:
            raise ValueError("cardinality must be at least 1")

    def key(self) -> Tuple[int, Tuple[float, ...], float, int]:
        """Identity of the candidate independent of detection numbering."""
        return (
            self.representative_view,
            tuple(self.representative_bbox.as_list()),
            self.group_score,
            self.cardinality,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "representative_view": self.representative_view,
            "representative_bbox": self.representative_bbox.as_list(),
            "group_score": self.group_score,
            "cardinality": self.cardinality,
            "representative_index": self.representative_index,
            "member_indices": list(self.member_indices),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Candidate":
        return cls(
            representative_view=int(data["representative_view"]),
            representative_bbox=BBox2D.from_list(data["representative_bbox"]),
            group_score=float(data["group_score"]),
            cardinality=int(data["cardinality"]),
            representative_index=int(data.get("representative_index", -1)),
            member_indices=tuple(data.get("member_indices", ())),
        )


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by rank."""

    def __init__(self, n: int) -> None:
        self._parent = list(range(n))
        self._rank = [0] * n

    def __len__(self) -> int:
        return len(self._parent)

    def find(self, x: int) -> int:
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def unite(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; ``False`` if already merged."""
        root_a, root_b = self.find(a), self.find(b)
        if root_a == root_b:
            return False
        if self._rank[root_a] < self._rank[root_b]:
            root_a, root_b = root_b, root_a
        self._parent[root_b] = root_a
        if self._rank[root_a] == self._rank[root_b]:
            self._rank[root_a] += 1
        return True

    def groups(self) -> List[Set[int]]:
        by_root: Dict[int, Set[int]] = {}
        for x in range(len(self._parent)):
            by_root.setdefault(self.find(x), set()).add(x)
        return sorted(by_root.values(), key=min)


def _check_lengths(detections: Sequence[Detection2D], rays: Sequence[Ray3]) -> None:
    if len(detections) != len(rays):
        raise LengthMismatchError(
            f"{len(detections)} detections but {len(rays)} rays"
        )


def build_edges(
    detections: Sequence[Detection2D], rays: Sequence[Ray3], cfg: Any = None
) -> List[Tuple[int, int]]:
    """Index pairs ``(i, j)``, ``i < j``, that satisfy all three constraints.

    Distance and area ratio are strict (``<``, ``>``); the angle window is
    inclusive on both ends. Detections from the same view are never linked.

    Raises:
        LengthMismatchError: If ``detections`` and ``rays`` differ in length.
    """

    cfg = FusionConfig.from_value(cfg)
    _check_lengths(detections, rays)

    edges: List[Tuple[int, int]] = []
    for i in range(len(detections)):
        for j in range(i + 1, len(detections)):
            if detections[i].view_index == detections[j].view_index:
                continue
            if not area_ratio(detections[i].bbox, detections[j].bbox) > cfg.sigma_s:
                continue
            if not cfg.theta_min <= ray_angle(rays[i], rays[j]) <= cfg.theta_max:
                continue
            if ray_min_distance(rays[i], rays[j]) < cfg.eps_d:
                edges.append((i, j))

    logger.debug("built %d edges over %d detections", len(edges), len(detections))
    return edges


def union_find_components(n: int, edges: Iterable[Tuple[int, int]]) -> List[Set[int]]:
    """Connected components of the graph on ``0..n-1``, singletons included.

    Components are ordered by their smallest member.

    Raises:
        IndexOutOfRangeError: If an edge endpoint is outside ``[0, n)``.
    """

    uf = UnionFind(n)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRangeError(f"edge ({i}, {j}) outside graph of {n} nodes")
        uf.unite(i, j)
    return uf.groups()


def group_score(group: Iterable[int], detections: Sequence[Detection2D]) -> float:
    """Area-weighted mean confidence of the group's detections.

    Raises:
        EmptyGroupError: If ``group`` is empty.
    """

    members = sorted(group)
    if not members:
        raise EmptyGroupError("Cannot score an empty group")

    scores = [detections[i].score for i in members]
    areas = [detections[i].area for i in members]
    # fsum keeps the result independent of member order
    weighted = math.fsum(s * a for s, a in zip(scores, areas)) / math.fsum(areas)
    # keep rounding from leaving the [min, max] envelope
    return min(max(weighted, min(scores)), max(scores))


def boundary_penalty(det: Detection2D, cfg: FusionConfig) -> float:
    b = det.bbox
    near_border = (
        b.x_min <= cfg.delta
        or b.y_min <= cfg.delta
        or b.x_max >= det.image_width - cfg.delta
        or b.y_max >= det.image_height - cfg.delta
    )
    return cfg.gamma if near_border else 1.0


def representative_score(
    det: Detection2D, cfg: Any = None, confidence_only: bool = False
) -> float:
    """Confidence times visibility times boundary penalty.

    Args:
        det: Detection to score.
        cfg: Fusion configuration (``gamma`` and ``delta`` are used).
        confidence_only: Score by detection confidence alone.
    """

    if confidence_only:
        return det.score
    cfg = FusionConfig.from_value(cfg)
    visibility = det.area / (det.image_width * det.image_height)
    return det.score * visibility * boundary_penalty(det, cfg)


def _representative(
    members: Sequence[int],
    detections: Sequence[Detection2D],
    cfg: FusionConfig,
    confidence_only: bool,
) -> int:
    # ties go to the smaller detection index
    return max(
        sorted(members),
        key=lambda i: (representative_score(detections[i], cfg, confidence_only), -i),
    )


def fuse(
    detections: Sequence[Detection2D],
    rays: Sequence[Ray3],
    cfg: Any = None,
    confidence_only: bool = False,
) -> List[Candidate]:
    """Fuse detections into at most ``top_k`` instance candidates.

    Groups are ranked by group score, then by cardinality, then by the smaller
    representative view.

    Args:
        detections: Detections of one query across the keyframes.
        rays: ``back_project`` of each detection, in the same order.
        cfg: Fusion configuration; defaults when ``None``.
        confidence_only: Pick each group's representative by confidence only.

    Returns:
        list: Candidates ordered best first.

    Raises:
        LengthMismatchError: If ``detections`` and ``rays`` differ in length.
    """

    cfg = FusionConfig.from_value(cfg)
    _check_lengths(detections, rays)
    if not detections:
        return []

    edges = build_edges(detections, rays, cfg)
    components = union_find_components(len(detections), edges)

    groups = [
        InstanceGroup(frozenset(m), group_score(m, detections)) for m in components
    ]

    ranked = []
    for group in groups:
        members = group.member_indices
        rep = _representative(list(members), detections, cfg, confidence_only)
        ranked.append(
            (
                -group.group_score,
                -group.cardinality,
                detections[rep].view_index,
                min(members),
                rep,
                members,
                group.group_score,
            )
        )
    ranked.sort(key=lambda item: item[:4])

    candidates = [
        Candidate(
            representative_view=detections[rep].view_index,
            representative_bbox=detections[rep].bbox,
            group_score=score,
            cardinality=len(members),
            representative_index=rep,
            member_indices=tuple(sorted(members)),
        )
        for *_, rep, members, score in ranked[: cfg.top_k]
    ]
    logger.debug(
        "fused %d detections into %d groups, kept %d",
        len(detections),
        len(components),
        len(candidates),
    )
    return candidates


def fuse_without_grouping(
    detections: Sequence[Detection2D], cfg: Any = None
) -> List[Candidate]:
    """Top-``k`` detections by confidence, each its own candidate."""

    cfg = FusionConfig.from_value(cfg)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    return [
        Candidate(
            representative_view=detections[i].view_index,
            representative_bbox=detections[i].bbox,
            group_score=detections[i].score,
            cardinality=1,
            representative_index=i,
            member_indices=(i,),
        )
        for i in order[: cfg.top_k]
    ]


def save_detections(detections: Sequence[Detection2D], path: Union[str, Path]) -> Path:
    """Write detections as a JSON array."""

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps([d.to_dict() for d in detections], indent=2)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoFailureError(f"Failed to write detections {path}: {e}")
    return path


def load_detections(path: Union[str, Path]) -> List[Detection2D]:
    """Read detections written by :func:`save_detections`."""

    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"Detection file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        return [Detection2D.from_dict(item) for item in json.load(fh)]


__all__ = [
    "Candidate",
    "Detection2D",
    "InstanceGroup",
    "UnionFind",
    "boundary_penalty",
    "build_edges",
    "fuse",
    "fuse_without_grouping",
    "group_score",
    "load_detections",
    "representative_score",
    "save_detections",
    "union_find_components",
]
