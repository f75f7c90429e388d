"""Point-cloud aggregation and bird's-eye-view rasterization.

Posed depth frames are back-projected into one world-frame cloud, which is then
rendered from straight above: every raster cell shows the color of the highest
point that falls into it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .config import BevConfig
from .exceptions import (
    EmptyCloudError,
    IoFailureError,
    MissingFileError,
    ShapeMismatchError,
)
from .geometry import CameraPose, Intrinsics

logger = logging.getLogger(__name__)

Frame = Tuple[np.ndarray, np.ndarray, CameraPose]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """World-frame points with per-point RGB colors."""

    points: np.ndarray
    colors: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(points) != len(colors):
            raise ShapeMismatchError(f"{len(points)} points but {len(colors)} colors")
        if not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "colors", colors)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8))

    def subset(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[mask], self.colors[mask])


@dataclass(frozen=True, eq=False)
class BEVImage:
    """Top-down raster with the height of the point shown in each cell.

    Background cells hold ``NaN`` in ``height_buffer`` and the sentinel color in
    ``pixels``.
    """

    pixels: np.ndarray
    meters_per_pixel: float
    world_origin: Tuple[float, float]
    height_buffer: np.ndarray

    @property
    def size(self) -> Tuple[int, int]:
        h, w = self.height_buffer.shape
        return (w, h)

    @property
    def occupied(self) -> np.ndarray:
        return np.isfinite(self.height_buffer)

    def to_image(self) -> Image.Image:
        return Image.fromarray(self.pixels)


def _check_frame(color: np.ndarray, depth: np.ndarray, k: Intrinsics) -> None:
    expected = (k.height, k.width)
    if depth.shape != expected or color.shape[:2] != expected:
        raise ShapeMismatchError(
            f"frame color {color.shape[:2]} / depth {depth.shape} do not match "
            f"intrinsics {expected}"
        )


def aggregate_point_cloud(
    frames: Sequence[Frame], k: Intrinsics, stride: int = 8
) -> PointCloud:
    """Back-project every ``stride``-th pixel with valid depth into the world.

    Args:
        frames: ``(color, depth, pose)`` triples; depth in meters, 0 = invalid.
        k: Intrinsics shared by all frames.
        stride: Pixel step in both image directions.

    Returns:
        PointCloud: Points of all frames, concatenated in frame order.

    Raises:
        ShapeMismatchError: If a frame's size disagrees with ``k``.
    """

    if stride < 1:
        raise ValueError("stride must be at least 1")

    vs, us = np.mgrid[0 : k.height : stride, 0 : k.width : stride]
    us = us.reshape(-1)
    vs = vs.reshape(-1)
    ones = np.ones_like(us, dtype=np.float64)
    rays = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, ones], axis=1)

    points, colors = [], []
    for color, depth, pose in frames:
        color = np.asarray(color)
        depth = np.asarray(depth, dtype=np.float64)
        _check_frame(color, depth, k)

        d = depth[vs, us]
        valid = np.isfinite(d) & (d > 0)
        cam = rays[valid] * d[valid, None]
        points.append(pose.to_world(cam))
        colors.append(color[vs[valid], us[valid], :3])

    if not points:
        return PointCloud.empty()

    cloud = PointCloud(np.concatenate(points), np.concatenate(colors))
    logger.debug("aggregated %d points from %d frames", len(cloud), len(frames))
    return cloud


def ceiling_clip(cloud: PointCloud, percentile: float = 98.0) -> PointCloud:
    """Drop points above the given height percentile."""

    if len(cloud) == 0 or percentile >= 100:
        return cloud
    limit = np.percentile(cloud.points[:, 2], percentile)
    return cloud.subset(cloud.points[:, 2] <= limit)


def auto_frame(
    cloud: PointCloud, out_size: Tuple[int, int], fill_ratio: float = 0.9
) -> Tuple[CameraPose, float]:
    """Top-down pose over the cloud's xy-centroid and a fitting resolution.

    The resolution is chosen so the cloud's xy bounding box, measured from the
    centroid, covers ``fill_ratio`` of the raster.
    """

    if len(cloud) == 0:
        raise EmptyCloudError("Cannot frame an empty point cloud")

    xy = cloud.points[:, :2]
    centroid = xy.mean(axis=0)
    half_extent = np.maximum(
        np.abs(xy.min(axis=0) - centroid), np.abs(xy.max(axis=0) - centroid)
    )
    width, height = out_size
    mpp = float(
        max(
            2 * half_extent[0] / (fill_ratio * width),
            2 * half_extent[1] / (fill_ratio * height),
        )
    )
    if mpp <= 0:
        mpp = 0.01
    e_top = CameraPose(np.eye(3), np.array([centroid[0], centroid[1], 0.0]))
    return e_top, mpp


def project_bev(
    p: PointCloud,
    e_top: CameraPose,
    meters_per_pixel: float,
    out_size: Tuple[int, int],
    background: Tuple[int, int, int] = (255, 255, 255),
) -> BEVImage:
    """Rasterize a cloud seen from straight above.

    ``e_top`` places the BEV frame in the world: its x axis runs along image
    columns (left to right), its y axis along image rows (bottom to top), its z
    axis is height and its origin maps to the raster center. Each cell keeps
    the highest point; among equally high points the later one wins.

    Args:
        p: The cloud to draw.
        e_top: Pose of the BEV frame.
        meters_per_pixel: Ground resolution.
        out_size: ``(width, height)`` of the raster.
        background: Color of empty cells.

    Raises:
        EmptyCloudError: If ``p`` has no points.
    """

    if len(p) == 0:
        raise EmptyCloudError("Cannot rasterize an empty point cloud")
    if meters_per_pixel <= 0:
        raise ValueError("meters_per_pixel must be positive")

    width, height = out_size
    local = e_top.to_camera(p.points)
    cols = np.floor(width / 2.0 + local[:, 0] / meters_per_pixel).astype(np.int64)
    rows = np.floor(height / 2.0 - local[:, 1] / meters_per_pixel).astype(np.int64)
    z = local[:, 2]

    inside = np.flatnonzero(
        (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    )
    linear = rows[inside] * width + cols[inside]

    # sort by cell, then height, then input order; the last entry per cell wins
    order = np.lexsort((inside, z[inside], linear))
    linear_sorted = linear[order]
    last = np.ones(len(order), dtype=bool)
    last[:-1] = linear_sorted[:-1] != linear_sorted[1:]
    winners = inside[order[last]]
    cells = linear_sorted[last]

    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:] = np.asarray(background, dtype=np.uint8)
    heights = np.full((height, width), np.nan)
    pixels.reshape(-1, 3)[cells] = p.colors[winners]
    heights.reshape(-1)[cells] = z[winners]

    half_w = width / 2.0 * meters_per_pixel
    half_h = height / 2.0 * meters_per_pixel
    corner = e_top.to_world(np.array([[-half_w, half_h, 0.0]]))[0]
    origin = (float(corner[0]), float(corner[1]))
    return BEVImage(pixels, float(meters_per_pixel), origin, heights)


def render_bev(cloud: PointCloud, cfg: Optional[BevConfig] = None) -> BEVImage:
    """Ceiling-clip, auto-frame and rasterize ``cloud`` with ``cfg``."""

    cfg = BevConfig.from_value(cfg)
    clipped = ceiling_clip(cloud, cfg.ceiling_percentile)
    e_top, mpp = auto_frame(clipped, cfg.size, cfg.fill_ratio)
    return project_bev(clipped, e_top, mpp, cfg.size, cfg.background)


def save_bev(bev: BEVImage, path: Union[str, Path]) -> Path:
    """Write the raster as a lossless PNG."""

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        bev.to_image().save(path, format="PNG")
    except OSError as e:
        raise IoFailureError(f"Failed to write BEV image {path}: {e}")
    return path


def load_bev(path: Union[str, Path]) -> np.ndarray:
    """Read a raster written by :func:`save_bev` as an ``(H, W, 3)`` uint8 array."""

    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"BEV image not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


__all__ = [
    "BEVImage",
    "PointCloud",
    "aggregate_point_cloud",
    "auto_frame",
    "ceiling_clip",
    "load_bev",
    "project_bev",
    "render_bev",
    "save_bev",
]
