"""Per-keyframe local occupancy grid with per-cell altitude Gaussians.

The grid is square, axis-aligned with the world frame and anchored on the
world cell that holds the sensor, so local cells map onto atlas cells by an
integer offset.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .core import TWO_PI, Pose, transform_points
from .models import OGMConfig
from .raycast import traverse
from .traversability import LabeledFrame

logger = logging.getLogger(__name__)


class ScanKind(IntEnum):
    EMPTY = 0
    OBSTACLE_HIT = 1
    FRONTIER_FREE = 2


@dataclass(frozen=True)
class VirtualScan:
    """One endpoint per azimuth bin, in the sensor frame (meters)."""

    endpoints: np.ndarray
    kind: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.kind)

    def count(self, kind: ScanKind) -> int:
        return int(np.count_nonzero(self.kind == kind))


def height_sigma(
    distance: np.ndarray, config: Optional[OGMConfig] = None
) -> np.ndarray:
    """Altitude uncertainty growing linearly with horizontal distance."""
    c = config if config is not None else OGMConfig()
    return c.sigma_slope * np.asarray(distance, dtype=np.float64) + c.sigma_floor


def grid_extent(resolution: float, radius: float) -> int:
    return 2 * math.ceil(radius / resolution - 1e-9)


def _bins_of(xy: np.ndarray, bins: int) -> np.ndarray:
    az = np.mod(np.arctan2(xy[:, 1], xy[:, 0]), TWO_PI)
    return np.clip(np.floor(az / TWO_PI * bins).astype(np.int64), 0, bins - 1)


def _pick(
    values: np.ndarray, bins: np.ndarray, farthest: bool
) -> Tuple[np.ndarray, np.ndarray]:
    key = -values if farthest else values
    order = np.lexsort((key, bins))
    uniq, first = np.unique(bins[order], return_index=True)
    return uniq, order[first]


def reference_altitude(labeled: LabeledFrame, near: float = 10.0) -> float:
    """Sensor-frame altitude of the ground the vehicle stands on.

    Median of the ground points within ``near`` meters, else of all ground
    points, else the lowest point.
    """
    pts = labeled.frame.points
    if len(pts) == 0:
        return 0.0
    ground = pts[labeled.ground]
    if len(ground) == 0:
        return float(pts[:, 2].min())
    close = np.hypot(ground[:, 0], ground[:, 1]) <= near
    return float(np.median(ground[close, 2] if close.any() else ground[:, 2]))


def build_virtual_scan(
    labeled: LabeledFrame,
    bins: int = 720,
    radius: float = 20.0,
    overhead_clearance: float = 2.0,
    reference_radius: float = 10.0,
) -> VirtualScan:
    """Resolve each azimuth bin to its nearest obstacle or farthest ground point."""
    pts = labeled.frame.points
    endpoints = np.zeros((bins, 2))
    kind = np.full(bins, int(ScanKind.EMPTY), dtype=np.int8)
    if len(pts) == 0:
        return VirtualScan(endpoints, kind)

    ground = labeled.ground
    reference = reference_altitude(labeled, reference_radius)
    horizontal = np.hypot(pts[:, 0], pts[:, 1])
    keep = (
        (pts[:, 2] <= reference + overhead_clearance)
        & (horizontal <= radius)
        & (horizontal > 0)
    )
    bin_index = _bins_of(pts[:, :2], bins)

    ground_mask = keep & ground
    if ground_mask.any():
        idx = np.flatnonzero(ground_mask)
        b, winner = _pick(horizontal[idx], bin_index[idx], farthest=True)
        endpoints[b] = pts[idx[winner], :2]
        kind[b] = ScanKind.FRONTIER_FREE

    obstacle_mask = keep & ~ground
    if obstacle_mask.any():
        idx = np.flatnonzero(obstacle_mask)
        b, winner = _pick(horizontal[idx], bin_index[idx], farthest=False)
        endpoints[b] = pts[idx[winner], :2]
        kind[b] = ScanKind.OBSTACLE_HIT

    return VirtualScan(endpoints, kind)


@dataclass(frozen=True)
class LocalOGM:
    """Local occupancy log-odds and altitude Gaussians of one keyframe.

    Cell (i, j) is world cell
    (anchor[0] - extent // 2 + i, anchor[1] - extent // 2 + j).
    ``mu`` and ``sigma`` are nan where no ground point fell.
    """

    resolution: float
    radius: float
    anchor: Tuple[int, int]
    occupancy: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pose: Pose
    frame_id: int = 0
    timestamp: float = 0.0
    obstacle_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    source: Optional[LabeledFrame] = None
    config: Optional[OGMConfig] = None

    @property
    def extent(self) -> int:
        return self.occupancy.shape[0]

    @property
    def origin_cell(self) -> Tuple[int, int]:
        half = self.extent // 2
        return self.anchor[0] - half, self.anchor[1] - half

    def height_cells(
        self,
    ) -> Tuple[
        np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray
    ]:
        """World (ix, iy), mu, sigma, sensor distance and occupancy of ground cells."""
        i, j = np.nonzero(~np.isnan(self.mu))
        ox, oy = self.origin_cell
        ix = i + ox
        iy = j + oy
        centers = (np.stack([ix, iy], axis=1) + 0.5) * self.resolution
        distance = np.hypot(
            centers[:, 0] - self.pose.translation[0],
            centers[:, 1] - self.pose.translation[1],
        )
        return ix, iy, self.mu[i, j], self.sigma[i, j], distance, self.occupancy[i, j]

    def known_cells(self) -> int:
        return int(np.count_nonzero(self.occupancy))


def _sensor_anchor(pose: Pose, resolution: float) -> Tuple[int, int]:
    xy = pose.translation[:2]
    return int(math.floor(xy[0] / resolution)), int(math.floor(xy[1] / resolution))


def rasterize_ogm(
    scan: VirtualScan,
    resolution: float = 0.1,
    radius: float = 20.0,
    pose: Optional[Pose] = None,
    config: Optional[OGMConfig] = None,
) -> np.ndarray:
    """Occupancy log-odds of the local grid, one update per cell and scan.

    Hit cells are the end cells of obstacle rays; every other crossed cell
    (frontier end cells included) is a miss.
    """
    c = config
    if c is None:
        c = OGMConfig(resolution=resolution, radius=radius)
    pose = pose if pose is not None else Pose.identity()
    extent = grid_extent(resolution, radius)
    occupancy = np.zeros((extent, extent))
    active = np.flatnonzero(scan.kind != ScanKind.EMPTY)
    if len(active) == 0:
        return occupancy

    ends_local = np.column_stack([scan.endpoints[active], np.zeros(len(active))])
    ends = transform_points(ends_local, pose)[:, :2]
    starts = np.repeat(pose.translation[None, :2], len(active), axis=0)
    walk = traverse(starts, ends, resolution)

    ax, ay = _sensor_anchor(pose, resolution)
    half = extent // 2
    li = walk.ix - (ax - half)
    lj = walk.iy - (ay - half)
    inside = (li >= 0) & (li < extent) & (lj >= 0) & (lj < extent)
    is_hit_ray = scan.kind[active][walk.ray] == ScanKind.OBSTACLE_HIT
    hit = walk.last & is_hit_ray & inside

    flat = li * extent + lj
    hit_cells = np.unique(flat[hit])
    miss_cells = np.setdiff1d(
        np.unique(flat[inside & ~hit]), hit_cells, assume_unique=True
    )
    occupancy.reshape(-1)[miss_cells] += c.l_free
    occupancy.reshape(-1)[hit_cells] += c.l_occ
    np.clip(occupancy, -c.l_max, c.l_max, out=occupancy)
    return occupancy


def attach_height_gaussians(
    labeled: LabeledFrame,
    pose: Pose,
    resolution: float = 0.1,
    radius: float = 20.0,
    config: Optional[OGMConfig] = None,
    ceiling: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean world altitude and distance-driven sigma of each ground cell.

    Ground points above ``ceiling`` (sensor frame) are left out.
    """
    c = config
    if c is None:
        c = OGMConfig(resolution=resolution, radius=radius)
    extent = grid_extent(resolution, radius)
    mu = np.full((extent, extent), np.nan)
    sigma = np.full((extent, extent), np.nan)
    ground = labeled.ground_points()
    if ceiling is not None:
        ground = ground[ground[:, 2] <= ceiling]
    if len(ground) == 0:
        return mu, sigma

    world = transform_points(ground, pose)
    cells = np.floor(world[:, :2] / resolution).astype(np.int64)
    ax, ay = _sensor_anchor(pose, resolution)
    half = extent // 2
    li = cells[:, 0] - (ax - half)
    lj = cells[:, 1] - (ay - half)
    inside = (li >= 0) & (li < extent) & (lj >= 0) & (lj < extent)
    flat = li[inside] * extent + lj[inside]
    uniq, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=world[inside, 2], minlength=len(uniq))

    i, j = np.divmod(uniq, extent)
    centers = (np.stack([i + ax - half, j + ay - half], axis=1) + 0.5) * resolution
    distance = np.hypot(
        centers[:, 0] - pose.translation[0], centers[:, 1] - pose.translation[1]
    )
    mu[i, j] = sums / counts
    sigma[i, j] = height_sigma(distance, c)
    return mu, sigma


def build_local_ogm(
    labeled: LabeledFrame,
    pose: Pose,
    config: Optional[OGMConfig] = None,
) -> LocalOGM:
    """Virtual scan, occupancy and height layers of one keyframe."""
    c = config if config is not None else OGMConfig()
    scan = build_virtual_scan(
        labeled, c.bins, c.radius, c.overhead_clearance, c.reference_radius
    )
    occupancy = rasterize_ogm(scan, c.resolution, c.radius, pose, c)
    # Overhangs (a deck seen from below) are not a surface of this keyframe.
    ceiling = reference_altitude(labeled, c.reference_radius) + c.overhead_clearance
    mu, sigma = attach_height_gaussians(
        labeled, pose, c.resolution, c.radius, c, ceiling
    )

    # Ground returns are free-space evidence even where no virtual ray ran.
    unreached = ~np.isnan(mu) & (occupancy == 0.0)
    occupancy[unreached] = c.l_free

    return LocalOGM(
        resolution=c.resolution,
        radius=c.radius,
        anchor=_sensor_anchor(pose, c.resolution),
        occupancy=occupancy,
        mu=mu,
        sigma=sigma,
        pose=pose,
        frame_id=labeled.frame.frame_id,
        timestamp=labeled.frame.timestamp,
        obstacle_points=labeled.obstacle_points(),
        source=labeled,
        config=c,
    )


def relocate_local_ogm(local: LocalOGM, pose: Pose) -> LocalOGM:
    """The same keyframe rebuilt under a corrected pose."""
    if local.source is None:
        raise ValueError(f"Local map of frame {local.frame_id} keeps no source frame")
    return build_local_ogm(local.source, pose, local.config)


def write_pgm(ogm: LocalOGM, path: str) -> None:
    """Occupancy as a binary graymap: dark is occupied, mid-gray unknown."""
    prob = 1.0 / (1.0 + np.exp(-ogm.occupancy))
    gray = np.round((1.0 - prob) * 255).astype(np.uint8)
    # Image rows run from +y down to -y.
    image = np.flipud(gray.T)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + image.tobytes())
    except OSError as err:
        raise OSError(f"Cannot write graymap: {path}") from err


def write_height_csv(ogm: LocalOGM, path: str) -> int:
    """One row per ground cell: world ix, iy, mu, sigma. Returns the row count."""
    ix, iy, mu, sigma, _, _ = ogm.height_cells()
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["ix", "iy", "mu", "sigma"])
            for row in zip(ix.tolist(), iy.tolist(), mu.tolist(), sigma.tolist()):
                writer.writerow(row)
    except OSError as err:
        raise OSError(f"Cannot write height table: {path}") from err
    return len(ix)
