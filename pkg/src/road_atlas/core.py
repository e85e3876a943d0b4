"""Geometric primitives shared by every Road-Atlas module.

Points are carried as ``(N, 3)`` float64 arrays. The types defined here are
immutable once constructed and may be shared between threads.
"""

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, MalformedInputError

TWO_PI = 2.0 * math.pi

# Alias for a single point; arrays of points are (N, 3).
Point3 = np.ndarray


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Pose:
    """Rigid transform: translation in meters, rotation as a unit quaternion.

    The quaternion is stored scalar-last (x, y, z, w), the convention of
    ``scipy.spatial.transform.Rotation``.
    """

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(q))):
            raise ValueError("Pose components must be finite")
        if abs(float(np.linalg.norm(q)) - 1.0) > 1e-9:
            raise ValueError(f"Pose quaternion is not unit norm: {q}")
        object.__setattr__(self, "translation", _frozen(t.copy()))
        object.__setattr__(self, "rotation", _frozen(q.copy()))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_rotation(cls, translation: Sequence[float], rotation: Rotation) -> "Pose":
        q = rotation.as_quat()
        return cls(np.asarray(translation, dtype=np.float64), q / np.linalg.norm(q))

    @classmethod
    def from_quaternion(
        cls, translation: Sequence[float], quaternion: Sequence[float]
    ) -> "Pose":
        q = np.asarray(quaternion, dtype=np.float64)
        norm = float(np.linalg.norm(q))
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError(f"Invalid quaternion: {quaternion}")
        return cls(np.asarray(translation, dtype=np.float64), q / norm)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        m = np.asarray(matrix, dtype=np.float64)
        return cls.from_rotation(m[:3, 3], Rotation.from_matrix(m[:3, :3]))

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float) -> "Pose":
        return cls.from_rotation([x, y, z], Rotation.from_euler("z", yaw))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.rotation).as_matrix()

    @property
    def yaw(self) -> float:
        r = self.rotation_matrix
        return math.atan2(r[1, 0], r[0, 0])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        r_inv = Rotation.from_quat(self.rotation).inv()
        return Pose.from_rotation(-r_inv.apply(self.translation), r_inv)

    def compose(self, other: "Pose") -> "Pose":
        """self * other: apply ``other`` first, then ``self``."""
        r = Rotation.from_quat(self.rotation)
        return Pose.from_rotation(
            self.translation + r.apply(other.translation),
            r * Rotation.from_quat(other.rotation),
        )

    def translation_error(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def rotation_error_deg(self, other: "Pose") -> float:
        delta = Rotation.from_quat(self.rotation).inv() * Rotation.from_quat(
            other.rotation
        )
        return float(np.degrees(delta.magnitude()))

    def same_as(self, other: "Pose") -> bool:
        return bool(
            np.array_equal(self.translation, other.translation)
            and np.array_equal(self.rotation, other.rotation)
        )


def transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Map points by the rigid transform R p + t."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ pose.rotation_matrix.T + pose.translation


@dataclass(frozen=True)
class PointCloudFrame:
    """One LiDAR sweep: sensor-frame points with channel and yaw per point."""

    points: np.ndarray
    ring: np.ndarray
    azimuth: np.ndarray
    timestamp: float = 0.0
    frame_id: int = 0

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
        az = np.asarray(self.azimuth, dtype=np.float64).reshape(-1)
        if not (len(pts) == len(ring) == len(az)):
            raise MalformedInputError(
                f"Frame {self.frame_id}: points, ring and azimuth lengths differ "
                f"({len(pts)}, {len(ring)}, {len(az)})"
            )
        if not np.all(np.isfinite(pts)):
            raise MalformedInputError(f"Frame {self.frame_id}: non-finite point")
        if len(ring) and ring.min() < 0:
            raise MalformedInputError(f"Frame {self.frame_id}: negative ring index")
        if len(az) and (az.min() < 0.0 or az.max() >= TWO_PI):
            raise MalformedInputError(
                f"Frame {self.frame_id}: azimuth outside [0, 2pi)"
            )
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "ring", _frozen(ring))
        object.__setattr__(self, "azimuth", _frozen(az))

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, frame_id: int = 0, timestamp: float = 0.0) -> "PointCloudFrame":
        return cls(
            np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0), timestamp, frame_id
        )

    @classmethod
    def from_points(
        cls,
        points: np.ndarray,
        elevations_deg: Sequence[float],
        timestamp: float = 0.0,
        frame_id: int = 0,
    ) -> "PointCloudFrame":
        """Infer ring (nearest elevation in the channel table) and azimuth."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        table = np.radians(np.asarray(elevations_deg, dtype=np.float64))
        horizontal = np.hypot(pts[:, 0], pts[:, 1])
        elevation = np.arctan2(pts[:, 2], horizontal)
        ring = np.abs(elevation[:, None] - table[None, :]).argmin(axis=1)
        azimuth = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), TWO_PI)
        azimuth[azimuth >= TWO_PI] = 0.0
        return cls(pts, ring, azimuth, timestamp, frame_id)

    def ranges(self) -> np.ndarray:
        """3D Euclidean range of every point."""
        return np.linalg.norm(self.points, axis=1)

    def horizontal_ranges(self) -> np.ndarray:
        """Range projected on the sensor's horizontal plane."""
        return np.hypot(self.points[:, 0], self.points[:, 1])

    def subset(self, mask: np.ndarray) -> "PointCloudFrame":
        return PointCloudFrame(
            self.points[mask],
            self.ring[mask],
            self.azimuth[mask],
            self.timestamp,
            self.frame_id,
        )

    def select_rings(self, step: int, offset: int = 0) -> "PointCloudFrame":
        """Keep every ``step``-th channel and renumber rings from 0."""
        mask = (self.ring - offset) % step == 0
        mask &= self.ring >= offset
        sub = self.subset(mask)
        return PointCloudFrame(
            sub.points,
            (sub.ring - offset) // step,
            sub.azimuth,
            sub.timestamp,
            sub.frame_id,
        )


@dataclass(frozen=True)
class RangeImage:
    """H x W spherical grid holding at most one point (the nearest) per cell.

    Empty cells hold ``nan`` range and index -1.
    """

    height: int
    width: int
    range: np.ndarray
    index: np.ndarray

    def filled(self) -> np.ndarray:
        return self.index >= 0

    def __len__(self) -> int:
        return int(np.count_nonzero(self.index >= 0))


def azimuth_columns(azimuth: np.ndarray, width: int) -> np.ndarray:
    """Column index floor(azimuth / 2pi * W), clipped against rounding at 2pi."""
    cols = np.floor(azimuth / TWO_PI * width).astype(np.int64)
    return np.clip(cols, 0, width - 1)


def build_range_image(frame: PointCloudFrame, height: int, width: int) -> RangeImage:
    """Project a frame onto its range image; the nearest point wins a cell."""
    if height < 1 or width < 1:
        raise ConfigurationError(
            f"Range image must be at least 1x1, got {height}x{width}"
        )
    if len(frame) and frame.ring.max() >= height:
        raise MalformedInputError(
            f"Frame {frame.frame_id}: ring {int(frame.ring.max())} out of range "
            f"for {height} channels"
        )
    rng = np.full((height, width), np.nan)
    idx = np.full((height, width), -1, dtype=np.int64)
    if len(frame):
        cols = azimuth_columns(frame.azimuth, width)
        flat = frame.ring * width + cols
        dist = frame.ranges()
        order = np.lexsort((dist, flat))
        cells, first = np.unique(flat[order], return_index=True)
        winners = order[first]
        rng.reshape(-1)[cells] = dist[winners]
        idx.reshape(-1)[cells] = winners
    return RangeImage(height, width, _frozen(rng), _frozen(idx))


@dataclass(frozen=True)
class SectorWindow:
    """Rectangular window of the range image; columns wrap modulo W."""

    row_start: int
    row_extent: int
    col_start: int
    col_extent: int

    def rows(self) -> np.ndarray:
        return np.arange(self.row_start, self.row_start + self.row_extent)

    def cols(self, width: int) -> np.ndarray:
        return (self.col_start + np.arange(self.col_extent)) % width

    def point_indices(self, image: RangeImage) -> np.ndarray:
        """Indices of the frame points retained in this window's cells."""
        block = image.index[np.ix_(self.rows(), self.cols(image.width))]
        return block[block >= 0]


def _starts(dimension: int, extent: int, step: int, wrap: bool) -> List[int]:
    if wrap:
        return list(range(0, dimension, step))
    starts = list(range(0, dimension - extent + 1, step))
    if starts[-1] + extent < dimension:
        starts.append(dimension - extent)
    return starts


def enumerate_sectors(
    height: int,
    width: int,
    win_rows: int,
    win_cols: int,
    row_step: int,
    col_step: int,
    row_offset: int = 0,
    col_offset: int = 0,
    wrap_cols: bool = True,
) -> List[SectorWindow]:
    """Overlapping windows tiling an H x W image.

    Rows tile without wrapping (a last window is added flush with the bottom
    edge when the steps leave rows uncovered); columns wrap modulo W. With
    ``wrap_cols=False`` the columns tile like the rows, which is used for
    sub-images that are not a full revolution.
    """
    if min(row_step, col_step) < 1:
        raise ConfigurationError("Window steps must be >= 1")
    if min(win_rows, win_cols) < 1:
        raise ConfigurationError("Window extents must be >= 1")
    if win_rows > height or win_cols > width:
        raise ConfigurationError(
            f"Window {win_rows}x{win_cols} exceeds image {height}x{width}"
        )
    windows = []
    for r in _starts(height, win_rows, row_step, wrap=False):
        for c in _starts(width, win_cols, col_step, wrap=wrap_cols):
            windows.append(
                SectorWindow(r + row_offset, win_rows, c + col_offset, win_cols)
            )
    return windows


@dataclass(frozen=True)
class Gaussian:
    """1D normal distribution of a surface altitude."""

    mu: float
    sigma: float


@dataclass(frozen=True)
class Grid2D:
    """World-aligned 2D cell indexing: ix = floor((x - origin_x) / resolution)."""

    resolution: float
    origin: tuple = field(default=(0.0, 0.0))

    def cell_of(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        o = np.asarray(self.origin, dtype=np.float64)
        return np.floor((xy - o) / self.resolution).astype(np.int64)

    def center_of(self, cells: np.ndarray) -> np.ndarray:
        c = np.asarray(cells, dtype=np.float64).reshape(-1, 2)
        return (c + 0.5) * self.resolution + np.asarray(self.origin, dtype=np.float64)


def pack_keys(ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    """Pack signed 32-bit cell indices into one sortable int64 key."""
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    return (ix << 32) + (iy + (1 << 31))


def unpack_keys(keys: np.ndarray) -> tuple:
    keys = np.asarray(keys, dtype=np.int64)
    iy = (keys & 0xFFFFFFFF) - (1 << 31)
    ix = (keys - (iy + (1 << 31))) >> 32
    return ix, iy

