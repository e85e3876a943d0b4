"""Sector-wise multi-RANSAC detection of traversable ground and obstacles."""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .core import (
    PointCloudFrame,
    RangeImage,
    SectorWindow,
    build_range_image,
    enumerate_sectors,
)
from .models import DetectionConfig

logger = logging.getLogger(__name__)

COARSE_PASS = 0
FINE_PASS = 1

# minimum height change per column along a step face, as a share of the
# RANSAC inlier threshold
STEP_DROP_FRACTION = 0.1


@dataclass(frozen=True)
class PlaneModel:
    """Plane n . p = offset with unit normal oriented so that n_z >= 0."""

    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal - self.offset)

    @property
    def tilt(self) -> float:
        """Angle between the normal and the vertical axis (rad)."""
        return math.acos(min(1.0, abs(float(self.normal[2]))))


@dataclass(frozen=True)
class LabeledFrame:
    """A frame with one Ground/Obstacle decision per point."""

    frame: PointCloudFrame
    ground: np.ndarray

    def __post_init__(self) -> None:
        if len(self.ground) != len(self.frame):
            raise ValueError("labels must cover every point of the frame")

    @property
    def obstacle(self) -> np.ndarray:
        return ~self.ground

    def ground_points(self) -> np.ndarray:
        return self.frame.points[self.ground]

    def obstacle_points(self) -> np.ndarray:
        return self.frame.points[~self.ground]

    def __len__(self) -> int:
        return len(self.frame)


def _sample_triples(
    n: int, max_iterations: int, rng: np.random.Generator
) -> np.ndarray:
    if math.comb(n, 3) <= max_iterations:
        return np.array(list(itertools.combinations(range(n), 3)), dtype=np.int64)
    return rng.integers(0, n, size=(max_iterations, 3))


def fit_plane_ransac(
    points: np.ndarray,
    inlier_threshold: float,
    max_iterations: int,
    rng: Optional[np.random.Generator] = None,
) -> Optional[PlaneModel]:
    """Plane with the most inliers over sampled triples, or None.

    Small inputs are enumerated exhaustively. Ties keep the first candidate.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        return None
    if rng is None:
        rng = np.random.default_rng(0)

    triples = _sample_triples(len(pts), max_iterations, rng)
    p0 = pts[triples[:, 0]]
    normals = np.cross(pts[triples[:, 1]] - p0, pts[triples[:, 2]] - p0)
    lengths = np.linalg.norm(normals, axis=1)
    valid = lengths > 1e-9
    if not np.any(valid):
        return None
    normals = normals[valid] / lengths[valid, None]
    normals[normals[:, 2] < 0] *= -1.0
    offsets = np.einsum("ij,ij->i", normals, p0[valid])

    residuals = np.abs(pts @ normals.T - offsets[None, :])
    counts = np.count_nonzero(residuals <= inlier_threshold, axis=0)
    best = int(np.argmax(counts))
    inliers = np.flatnonzero(residuals[:, best] <= inlier_threshold)
    return PlaneModel(normals[best].copy(), float(offsets[best]), inliers)


def check_normal(plane: PlaneModel, max_angle: float) -> bool:
    """True when the plane is flatter than ``max_angle`` from horizontal."""
    return plane.tilt < max_angle


def _window_seed(seed: int, pass_id: int, window: SectorWindow) -> np.random.Generator:
    return np.random.default_rng([seed, pass_id, window.row_start, window.col_start])


def _fine_windows(window: SectorWindow, config: DetectionConfig) -> List[SectorWindow]:
    rows = min(config.fine_rows, window.row_extent)
    return enumerate_sectors(
        window.row_extent,
        window.col_extent,
        rows,
        window.col_extent,
        config.fine_row_step,
        window.col_extent,
        row_offset=window.row_start,
        col_offset=window.col_start,
        wrap_cols=False,
    )


@dataclass(frozen=True)
class WindowFit:
    """An accepted window: its points, its plane and the points it claims."""

    window: SectorWindow
    indices: np.ndarray
    plane: PlaneModel

    @property
    def claimed(self) -> np.ndarray:
        return self.indices[self.plane.inlier_indices]

    @property
    def support(self) -> int:
        return len(self.plane.inlier_indices)


def _step_run(
    heights: np.ndarray, seeds: np.ndarray, open_: np.ndarray, min_drop: float
) -> np.ndarray:
    """Cells reached by walking along each row from ``seeds`` down a strict descent.

    A walk moves to the next column while the cell is ``open_``, sits at least
    ``min_drop`` above the plane and at least ``min_drop`` below the cell it
    came from. Columns wrap.
    """
    reached = np.zeros_like(seeds)
    for shift in (1, -1):
        front = seeds.copy()
        prev = np.where(seeds, heights, np.nan)
        while front.any():
            front_next = np.roll(front, shift, axis=1)
            prev_next = np.roll(prev, shift, axis=1)
            with np.errstate(invalid="ignore"):
                step = (
                    front_next
                    & open_
                    & ~reached
                    & (heights >= min_drop)
                    & (prev_next - heights >= min_drop)
                )
            reached |= step
            front = step
            prev = np.where(step, heights, np.nan)
    return reached


class TraversabilityDetector:
    """Labels every point of a frame as Ground or Obstacle.

    Coarse windows are fitted first; the accepted plane with the most inliers
    over a point is that point's reference surface. Fine windows then refine
    the labels inside every coarse window. Points a fine plane claims that
    stand above their reference surface by more than the inlier threshold,
    and no more than ``max_step_height``, are steps (curb tops, low sills)
    and stay obstacles, together with the descending run of points along the
    ring that leads down to them (the step face).
    """

    def __init__(self, config: Optional[DetectionConfig] = None):
        self.config = config if config is not None else DetectionConfig()

    def coarse_windows(self) -> List[SectorWindow]:
        c = self.config
        return enumerate_sectors(
            c.channels,
            c.width,
            min(c.sector_rows, c.channels),
            c.sector_cols,
            c.sector_row_step,
            c.sector_col_step,
        )

    def windows(self) -> List[Tuple[int, SectorWindow]]:
        """Every (pass, window) pair a frame may be fitted on."""
        tasks: List[Tuple[int, SectorWindow]] = []
        for window in self.coarse_windows():
            tasks.append((COARSE_PASS, window))
            if self.config.two_pass:
                tasks.extend((FINE_PASS, w) for w in _fine_windows(window, self.config))
        return tasks

    def _fit_window(
        self,
        frame: PointCloudFrame,
        image: RangeImage,
        pass_id: int,
        window: SectorWindow,
    ) -> Optional[WindowFit]:
        c = self.config
        indices = window.point_indices(image)
        if len(indices) < max(3, c.min_sector_points):
            return None
        plane = fit_plane_ransac(
            frame.points[indices],
            c.ransac_threshold,
            c.max_iterations,
            _window_seed(c.seed, pass_id, window),
        )
        if plane is None:
            return None
        if 2 * len(plane.inlier_indices) < len(indices):
            return None
        if not check_normal(plane, c.max_plane_angle):
            return None
        return WindowFit(window, indices, plane)

    def _fit_all(
        self,
        frame: PointCloudFrame,
        image: RangeImage,
        pass_id: int,
        windows: List[SectorWindow],
    ) -> List[Optional[WindowFit]]:
        if self.config.threads > 1 and len(windows) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                return list(
                    pool.map(
                        lambda w: self._fit_window(frame, image, pass_id, w), windows
                    )
                )
        return [self._fit_window(frame, image, pass_id, w) for w in windows]

    def detect(self, frame: PointCloudFrame) -> LabeledFrame:
        c = self.config
        ground = np.zeros(len(frame), dtype=bool)
        if len(frame) == 0:
            return LabeledFrame(frame, ground)
        image = build_range_image(frame, c.channels, c.width)
        coarse = self.coarse_windows()

        heights = np.full(len(frame), np.nan)
        support = np.zeros(len(frame), dtype=np.int64)
        for fit in self._fit_all(frame, image, COARSE_PASS, coarse):
            if fit is None:
                continue
            ground[fit.claimed] = True
            better = fit.indices[support[fit.indices] < fit.support]
            heights[better] = frame.points[better] @ fit.plane.normal - fit.plane.offset
            support[better] = fit.support

        with np.errstate(invalid="ignore"):
            step = (heights > c.ransac_threshold) & (heights <= c.max_step_height)

        fitted = len(coarse)
        if c.two_pass:
            # only points that are neither claimed nor steps can change label
            open_ = ~ground & ~step
            fine = [
                w
                for window in coarse
                for w in _fine_windows(window, c)
                if open_[w.point_indices(image)].any()
            ]
            fitted += len(fine)
            if c.threads > 1:
                fits: Iterable[Optional[WindowFit]] = self._fit_all(
                    frame, image, FINE_PASS, fine
                )
            else:
                fits = (
                    self._fit_window(frame, image, FINE_PASS, w)
                    for w in fine
                    if open_[w.point_indices(image)].any()
                )
            for fit in fits:
                if fit is not None:
                    claimed = fit.claimed[~step[fit.claimed]]
                    ground[claimed] = True
                    open_[claimed] = False

        if step.any():
            ground &= ~self._step_faces(image, heights, step & ~ground, ground)

        logger.debug(
            "frame %d: %d ground / %d points over %d windows",
            frame.frame_id,
            int(ground.sum()),
            len(frame),
            fitted,
        )
        return LabeledFrame(frame, ground)

    def _step_faces(
        self,
        image: RangeImage,
        heights: np.ndarray,
        steps: np.ndarray,
        ground: np.ndarray,
    ) -> np.ndarray:
        """Ground points on the descending run below a step obstacle."""
        filled = image.index >= 0
        idx = np.where(filled, image.index, 0)
        cell_heights = np.where(filled, heights[idx], np.nan)
        reached = _step_run(
            cell_heights,
            filled & steps[idx],
            filled & ground[idx],
            STEP_DROP_FRACTION * self.config.ransac_threshold,
        )
        faces = np.zeros(len(ground), dtype=bool)
        faces[image.index[reached]] = True
        return faces


def detect_traversable(
    frame: PointCloudFrame, config: Optional[DetectionConfig] = None
) -> LabeledFrame:
    """Label a frame with the sector-wise multi-RANSAC procedure."""
    return TraversabilityDetector(config).detect(frame)
