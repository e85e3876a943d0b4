"""Map-based localization: encode-then-decode the frame, register with ICP."""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloudFrame, Pose, transform_points
from .errors import LocalizationError
from .fusion import Atlas
from .models import DetectionConfig, LocalizationConfig, SegmentConfig
from .traversability import LabeledFrame, TraversabilityDetector
from .vertical_codec import decode_cloud, encode_decode, keyframe_window

logger = logging.getLogger(__name__)

# share of the crop radius the prior may move before the map is re-cropped
CROP_REUSE = 0.25


@dataclass(frozen=True)
class LocalizationResult:
    """Registered pose with its quality figures."""

    pose: Pose
    translation_residual: float
    iterations: int
    converged: bool
    matched_fraction: float = 0.0
    timings: Dict[str, float] = field(default_factory=dict)

    def log_line(self, frame_id: int) -> str:
        return (
            f"localize frame_id={frame_id} converged={int(self.converged)} "
            f"residual={self.translation_residual:.6f} iterations={self.iterations} "
            f"segmentation_s={self.timings.get('segmentation_s', 0.0):.6f} "
            f"registration_s={self.timings.get('registration_s', 0.0):.6f}"
        )


def _kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    fix = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    r = vt.T @ fix @ u.T
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = cd - r @ cs
    return Pose.from_matrix(m)


def icp_register(
    source: np.ndarray,
    target: np.ndarray,
    init: Optional[Pose] = None,
    config: Optional[LocalizationConfig] = None,
    max_correspondence_distance: Optional[float] = None,
    tree: Optional[cKDTree] = None,
) -> LocalizationResult:
    """Point-to-point ICP; returns the pose mapping ``source`` onto ``target``.

    Three consecutive residual increases stop the run as diverged. The pose
    with the lowest residual seen is returned.
    """
    c = config if config is not None else LocalizationConfig()
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(src) < c.min_points or len(dst) < c.min_points:
        raise LocalizationError(
            f"ICP needs at least {c.min_points} points per cloud, "
            f"got {len(src)} and {len(dst)}"
        )
    gate = max_correspondence_distance
    if gate is None:
        gate = c.max_correspondence_distance
    if gate is None:
        gate = 0.4
    tree = tree if tree is not None else cKDTree(dst)
    pose = init if init is not None else Pose.identity()

    best_pose, best_residual, best_fraction = pose, math.inf, 0.0
    previous = math.inf
    rising = 0
    converged = False
    iterations = 0
    for iterations in range(1, c.max_iterations + 1):
        moved = transform_points(src, pose)
        dist, idx = tree.query(moved, distance_upper_bound=gate)
        valid = np.isfinite(dist)
        if np.count_nonzero(valid) < 3:
            break
        residual = float(np.sqrt(np.mean(dist[valid] ** 2)))
        fraction = float(np.count_nonzero(valid)) / len(src)
        if residual < best_residual:
            best_pose, best_residual, best_fraction = pose, residual, fraction
        rising = rising + 1 if residual > previous else 0
        previous = residual
        if rising >= 3:
            break
        delta = _kabsch(moved[valid], dst[idx[valid]])
        pose = delta.compose(pose)
        step_t = float(np.linalg.norm(delta.translation))
        step_r = math.radians(delta.rotation_error_deg(Pose.identity()))
        if step_t < c.eps_translation and step_r < c.eps_rotation:
            moved = transform_points(src, pose)
            dist, _ = tree.query(moved, distance_upper_bound=gate)
            valid = np.isfinite(dist)
            if np.count_nonzero(valid) >= 3:
                residual = float(np.sqrt(np.mean(dist[valid] ** 2)))
                fraction = float(np.count_nonzero(valid)) / len(src)
                if residual <= best_residual:
                    best_pose, best_residual, best_fraction = pose, residual, fraction
            converged = True
            break
    else:
        converged = True

    ok = converged and best_fraction >= c.min_inlier_fraction and best_residual <= gate
    return LocalizationResult(best_pose, best_residual, iterations, ok, best_fraction)


def prepare_frame_cloud(
    frame: PointCloudFrame,
    segments: SegmentConfig,
    resolution: float,
    lut: np.ndarray,
    pose: Optional[Pose] = None,
    detection: Optional[DetectionConfig] = None,
    labeled: Optional[LabeledFrame] = None,
    occupied_threshold: int = 9,
) -> np.ndarray:
    """Sensor-frame obstacle cloud with the sparsity of the map's decode.

    ``segments`` is sensor-relative like the atlas. The obstacle points are
    encoded in the world grid at ``pose`` and the occupied segment centers
    are brought back into the sensor frame.
    """
    pose = pose if pose is not None else Pose.identity()
    if labeled is None:
        labeled = TraversabilityDetector(detection).detect(frame)
    obstacles = labeled.obstacle_points()
    if len(obstacles) == 0:
        return np.zeros((0, 3))
    world = encode_decode(
        transform_points(obstacles, pose),
        pose.translation,
        keyframe_window(segments, pose.translation[2]),
        resolution,
        lut,
        occupied_threshold,
    )
    return transform_points(world, pose.inverse())


class MapLocalizer:
    """Tracks frames against a read-only atlas.

    The map cloud is decoded and indexed once. Each frame registers against
    the map points within ``radius`` of its prior, with a correspondence gate
    that starts coarse and halves every round down to the fine gate.
    """

    def __init__(
        self,
        atlas: Atlas,
        config: Optional[LocalizationConfig] = None,
        detection: Optional[DetectionConfig] = None,
    ):
        self.atlas = atlas
        self.config = config if config is not None else LocalizationConfig()
        self.detector = TraversabilityDetector(detection)
        self.map_cloud = decode_cloud(atlas.descriptors, atlas.codec.occupied_threshold)
        self.tree = cKDTree(self.map_cloud) if len(self.map_cloud) else None
        self._crop: Optional[Tuple[np.ndarray, np.ndarray, Optional[cKDTree]]] = None

    @property
    def gate(self) -> float:
        """Fine correspondence gate, the one convergence is judged at."""
        c = self.config
        if c.max_correspondence_distance is not None:
            return c.max_correspondence_distance
        return 2.0 * self.atlas.resolution

    def gate_schedule(self) -> List[float]:
        """Coarse gates halving from the configured start, then the fine gate."""
        fine = self.gate
        gates = []
        gate = self.config.coarse_correspondence_distance
        while gate > fine:
            gates.append(gate)
            gate /= 2.0
        return gates + [fine] * self.config.reencode_rounds

    def map_points_near(self, pose: Pose) -> np.ndarray:
        """Map points within ``radius`` of the pose, with their KD-tree.

        The crop is reused until the pose moves a quarter radius away from
        the center it was cut around.
        """
        if self.tree is None:
            return np.zeros((0, 3))
        center = pose.translation
        if self._crop is not None:
            cut_at, points, _ = self._crop
            if np.linalg.norm(center - cut_at) <= CROP_REUSE * self.config.radius:
                return points
        idx = np.sort(self.tree.query_ball_point(center, self.config.radius))
        if len(idx) == len(self.map_cloud):
            self._crop = (center, self.map_cloud, self.tree)
        else:
            points = self.map_cloud[idx]
            tree = cKDTree(points) if len(points) else None
            self._crop = (center, points, tree)
        return self._crop[1]

    def localize(self, frame: PointCloudFrame, prev_pose: Pose) -> LocalizationResult:
        c = self.config
        target = self.map_points_near(prev_pose)
        if len(target) < c.min_points:
            raise LocalizationError(
                f"Map holds fewer than {c.min_points} obstacle points within "
                f"{c.radius} m of the prior for frame {frame.frame_id}"
            )
        tree = self._crop[2]
        started = time.perf_counter()
        labeled = self.detector.detect(frame)
        segmentation_s = time.perf_counter() - started

        started = time.perf_counter()
        fine = self.gate
        estimate = prev_pose
        encoded_at: Optional[Pose] = None
        cloud = np.zeros((0, 3))
        result = LocalizationResult(prev_pose, math.inf, 0, False)
        at_fine = False
        for gate in self.gate_schedule():
            res = self.atlas.resolution
            if encoded_at is None or _moved(estimate, encoded_at, res):
                cloud = prepare_frame_cloud(
                    frame,
                    self.atlas.segments,
                    self.atlas.resolution,
                    self.atlas.lut,
                    estimate,
                    labeled=labeled,
                    occupied_threshold=self.atlas.codec.occupied_threshold,
                )
                encoded_at = estimate
            if len(cloud) < c.min_points:
                break
            result = icp_register(cloud, target, estimate, c, gate, tree)
            moved = result.pose.translation_error(estimate)
            estimate = result.pose
            at_fine = gate <= fine
            if at_fine and moved < 0.5 * self.atlas.resolution:
                break
        registration_s = time.perf_counter() - started

        result = LocalizationResult(
            result.pose,
            result.translation_residual,
            result.iterations,
            result.converged and at_fine,
            result.matched_fraction,
            {"segmentation_s": segmentation_s, "registration_s": registration_s},
        )
        logger.info(result.log_line(frame.frame_id))
        return result


def _moved(estimate: Pose, encoded_at: Pose, resolution: float) -> bool:
    """True once the estimate drifted enough to change the frame's encoding."""
    return (
        estimate.translation_error(encoded_at) >= 0.25 * resolution
        or estimate.rotation_error_deg(encoded_at) >= 0.1
    )


def localize_frame(
    atlas: Atlas,
    frame: PointCloudFrame,
    prev_pose: Pose,
    config: Optional[LocalizationConfig] = None,
    detection: Optional[DetectionConfig] = None,
) -> LocalizationResult:
    """Register one frame against the atlas, seeded at ``prev_pose``."""
    return MapLocalizer(atlas, config, detection).localize(frame, prev_pose)


def translation_rmse(estimates: Sequence[Pose], truths: Sequence[Pose]) -> float:
    errors = [e.translation_error(t) ** 2 for e, t in zip(estimates, truths)]
    return float(math.sqrt(sum(errors) / len(errors))) if errors else 0.0


def rotation_rmse_deg(estimates: Sequence[Pose], truths: Sequence[Pose]) -> float:
    errors = [e.rotation_error_deg(t) ** 2 for e, t in zip(estimates, truths)]
    return float(math.sqrt(sum(errors) / len(errors))) if errors else 0.0


def write_trajectory(
    path: str, frame_ids: Sequence[int], results: List[LocalizationResult]
) -> None:
    """One line per frame: frame_id tx ty tz qx qy qz qw residual converged."""
    lines = []
    for frame_id, r in zip(frame_ids, results):
        t = r.pose.translation
        q = r.pose.rotation
        residual = r.translation_residual
        if not math.isfinite(residual):
            residual = -1.0
        lines.append(
            f"{frame_id} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
            f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f} "
            f"{residual:.6f} {int(r.converged)}"
        )
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + ("\n" if lines else ""))
    except OSError as err:
        raise OSError(f"Cannot write trajectory: {path}") from err
