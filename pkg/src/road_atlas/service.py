"""Pipeline orchestration shared by the command line and the tool server."""

import logging
import time
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import PointCloudFrame, Pose
from .errors import LocalizationError, MalformedInputError
from .fusion import Atlas, integrate_keyframe
from .ingest import (
    list_frame_files,
    read_frame_bin,
    read_poses,
    write_frame_bin,
    write_poses,
)
from .local_ogm import LocalOGM, build_local_ogm
from .localization import (
    LocalizationResult,
    MapLocalizer,
    rotation_rmse_deg,
    translation_rmse,
    write_trajectory,
)
from .map_store import load_atlas, save_atlas, stats
from .models import (
    BuildMapRequest,
    ExportMapRequest,
    IntegrationSummary,
    LocalizeRequest,
    MapStats,
    PlannerConfig,
    PlanRouteRequest,
    RunConfig,
    SimulateSceneRequest,
    TrajectoryReport,
)
from .planner import astar, build_nav_graph, snap_to_layer, write_waypoints
from .synth import load_scene, simulate_scan
from .traversability import TraversabilityDetector
from .vertical_codec import decode_cloud

logger = logging.getLogger(__name__)

TRAVERSABLE = 1
OBSTACLE = 0


def new_atlas(config: RunConfig) -> Atlas:
    """Empty atlas; segments stay sensor-relative and anchor per keyframe."""
    return Atlas(
        config.resolution,
        config.segments(),
        fusion=config.fusion(),
        codec=config.codec(),
        l_max=config.ogm().l_max,
    )


def build_local_map(
    detector: TraversabilityDetector,
    frame: PointCloudFrame,
    pose: Pose,
    config: RunConfig,
) -> Tuple[LocalOGM, float, float]:
    """Detection plus local map; returns the map and both stage times."""
    started = time.perf_counter()
    labeled = detector.detect(frame)
    detect_s = time.perf_counter() - started
    started = time.perf_counter()
    local = build_local_ogm(labeled, pose, config.ogm())
    build_s = time.perf_counter() - started
    logger.info(
        "local_map frame_id=%d detect_s=%.6f build_s=%.6f",
        frame.frame_id,
        detect_s,
        build_s,
    )
    return local, detect_s, build_s


def build_atlas(
    frames: Iterable[PointCloudFrame],
    poses: Sequence[Pose],
    config: Optional[RunConfig] = None,
) -> Tuple[Atlas, List[IntegrationSummary]]:
    """Integrate every frame, in order, as a keyframe."""
    config = config if config is not None else RunConfig()
    if not poses:
        raise MalformedInputError("No frames to integrate")
    atlas = new_atlas(config)
    detector = TraversabilityDetector(config.detection())
    summaries = []
    for frame, pose in zip(frames, poses):
        local, _, _ = build_local_map(detector, frame, pose, config)
        summaries.append(integrate_keyframe(atlas, local))
    return atlas, summaries


def export_points(atlas: Atlas) -> Tuple[np.ndarray, np.ndarray]:
    """Decoded obstacle cloud followed by the centers of free surface layers."""
    obstacles = decode_cloud(atlas.descriptors, atlas.codec.occupied_threshold)
    surface = []
    for (ix, iy), column in sorted(atlas.columns.items()):
        x, y = atlas.cell_center(ix, iy)
        surface.extend((x, y, layer.mu) for layer in column.layers if layer.is_free)
    surface_points = np.asarray(surface, dtype=np.float64).reshape(-1, 3)
    points = np.vstack([obstacles.reshape(-1, 3), surface_points])
    labels = np.concatenate(
        [
            np.full(len(obstacles), OBSTACLE, dtype=np.uint8),
            np.full(len(surface_points), TRAVERSABLE, dtype=np.uint8),
        ]
    )
    return points, labels


def _rows(points: np.ndarray, labels: np.ndarray) -> List[str]:
    return [
        f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(k)}" for p, k in zip(points, labels)
    ]


def format_pcd(points: np.ndarray, labels: np.ndarray) -> str:
    n = len(points)
    header = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        "FIELDS x y z label",
        "SIZE 4 4 4 1",
        "TYPE F F F U",
        "COUNT 1 1 1 1",
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        "DATA ascii",
    ]
    return "\n".join(header + _rows(points, labels)) + "\n"


def format_ply(points: np.ndarray, labels: np.ndarray) -> str:
    header = [
        "ply",
        "format ascii 1.0",
        "comment road-atlas export: label 0 obstacle, 1 traversable",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar label",
        "end_header",
    ]
    return "\n".join(header + _rows(points, labels)) + "\n"


class RoadAtlasService:
    """Service class for map building, localization, planning and scenes."""

    @staticmethod
    def load_frames(directory: str, config: RunConfig) -> List[PointCloudFrame]:
        files = list_frame_files(directory)
        table = config.elevation_table()
        return [
            read_frame_bin(str(path), table, frame_id=i, timestamp=0.1 * i)
            for i, path in enumerate(files)
        ]

    def build_map(self, request: BuildMapRequest) -> Dict[str, Any]:
        """Integrate a frame directory into a saved map."""
        config = request.config
        poses = read_poses(request.poses_file)
        frames = self.load_frames(request.frames_dir, config)
        if not frames:
            raise MalformedInputError(f"No .bin frames in {request.frames_dir}")
        if len(frames) != len(poses):
            raise MalformedInputError(
                f"{len(frames)} frames but {len(poses)} poses in {request.poses_file}"
            )
        started = time.perf_counter()
        atlas, summaries = build_atlas(frames, poses, config)
        written = save_atlas(atlas, request.output_path)
        report = stats(atlas)
        return {
            "result": "ok",
            "output_path": request.output_path,
            "frames": len(frames),
            "bytes": written,
            "elapsed_s": time.perf_counter() - started,
            "mean_integrate_s": float(np.mean([s.elapsed_s for s in summaries])),
            "stats": report.model_dump(),
        }

    def localize(self, request: LocalizeRequest) -> TrajectoryReport:
        """Track a frame directory against a saved map.

        A frame that cannot be localized is recorded as non-converged at the
        previous estimate and tracking continues.
        """
        config = request.config
        atlas = load_atlas(request.map_path)
        frames = self.load_frames(request.frames_dir, config)
        localizer = MapLocalizer(atlas, config.localization(), config.detection())
        init = request.initial_pose
        prev = Pose.from_quaternion(init[:3], init[3:])

        results: List[LocalizationResult] = []
        elapsed: List[float] = []
        for frame in frames:
            started = time.perf_counter()
            try:
                result = localizer.localize(frame, prev)
            except LocalizationError as err:
                logger.warning("localize frame_id=%d failed: %s", frame.frame_id, err)
                result = LocalizationResult(prev, float("inf"), 0, False)
            elapsed.append(time.perf_counter() - started)
            results.append(result)
            prev = result.pose

        write_trajectory(request.output_path, [f.frame_id for f in frames], results)
        report = TrajectoryReport(
            frames=len(frames),
            converged=sum(1 for r in results if r.converged),
            mean_time_s=float(np.mean(elapsed)) if elapsed else 0.0,
            timings={
                stage: float(np.mean([r.timings.get(stage, 0.0) for r in results]))
                for stage in ("segmentation_s", "registration_s")
            }
            if results
            else {},
        )
        if request.truth_file:
            truth = read_poses(request.truth_file)
            if len(truth) != len(results):
                raise MalformedInputError(
                    f"{len(results)} frames but {len(truth)} truth poses"
                )
            estimates = [r.pose for r in results]
            report.translation_rmse = translation_rmse(estimates, truth)
            report.rotation_rmse_deg = rotation_rmse_deg(estimates, truth)
        return report

    def plan(self, request: PlanRouteRequest) -> Dict[str, Any]:
        """Snap both ends onto free layers and run A*.

        ``path`` is None when the two layers are not connected.
        """
        planner = PlannerConfig(max_step=request.max_step)
        atlas = load_atlas(request.map_path)
        start = snap_to_layer(atlas, request.start, planner.snap_tolerance)
        goal = snap_to_layer(atlas, request.goal, planner.snap_tolerance)
        graph = build_nav_graph(atlas, planner.max_step)
        path = astar(graph, start, goal)
        if path is None:
            logger.info(
                "plan start=%s goal=%s result=no_path", tuple(start), tuple(goal)
            )
            return {
                "result": "no_path",
                "start": list(start),
                "goal": list(goal),
                "path": None,
            }
        if request.output_path:
            write_waypoints(request.output_path, graph, path)
        return {
            "result": "ok",
            "start": list(start),
            "goal": list(goal),
            "cost": path.cost,
            "nodes": len(path),
            "path": [list(graph.position(n)) for n in path.nodes],
        }

    def synthesize(self, request: SimulateSceneRequest) -> Dict[str, Any]:
        """Frames, labels and poses of a scene along a trajectory.

        Layout: ``frames/NNNNNN.bin``, ``labels/NNNNNN.label`` (one uint8 per
        point: 0 road, 1 curb, 2 irrelevant) and ``poses.txt``.
        """
        scene = load_scene(request.scene)
        poses = read_poses(request.trajectory_file)
        root = Path(request.output_dir)
        try:
            (root / "frames").mkdir(parents=True, exist_ok=True)
            (root / "labels").mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise OSError(f"Cannot create output directory: {root}") from err
        points = 0
        for i, pose in enumerate(poses):
            frame, truth = simulate_scan(scene, pose, i)
            write_frame_bin(str(root / "frames" / f"{i:06d}.bin"), frame.points)
            label_path = root / "labels" / f"{i:06d}.label"
            try:
                label_path.write_bytes(truth.labels.astype(np.uint8).tobytes())
            except OSError as err:
                raise OSError(f"Cannot write labels: {label_path}") from err
            points += len(frame)
        write_poses(str(root / "poses.txt"), poses)
        return {
            "result": "ok",
            "scene": scene.name,
            "frames": len(poses),
            "points": points,
            "output_dir": str(root),
        }

    @staticmethod
    def map_stats(map_path: str) -> MapStats:
        return stats(load_atlas(map_path))

    def export(self, request: ExportMapRequest) -> Dict[str, Any]:
        atlas = load_atlas(request.map_path)
        points, labels = export_points(atlas)
        text = (format_pcd if request.format == "pcd" else format_ply)(points, labels)
        try:
            Path(request.output_path).write_text(text, encoding="ascii")
        except OSError as err:
            raise OSError(f"Cannot write point file: {request.output_path}") from err
        return {
            "result": "ok",
            "format": request.format,
            "output_path": request.output_path,
            "obstacle_points": int(np.count_nonzero(labels == OBSTACLE)),
            "traversable_points": int(np.count_nonzero(labels == TRAVERSABLE)),
        }
