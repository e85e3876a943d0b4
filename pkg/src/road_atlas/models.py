"""Configuration and request/response models for the Road-Atlas engine."""

import math
import os
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

VLP16_ELEVATIONS_DEG = [float(e) for e in range(-15, 16, 2)]


class DetectionConfig(BaseModel):
    """Parameters of the sector-wise multi-RANSAC traversability detector."""

    model_config = ConfigDict(frozen=True)

    channels: int = Field(16, description="Range image height H (LiDAR channels)")
    width: int = Field(1800, description="Range image width W (azimuth bins)")
    sector_rows: int = Field(16, description="Coarse window height")
    sector_cols: int = Field(50, description="Coarse window width")
    sector_row_step: int = Field(16, description="Coarse window row step")
    sector_col_step: int = Field(25, description="Coarse window column step")
    fine_rows: int = Field(3, description="Fine window height")
    fine_row_step: int = Field(1, description="Fine window row step")
    two_pass: bool = Field(
        True, description="Coarse pass followed by fine windows inside each sector"
    )
    ransac_threshold: float = Field(0.05, description="RANSAC inlier distance (m)")
    max_iterations: int = Field(200, description="RANSAC iterations per window")
    max_plane_angle: float = Field(
        0.4, description="Maximum plane tilt from vertical axis (rad)"
    )
    max_step_height: float = Field(
        0.25,
        description="Highest rise over the reference plane still treated as a step (m)",
    )
    min_sector_points: int = Field(
        10, description="Filled cells required before a window is processed"
    )
    seed: int = Field(0, description="Seed of the per-window RANSAC samplers")
    threads: int = Field(1, description="Worker threads for window fits")

    @field_validator(
        "channels",
        "width",
        "sector_rows",
        "sector_cols",
        "sector_row_step",
        "sector_col_step",
        "fine_rows",
        "fine_row_step",
        "max_iterations",
        "threads",
    )
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("ransac_threshold", "max_plane_angle", "max_step_height")
    @classmethod
    def _positive_float(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value


class OGMConfig(BaseModel):
    """Parameters of the per-keyframe local occupancy grid."""

    model_config = ConfigDict(frozen=True)

    resolution: float = Field(0.1, description="Cell size (m)")
    radius: float = Field(20.0, description="Sensing radius (m)")
    bins: int = Field(720, description="Virtual scan azimuth bins")
    overhead_clearance: float = Field(
        2.0, description="Points higher than this above local ground are dropped (m)"
    )
    reference_radius: float = Field(
        10.0, description="Ground points within this range define the local ground (m)"
    )
    sigma_slope: float = Field(
        math.tan(math.radians(5.0)), description="Altitude sigma growth per meter"
    )
    sigma_floor: float = Field(0.1, description="Altitude sigma at the sensor (m)")
    p_occ: float = Field(0.7, description="Occupied update probability")
    p_free: float = Field(0.3, description="Free update probability")
    p_clamp: float = Field(0.97, description="Log-odds clamp probability")

    @field_validator(
        "resolution", "radius", "overhead_clearance", "reference_radius", "sigma_floor"
    )
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("bins")
    @classmethod
    def _positive_bins(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @model_validator(mode="after")
    def validate_probabilities(self) -> "OGMConfig":
        """The occupied update must raise, the free update lower, the log-odds."""
        if not 0.5 < self.p_occ < 1 or not 0 < self.p_free < 0.5:
            raise ValueError("require 0 < p_free < 0.5 < p_occ < 1")
        if not 0.5 < self.p_clamp < 1:
            raise ValueError("require 0.5 < p_clamp < 1")
        return self

    @property
    def l_occ(self) -> float:
        return math.log(self.p_occ / (1 - self.p_occ))

    @property
    def l_free(self) -> float:
        return math.log(self.p_free / (1 - self.p_free))

    @property
    def l_max(self) -> float:
        return math.log(self.p_clamp / (1 - self.p_clamp))


class FusionConfig(BaseModel):
    """Parameters of multi-layer surface fusion."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(0.6, description="Overlap rate above which layers merge")
    gap_prefilter: Optional[float] = Field(
        None, description="Altitude gap (m) that always separates layers; off if None"
    )
    max_observations: int = Field(
        512, description="Buffered observations per cell before the farthest drop"
    )
    threads: int = Field(1, description="Workers over disjoint cell partitions")

    @field_validator("epsilon")
    @classmethod
    def _ratio(cls, value: float) -> float:
        if not 0 <= value <= 1:
            raise ValueError("must be within [0, 1]")
        return value

    @field_validator("max_observations", "threads")
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value


class SegmentConfig(BaseModel):
    """Vertical segmentation of the probabilistic obstacle grid."""

    model_config = ConfigDict(frozen=True)

    z_low: float = Field(-1.0, description="Lower bound of the lowest segment (m)")
    z_high: float = Field(7.0, description="Upper bound of the highest segment (m)")
    n_segments: int = Field(8, description="Number of vertical segments")
    bits_per_segment: Literal[4] = Field(4, description="Bits per segment code")

    @model_validator(mode="after")
    def validate_bounds(self) -> "SegmentConfig":
        """Segments need a positive height."""
        if not self.z_high > self.z_low:
            raise ValueError("z_high must be greater than z_low")
        if self.n_segments < 1 or self.n_segments > 255:
            raise ValueError("n_segments must be within [1, 255]")
        return self

    @property
    def segment_height(self) -> float:
        return (self.z_high - self.z_low) / self.n_segments

    @property
    def descriptor_bytes(self) -> int:
        return (self.n_segments * self.bits_per_segment + 7) // 8

    def shifted(self, dz: float) -> "SegmentConfig":
        """The same segmentation moved by dz (sensor-relative to world)."""
        return self.model_copy(
            update={"z_low": self.z_low + dz, "z_high": self.z_high + dz}
        )


class CodecConfig(BaseModel):
    """Sensor model of the 4-bit obstacle probability grid."""

    model_config = ConfigDict(frozen=True)

    p_hit: float = Field(0.7, description="Hit probability")
    p_miss: float = Field(0.4, description="Miss probability")
    occupied_threshold: int = Field(9, description="Lowest code decoded as obstacle")

    @model_validator(mode="after")
    def validate_model(self) -> "CodecConfig":
        """p_hit must favour occupancy and p_miss free space."""
        if not 0.5 < self.p_hit < 1 or not 0 < self.p_miss < 0.5:
            raise ValueError("require 0 < p_miss < 0.5 < p_hit < 1")
        if not 1 <= self.occupied_threshold <= 15:
            raise ValueError("occupied_threshold must be within [1, 15]")
        return self


class LocalizationConfig(BaseModel):
    """Parameters of map-based ICP localization."""

    model_config = ConfigDict(frozen=True)

    radius: float = Field(40.0, description="Map crop radius around the prior (m)")
    max_iterations: int = Field(50, description="ICP iteration cap")
    max_correspondence_distance: Optional[float] = Field(
        None, description="Fine correspondence gate (m); 2 x map resolution if None"
    )
    coarse_correspondence_distance: float = Field(
        2.0, description="First gate of the coarse-to-fine schedule, halved per round"
    )
    eps_translation: float = Field(1e-4, description="Convergence step (m)")
    eps_rotation: float = Field(1e-4, description="Convergence step (rad)")
    reencode_rounds: int = Field(
        3, description="Encode-register rounds at the fine gate per frame"
    )
    min_points: int = Field(10, description="Minimum points in either cloud")
    min_inlier_fraction: float = Field(
        0.3, description="Matched source fraction required to report convergence"
    )

    @field_validator(
        "radius", "coarse_correspondence_distance", "eps_translation", "eps_rotation"
    )
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("max_correspondence_distance")
    @classmethod
    def _positive_gate(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("max_iterations", "reencode_rounds", "min_points")
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("min_inlier_fraction")
    @classmethod
    def _fraction(cls, value: float) -> float:
        if not 0 <= value <= 1:
            raise ValueError("must be within [0, 1]")
        return value


class PlannerConfig(BaseModel):
    """Parameters of multi-layer A* planning."""

    model_config = ConfigDict(frozen=True)

    max_step: float = Field(0.3, description="Largest altitude step between cells (m)")
    snap_tolerance: float = Field(
        1.0, description="Altitude tolerance when snapping query points (m)"
    )

    @field_validator("max_step", "snap_tolerance")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value


def threads_from_env(default: int = 1) -> int:
    """Worker count from ROAD_ATLAS_THREADS."""
    raw = os.environ.get("ROAD_ATLAS_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as err:
        raise ValueError(f"ROAD_ATLAS_THREADS must be an integer: {raw!r}") from err
    return max(1, value)


class RunConfig(BaseModel):
    """Flat, user-facing configuration shared by every command.

    Example:
    {
        "resolution": 0.1,
        "radius": 20.0,
        "n_segments": 8,
        "z_low": -1.0,
        "z_high": 7.0,
        "ransac_threshold": 0.05,
        "epsilon": 0.6
    }
    """

    resolution: float = Field(0.1, description="Map cell size (m)")
    radius: float = Field(20.0, description="Local map radius (m)")
    n_segments: int = Field(8, description="Vertical segments per cell")
    z_low: float = Field(-1.0, description="Lowest segment bound, sensor-relative (m)")
    z_high: float = Field(7.0, description="Highest segment bound, sensor-relative (m)")
    ransac_threshold: float = Field(0.05, description="RANSAC inlier distance (m)")
    max_plane_angle: float = Field(0.4, description="check_normal threshold (rad)")
    max_step_height: float = Field(
        0.25, description="Highest rise treated as a curb-like step (m)"
    )
    channels: int = Field(16, description="LiDAR channels")
    elevations_deg: Optional[List[float]] = Field(
        None, description="Channel elevations (deg); the 16-channel table if None"
    )
    width: int = Field(1800, description="Range image width")
    sector_rows: int = Field(16, description="Coarse window height")
    sector_cols: int = Field(50, description="Coarse window width")
    sector_row_step: int = Field(16, description="Coarse window row step")
    sector_col_step: int = Field(25, description="Coarse window column step")
    epsilon: float = Field(0.6, description="Layer merge overlap rate")
    sigma_slope: float = Field(
        math.tan(math.radians(5.0)), description="Altitude sigma growth per meter"
    )
    sigma_floor: float = Field(0.1, description="Altitude sigma at the sensor (m)")
    p_hit: float = Field(0.7, description="Obstacle hit probability")
    p_miss: float = Field(0.4, description="Obstacle miss probability")
    max_step: float = Field(0.3, description="Planner altitude step (m)")
    loc_radius: float = Field(40.0, description="Localization crop radius (m)")
    seed: int = Field(0, description="Seed for every sampler")
    threads: int = Field(default_factory=threads_from_env, description="Workers")

    @field_validator(
        "resolution",
        "radius",
        "ransac_threshold",
        "max_plane_angle",
        "max_step_height",
        "sigma_floor",
        "max_step",
        "loc_radius",
    )
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator(
        "n_segments",
        "channels",
        "width",
        "sector_rows",
        "sector_cols",
        "sector_row_step",
        "sector_col_step",
        "threads",
    )
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    def elevation_table(self) -> List[float]:
        if self.elevations_deg is not None:
            return list(self.elevations_deg)
        return list(VLP16_ELEVATIONS_DEG)

    @model_validator(mode="after")
    def validate_channels(self) -> "RunConfig":
        """An explicit elevation table fixes the channel count."""
        given = self.elevations_deg
        if given is not None and len(given) != self.channels:
            raise ValueError(
                f"channels={self.channels} but {len(given)} elevations given"
            )
        if not self.z_high > self.z_low:
            raise ValueError("z_high must be greater than z_low")
        return self

    def detection(self) -> DetectionConfig:
        return DetectionConfig(
            channels=self.channels,
            width=self.width,
            sector_rows=min(self.sector_rows, self.channels),
            sector_cols=self.sector_cols,
            sector_row_step=self.sector_row_step,
            sector_col_step=self.sector_col_step,
            ransac_threshold=self.ransac_threshold,
            max_plane_angle=self.max_plane_angle,
            max_step_height=self.max_step_height,
            seed=self.seed,
            threads=self.threads,
        )

    def ogm(self) -> OGMConfig:
        return OGMConfig(
            resolution=self.resolution,
            radius=self.radius,
            sigma_slope=self.sigma_slope,
            sigma_floor=self.sigma_floor,
        )

    def fusion(self) -> FusionConfig:
        return FusionConfig(epsilon=self.epsilon, threads=self.threads)

    def segments(self) -> SegmentConfig:
        return SegmentConfig(
            z_low=self.z_low, z_high=self.z_high, n_segments=self.n_segments
        )

    def codec(self) -> CodecConfig:
        return CodecConfig(p_hit=self.p_hit, p_miss=self.p_miss)

    def localization(self) -> LocalizationConfig:
        return LocalizationConfig(radius=self.loc_radius)

    def planner(self) -> PlannerConfig:
        return PlannerConfig(max_step=self.max_step)


class IntegrationSummary(BaseModel):
    """Outcome of integrating one keyframe into the atlas."""

    frame_id: int = Field(..., description="Integrated keyframe")
    cells_touched: int = Field(0, description="Surface cells updated")
    layers_created: int = Field(0, description="Net layers added")
    layers_merged: int = Field(0, description="Layers removed by merging")
    descriptor_cells: int = Field(0, description="Obstacle cells updated")
    elapsed_s: float = Field(0.0, description="Wall time (s)")

    def log_line(self) -> str:
        """key=value rendering consumed by timing scripts."""
        return (
            f"integrate frame_id={self.frame_id} cells_touched={self.cells_touched} "
            f"layers_created={self.layers_created} "
            f"layers_merged={self.layers_merged} "
            f"descriptor_cells={self.descriptor_cells} "
            f"elapsed_s={self.elapsed_s:.6f}"
        )


class MapStats(BaseModel):
    """Storage and memory accounting of an atlas."""

    cells: int = Field(0, description="Stored cells")
    surface_cells: int = Field(0, description="Cells holding at least one layer")
    layers: int = Field(0, description="Total surface layers")
    multi_layer_cells: int = Field(0, description="Cells with two or more layers")
    descriptor_cells: int = Field(0, description="Cells holding a descriptor")
    descriptor_bytes: int = Field(0, description="Packed descriptor bytes")
    serialized_bytes: int = Field(0, description="Exact .lra file size")
    dense_baseline_bytes: int = Field(
        0, description="One f32 probability per segment per cell"
    )
    dense_voxel_bytes: int = Field(
        0, description="Full-height f32 voxel columns at map resolution"
    )
    compaction_ratio: float = Field(
        0.0, description="descriptor_bytes / dense_baseline_bytes"
    )
    file_ratio: float = Field(0.0, description="serialized_bytes / dense_voxel_bytes")


class BuildMapRequest(BaseModel):
    """Request model for building a map from a frame directory.

    Example:
    {
        "frames_dir": "/data/run/frames",
        "poses_file": "/data/run/poses.txt",
        "output_path": "/data/run/map.lra",
        "config": {"resolution": 0.1}
    }
    """

    frames_dir: str = Field(..., description="Directory of .bin frames")
    poses_file: str = Field(..., description="Pose file, 12 numbers per line")
    output_path: str = Field(..., description="Target .lra path")
    config: RunConfig = Field(default_factory=RunConfig, description="Run config")


class LocalizeRequest(BaseModel):
    """Request model for localizing frames against a saved map.

    Example:
    {
        "map_path": "/data/run/map.lra",
        "frames_dir": "/data/run2/frames",
        "initial_pose": [0, 0, 0, 0, 0, 0, 1],
        "output_path": "/data/run2/trajectory.txt"
    }
    """

    map_path: str = Field(..., description="Saved .lra map")
    frames_dir: str = Field(..., description="Directory of .bin frames")
    initial_pose: List[float] = Field(
        ..., description="x y z qx qy qz qw of the first frame"
    )
    output_path: str = Field(..., description="Trajectory output path")
    truth_file: Optional[str] = Field(None, description="Ground-truth pose file")
    config: RunConfig = Field(default_factory=RunConfig, description="Run config")

    @field_validator("initial_pose")
    @classmethod
    def _seven_numbers(cls, value: List[float]) -> List[float]:
        if len(value) != 7:
            raise ValueError("initial_pose needs 7 numbers: x y z qx qy qz qw")
        return value


class PlanRouteRequest(BaseModel):
    """Request model for planning on a saved map."""

    map_path: str = Field(..., description="Saved .lra map")
    start: List[float] = Field(..., description="Start x y z")
    goal: List[float] = Field(..., description="Goal x y z")
    output_path: Optional[str] = Field(None, description="Waypoint output path")
    max_step: float = Field(0.3, description="Altitude step limit (m)")

    @field_validator("start", "goal")
    @classmethod
    def _three_numbers(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError("expected 3 numbers: x y z")
        return value


class SimulateSceneRequest(BaseModel):
    """Request model for generating synthetic frames."""

    scene: str = Field(..., description="Scene library name or scene file path")
    trajectory_file: str = Field(..., description="Pose file of sensor poses")
    output_dir: str = Field(..., description="Output directory")


class MapStatsRequest(BaseModel):
    """Request model for the storage report of a saved map."""

    map_path: str = Field(..., description="Saved .lra map")


class ExportMapRequest(BaseModel):
    """Request model for exporting a map as an ASCII point file."""

    map_path: str = Field(..., description="Saved .lra map")
    output_path: str = Field(..., description="Target point file")
    format: Literal["pcd", "ply"] = Field("pcd", description="Point file format")


class TrajectoryReport(BaseModel):
    """Summary of a localization run."""

    frames: int = Field(0, description="Frames processed")
    converged: int = Field(0, description="Frames that converged")
    translation_rmse: Optional[float] = Field(None, description="vs truth (m)")
    rotation_rmse_deg: Optional[float] = Field(None, description="vs truth (deg)")
    mean_time_s: float = Field(0.0, description="Mean per-frame wall time")
    timings: Dict[str, float] = Field(
        default_factory=dict, description="Mean time per stage (s)"
    )
