"""Analytic LiDAR simulator over scenes of planes, boxes and ramps.

Scenes are JSON documents validated by pydantic. Every simulated point comes
with the class of the primitive it hit, which makes the simulator the label
oracle of the detection and mapping tests.

Example scene:
{
    "name": "demo",
    "lidar": {"width": 900, "max_range": 60.0},
    "primitives": [
        {"kind": "ground", "z": 0.0},
        {"kind": "curb", "min": [-50, 4.0, 0.0], "max": [50, 4.3, 0.15]}
    ],
    "actors": [
        {
            "primitive": {"kind": "box", "min": [5, -1, 0], "max": [7, 1, 1.5]},
            "offsets": {"0": [0, 0, 0], "1": [0, 0, 0]}
        }
    ]
}
"""

import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .core import TWO_PI, PointCloudFrame, Pose
from .errors import ConfigurationError, MalformedInputError
from .models import VLP16_ELEVATIONS_DEG
from .traversability import LabeledFrame

logger = logging.getLogger(__name__)

ROAD = 0
CURB = 1
IRRELEVANT = 2
LABELS = {"road": ROAD, "curb": CURB, "irrelevant": IRRELEVANT}
Label = Literal["road", "curb", "irrelevant"]

SCENE_LIBRARY = ("curb-road", "overpass", "garage-2f", "parking-dynamic")


class LidarModel(BaseModel):
    """Spinning LiDAR: one ray per (channel, azimuth column)."""

    elevations_deg: List[float] = Field(
        default_factory=lambda: list(VLP16_ELEVATIONS_DEG),
        description="Channel elevation angles, strictly increasing (deg)",
    )
    width: int = Field(1800, description="Azimuth columns per revolution")
    max_range: float = Field(100.0, description="Farthest return (m)")
    min_range: float = Field(0.5, description="Nearest return (m)")
    range_noise: float = Field(0.0, description="Gaussian range noise sigma (m)")
    seed: int = Field(0, description="Seed of the range noise")

    @field_validator("elevations_deg")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("at least one channel is required")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("elevation angles must be strictly increasing")
        if any(abs(e) >= 90 for e in value):
            raise ValueError("elevation angles must be within (-90, 90)")
        return value

    @model_validator(mode="after")
    def validate_ranges(self) -> "LidarModel":
        """Ranges must be ordered and the noise non-negative."""
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("require 0 <= min_range < max_range")
        if self.range_noise < 0:
            raise ValueError("range_noise must be >= 0")
        return self

    @property
    def channels(self) -> int:
        return len(self.elevations_deg)

    def subsampled(self, step: int, offset: int = 0) -> "LidarModel":
        """The model keeping every ``step``-th channel."""
        return self.model_copy(
            update={"elevations_deg": self.elevations_deg[offset::step]}
        )

    def ray_directions(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unit sensor-frame directions (H*W, 3), row-major, with ring and azimuth.

        Azimuths sit at column centers so the column of a return is stable
        under re-projection.
        """
        elevation = np.radians(np.asarray(self.elevations_deg, dtype=np.float64))
        azimuth = (np.arange(self.width) + 0.5) * (TWO_PI / self.width)
        el, az = np.meshgrid(elevation, azimuth, indexing="ij")
        directions = np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
        ).reshape(-1, 3)
        ring = np.repeat(np.arange(self.channels), self.width)
        return directions, ring, az.reshape(-1)


class _Bounds(BaseModel):
    x_min: float = -math.inf
    x_max: float = math.inf
    y_min: float = -math.inf
    y_max: float = math.inf

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        in_x = (x >= self.x_min) & (x <= self.x_max)
        return in_x & (y >= self.y_min) & (y <= self.y_max)


class GroundPlane(_Bounds):
    """Horizontal plane ``z`` over an optional rectangle."""

    kind: Literal["ground"]
    z: float = 0.0
    label: Label = "road"

    def intersect(self, origin: np.ndarray, direction: np.ndarray):
        dz = direction[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - origin[2]) / dz
            hit = origin + t[:, None] * direction
            ok = (dz != 0) & (t > 0) & self.contains(hit[:, 0], hit[:, 1])
        from_above = dz < 0
        labels = np.where(from_above, LABELS[self.label], IRRELEVANT)
        return np.where(ok, t, np.inf), labels

    def surface_at(self, x: float, y: float) -> List[float]:
        return [self.z] if self.contains(np.array(x), np.array(y)) else []


class BoxPrimitive(BaseModel):
    """Axis-aligned solid.

    ``box`` and ``wall`` are obstacles, ``curb`` labels every face as curb and
    ``deck`` is an overpass slab whose top face is road.
    """

    kind: Literal["box", "wall", "curb", "deck"]
    min: Tuple[float, float, float]
    max: Tuple[float, float, float]
    label: Optional[Label] = None
    top_label: Optional[Label] = None

    @model_validator(mode="after")
    def validate_extent(self) -> "BoxPrimitive":
        """Boxes need a positive extent on every axis."""
        if any(hi <= lo for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"degenerate {self.kind}: min {self.min} max {self.max}")
        if self.label is None:
            self.label = "curb" if self.kind == "curb" else "irrelevant"
        if self.top_label is None:
            self.top_label = "road" if self.kind == "deck" else self.label
        return self

    def moved(self, offset: Sequence[float]) -> "BoxPrimitive":
        lo = tuple(a + b for a, b in zip(self.min, offset))
        hi = tuple(a + b for a, b in zip(self.max, offset))
        return self.model_copy(update={"min": lo, "max": hi})

    def intersect(self, origin: np.ndarray, direction: np.ndarray):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / direction
            t2 = (hi - origin) / direction
        near = np.fmin(t1, t2)
        far = np.fmax(t1, t2)
        # Axis-parallel rays: inside the slab the axis imposes no limit.
        parallel = direction == 0
        inside = (origin >= lo) & (origin <= hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        t_near = near.max(axis=1)
        t_far = far.min(axis=1)
        ok = (t_near <= t_far) & (t_near > 0)
        top = (near.argmax(axis=1) == 2) & (direction[:, 2] < 0)
        labels = np.where(top, LABELS[self.top_label], LABELS[self.label])
        return np.where(ok, t_near, np.inf), labels

    def surface_at(self, x: float, y: float) -> List[float]:
        inside = self.min[0] <= x <= self.max[0] and self.min[1] <= y <= self.max[1]
        return [self.max[2]] if inside and self.top_label == "road" else []


class RampSurface(BaseModel):
    """Sloped road over a rectangle, rising from ``z_start`` to ``z_end``
    along ``axis`` between the rectangle's low and high edge."""

    kind: Literal["ramp"]
    min: Tuple[float, float]
    max: Tuple[float, float]
    z_start: float
    z_end: float
    axis: Literal["x", "y"] = "x"
    label: Label = "road"

    @model_validator(mode="after")
    def validate_extent(self) -> "RampSurface":
        """Ramps need a positive footprint."""
        if any(hi <= lo for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"degenerate ramp: min {self.min} max {self.max}")
        return self

    def _plane(self) -> Tuple[np.ndarray, float]:
        k = 0 if self.axis == "x" else 1
        slope = (self.z_end - self.z_start) / (self.max[k] - self.min[k])
        normal = np.zeros(3)
        normal[k] = -slope
        normal[2] = 1.0
        return normal, self.z_start - slope * self.min[k]

    def height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        normal, offset = self._plane()
        return offset - normal[0] * x - normal[1] * y

    def intersect(self, origin: np.ndarray, direction: np.ndarray):
        normal, offset = self._plane()
        denom = direction @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (offset - origin @ normal) / denom
            hit = origin + t[:, None] * direction
        inside = (
            (hit[:, 0] >= self.min[0])
            & (hit[:, 0] <= self.max[0])
            & (hit[:, 1] >= self.min[1])
            & (hit[:, 1] <= self.max[1])
        )
        ok = (denom != 0) & (t > 0) & inside
        labels = np.where(denom < 0, LABELS[self.label], IRRELEVANT)
        return np.where(ok, t, np.inf), labels

    def surface_at(self, x: float, y: float) -> List[float]:
        if self.min[0] <= x <= self.max[0] and self.min[1] <= y <= self.max[1]:
            return [float(self.height(np.array(x), np.array(y)))]
        return []


Primitive = Annotated[
    Union[GroundPlane, BoxPrimitive, RampSurface], Field(discriminator="kind")
]


class Actor(BaseModel):
    """A box present only in the frames listed in ``offsets``."""

    primitive: BoxPrimitive
    offsets: Dict[int, Tuple[float, float, float]] = Field(
        default_factory=dict, description="Frame index to translation"
    )

    def at(self, frame_index: int) -> Optional[BoxPrimitive]:
        offset = self.offsets.get(frame_index)
        return None if offset is None else self.primitive.moved(offset)


class SceneSpec(BaseModel):
    """Static primitives, dynamic actors and the LiDAR model."""

    name: str = Field("scene", description="Scene name")
    description: str = Field("", description="Free text")
    lidar: LidarModel = Field(default_factory=LidarModel)
    primitives: List[Primitive] = Field(default_factory=list)
    actors: List[Actor] = Field(default_factory=list)

    def primitives_at(
        self, frame_index: int
    ) -> List[Union[GroundPlane, BoxPrimitive, RampSurface]]:
        present = [a.at(frame_index) for a in self.actors]
        return list(self.primitives) + [p for p in present if p is not None]

    def surface_altitudes(self, x: float, y: float) -> List[float]:
        """Road surface altitudes of the static scene above (x, y), ascending."""
        heights = []
        for primitive in self.primitives:
            heights.extend(primitive.surface_at(x, y))
        return sorted(set(heights))


@dataclass(frozen=True)
class GroundTruth:
    labels: np.ndarray
    primitive: np.ndarray
    pose: Pose
    frame_index: int


def simulate_scan(
    scene: SceneSpec, pose: Pose, frame_index: int = 0
) -> Tuple[PointCloudFrame, GroundTruth]:
    """Cast every ray of the LiDAR at ``pose``; the nearest hit wins."""
    lidar = scene.lidar
    directions, ring, azimuth = lidar.ray_directions()
    world_dirs = directions @ pose.rotation_matrix.T
    origin = pose.translation
    primitives = scene.primitives_at(frame_index)

    best_t = np.full(len(directions), np.inf)
    best_label = np.full(len(directions), IRRELEVANT, dtype=np.int8)
    best_id = np.full(len(directions), -1, dtype=np.int64)
    for k, primitive in enumerate(primitives):
        t, labels = primitive.intersect(origin, world_dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_label[closer] = labels[closer]
        best_id[closer] = k

    keep = (
        np.isfinite(best_t)
        & (best_t >= lidar.min_range)
        & (best_t <= lidar.max_range)
    )
    t = best_t[keep]
    if lidar.range_noise > 0:
        rng = np.random.default_rng([lidar.seed, frame_index])
        t = t + rng.normal(0.0, lidar.range_noise, size=len(t))
    points = t[:, None] * directions[keep]
    frame = PointCloudFrame(
        points,
        ring[keep],
        azimuth[keep],
        timestamp=0.1 * frame_index,
        frame_id=frame_index,
    )
    truth = GroundTruth(best_label[keep], best_id[keep], pose, frame_index)
    logger.debug("simulated frame_index=%d points=%d", frame_index, len(points))
    return frame, truth


def cell_labels(
    points: np.ndarray, values: np.ndarray, resolution: float, priority: Sequence[int]
) -> Dict[Tuple[int, int], int]:
    """Per-cell value: the first of ``priority`` present among the cell's points."""
    cells = np.floor(np.asarray(points)[:, :2] / resolution).astype(np.int64)
    rank = {v: i for i, v in enumerate(priority)}
    out: Dict[Tuple[int, int], int] = {}
    for (ix, iy), v in zip(map(tuple, cells.tolist()), values.tolist()):
        key = (ix, iy)
        if key not in out or rank[v] < rank[out[key]]:
            out[key] = v
    return out


def eval_detection(
    labeled: LabeledFrame, truth: GroundTruth, resolution: float = 0.1
) -> Tuple[float, float]:
    """Missed curb and false road rates over 2D cells.

    A cell is curb if any of its points is curb, else road if any is road.
    A cell is detected as obstacle if any of its points is labeled obstacle.
    Curb cells detected as obstacle count as correct.
    """
    points = labeled.frame.points
    if len(points) != len(truth.labels):
        raise ValueError("labeled frame and ground truth differ in size")
    true_cells = cell_labels(points, truth.labels, resolution, (CURB, ROAD, IRRELEVANT))
    detected = cell_labels(
        points, labeled.obstacle.astype(np.int64), resolution, (1, 0)
    )
    n_curb = n_missed = n_road = n_false = 0
    for key, label in true_cells.items():
        if label == CURB:
            n_curb += 1
            n_missed += detected[key] == 0
        elif label == ROAD:
            n_road += 1
            n_false += detected[key] == 1
    rate_missed = n_missed / n_curb if n_curb else 0.0
    rate_false = n_false / n_road if n_road else 0.0
    return rate_missed, rate_false


def straight_trajectory(
    start: Sequence[float],
    end: Sequence[float],
    count: int,
    yaw: Optional[float] = None,
) -> List[Pose]:
    """Evenly spaced poses from ``start`` to ``end``; heading along the segment."""
    if count < 1:
        raise ConfigurationError("trajectory needs at least one pose")
    a = np.asarray(start, dtype=np.float64)
    b = np.asarray(end, dtype=np.float64)
    if yaw is None:
        yaw = math.atan2(b[1] - a[1], b[0] - a[0]) if np.any(b[:2] != a[:2]) else 0.0
    steps = np.linspace(0.0, 1.0, count) if count > 1 else np.zeros(1)
    return [Pose.from_xyz_yaw(*(a + s * (b - a)), yaw) for s in steps]


def parse_scene(text: str, source: str = "<scene>") -> SceneSpec:
    try:
        return SceneSpec.model_validate_json(text)
    except ValidationError as err:
        raise MalformedInputError(f"{source}: invalid scene: {err}") from err


def load_scene(name_or_path: str) -> SceneSpec:
    """Scene from the bundled library by name, or from a JSON file."""
    if name_or_path in SCENE_LIBRARY:
        text = (
            resources.files("road_atlas")
            .joinpath("scenes", f"{name_or_path}.json")
            .read_text(encoding="utf-8")
        )
        return parse_scene(text, name_or_path)
    path = Path(name_or_path)
    if path.suffix == ".json" and path.is_file():
        return parse_scene(path.read_text(encoding="utf-8"), str(path))
    raise ConfigurationError(
        f"Unknown scene: {name_or_path} (library: {', '.join(SCENE_LIBRARY)})"
    )
