"""Test configuration and fixtures."""

import json
from pathlib import Path
from typing import Dict

import pytest

from road_atlas.core import Pose
from road_atlas.fusion import Atlas, CellColumn, SurfaceLayer
from road_atlas.ingest import write_poses
from road_atlas.map_store import save_atlas
from road_atlas.models import (
    BuildMapRequest,
    RunConfig,
    SegmentConfig,
    SimulateSceneRequest,
)
from road_atlas.service import RoadAtlasService
from road_atlas.synth import SceneSpec, straight_trajectory

SMALL_WIDTH = 360
SENSOR_HEIGHT = 1.8

YARD = {
    "name": "yard",
    "description": "Flat ground with a wall and two boxes.",
    "lidar": {"width": SMALL_WIDTH, "max_range": 40.0},
    "primitives": [
        {"kind": "ground", "z": 0.0},
        {"kind": "wall", "min": [8.0, -6.0, 0.0], "max": [8.3, 6.0, 3.0]},
        {"kind": "box", "min": [-6.0, -6.0, 0.0], "max": [-5.0, -5.0, 2.0]},
        {"kind": "box", "min": [2.0, 5.0, 0.0], "max": [3.0, 6.0, 1.2]},
    ],
}


@pytest.fixture
def yard_scene() -> SceneSpec:
    """Small flat scene, 16 channels at 1 degree azimuth."""
    return SceneSpec.model_validate(YARD)


@pytest.fixture
def small_config() -> RunConfig:
    return RunConfig(width=SMALL_WIDTH)


@pytest.fixture
def service() -> RoadAtlasService:
    return RoadAtlasService()


@pytest.fixture
def yard_run(tmp_path: Path, service: RoadAtlasService) -> Dict[str, str]:
    """Three simulated frames of the yard scene with their poses on disk."""
    scene_file = tmp_path / "yard.json"
    scene_file.write_text(json.dumps(YARD), encoding="utf-8")
    trajectory = tmp_path / "trajectory.txt"
    write_poses(
        str(trajectory),
        straight_trajectory([0.0, 0.0, SENSOR_HEIGHT], [1.0, 0.0, SENSOR_HEIGHT], 3),
    )
    out = tmp_path / "run"
    service.synthesize(
        SimulateSceneRequest(
            scene=str(scene_file), trajectory_file=str(trajectory), output_dir=str(out)
        )
    )
    return {
        "dir": str(out),
        "frames": str(out / "frames"),
        "poses": str(out / "poses.txt"),
        "scene": str(scene_file),
    }


@pytest.fixture
def yard_map(
    tmp_path: Path,
    yard_run: Dict[str, str],
    service: RoadAtlasService,
    small_config: RunConfig,
) -> str:
    """Map file built from ``yard_run``."""
    path = tmp_path / "yard.lra"
    service.build_map(
        BuildMapRequest(
            frames_dir=yard_run["frames"],
            poses_file=yard_run["poses"],
            output_path=str(path),
            config=small_config,
        )
    )
    return str(path)


def _free(mu: float, label: int = 1) -> SurfaceLayer:
    return SurfaceLayer(mu, 0.1, 4, label, -1.0)


@pytest.fixture
def overpass_atlas() -> Atlas:
    """Hand-built 1 m atlas: ground everywhere, a 5 m deck over ix -2..2,
    iy -10..10 and a ramp from the deck down to the ground along +y.

    Ramp cells step 5/19 m between rows.
    """
    atlas = Atlas(1.0, SegmentConfig())
    for ix in range(-10, 11):
        for iy in range(-10, 36):
            if -2 <= ix <= 2 and 11 <= iy <= 28:
                layers = (_free(5.0 - (iy - 10) * 5.0 / 19.0),)
            elif -2 <= ix <= 2 and iy <= 10:
                layers = (_free(0.0), _free(5.0, 2))
            else:
                layers = (_free(0.0),)
            column = CellColumn(ix, iy)
            column.layers = layers
            atlas.columns[(ix, iy)] = column
    return atlas


@pytest.fixture
def overpass_map(tmp_path: Path, overpass_atlas: Atlas) -> str:
    path = tmp_path / "overpass.lra"
    save_atlas(overpass_atlas, str(path))
    return str(path)


@pytest.fixture
def empty_map(tmp_path: Path) -> str:
    path = tmp_path / "empty.lra"
    save_atlas(Atlas(0.1, SegmentConfig()), str(path))
    return str(path)


@pytest.fixture
def sensor_pose() -> Pose:
    return Pose.from_xyz_yaw(0.0, 0.0, SENSOR_HEIGHT, 0.0)
