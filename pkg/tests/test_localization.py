"""Tests for ICP registration and map-based localization."""

import math
import time

import numpy as np
import pytest

from road_atlas.core import Pose, transform_points
from road_atlas.errors import LocalizationError
from road_atlas.fusion import Atlas
from road_atlas.ingest import list_frame_files, read_frame_bin, read_poses
from road_atlas.localization import (
    LocalizationResult,
    MapLocalizer,
    icp_register,
    localize_frame,
    rotation_rmse_deg,
    translation_rmse,
    write_trajectory,
)
from road_atlas.map_store import load_atlas
from road_atlas.models import LocalizationConfig, SegmentConfig
from road_atlas.synth import simulate_scan


def test_icp_recovers_small_offset():
    """A rigidly moved copy of a cloud is registered back exactly."""
    rng = np.random.default_rng(7)
    target = rng.uniform(-10.0, 10.0, size=(200, 3))
    truth = Pose.from_xyz_yaw(0.2, -0.1, 0.05, math.radians(2.0))
    source = transform_points(target, truth.inverse())

    result = icp_register(source, target, max_correspondence_distance=5.0)
    assert result.converged
    assert result.pose.translation_error(truth) < 1e-6
    assert result.pose.rotation_error_deg(truth) < 1e-6
    assert result.translation_residual < 1e-6
    assert result.matched_fraction == 1.0


def test_icp_needs_points():
    config = LocalizationConfig(min_points=10)
    with pytest.raises(LocalizationError, match="at least 10"):
        icp_register(np.zeros((5, 3)), np.zeros((50, 3)), config=config)


def test_localize_against_built_map(yard_map, yard_run):
    """Seeded at its true pose, a mapped frame stays there."""
    atlas = load_atlas(yard_map)
    truth = read_poses(yard_run["poses"])
    frame = read_frame_bin(str(list_frame_files(yard_run["frames"])[1]), frame_id=1)

    localizer = MapLocalizer(atlas)
    assert len(localizer.map_cloud) > 0
    assert localizer.gate == pytest.approx(2.0 * atlas.resolution)
    assert localizer.gate_schedule() == pytest.approx(
        [2.0, 1.0, 0.5, 0.25, 0.2, 0.2, 0.2]
    )

    result = localizer.localize(frame, truth[1])
    assert result.pose.translation_error(truth[1]) <= 0.05
    assert result.pose.rotation_error_deg(truth[1]) <= 0.5
    assert set(result.timings) == {"segmentation_s", "registration_s"}
    assert "frame_id=1" in result.log_line(1)


def test_localize_on_empty_map(yard_run):
    frame = read_frame_bin(str(list_frame_files(yard_run["frames"])[0]))
    with pytest.raises(LocalizationError, match="fewer than"):
        localize_frame(Atlas(0.1, SegmentConfig()), frame, Pose.identity())


def test_trajectory_file(tmp_path):
    results = [
        LocalizationResult(Pose.from_xyz_yaw(1.0, 2.0, 3.0, 0.0), 0.01, 4, True),
        LocalizationResult(Pose.identity(), math.inf, 0, False),
    ]
    path = tmp_path / "trajectory.txt"
    write_trajectory(str(path), [0, 1], results)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    first = lines[0].split()
    assert len(first) == 10
    assert first[0] == "0" and float(first[1]) == 1.0 and first[-1] == "1"
    assert lines[1].split()[-2:] == ["-1.000000", "0"]


def test_rmse():
    truths = [Pose.identity(), Pose.identity()]
    estimates = [
        Pose.from_xyz_yaw(3.0, 4.0, 0.0, 0.0),
        Pose.from_xyz_yaw(0.0, 0.0, 0.0, math.radians(2.0)),
    ]
    assert translation_rmse(estimates, truths) == pytest.approx(math.sqrt(12.5))
    assert rotation_rmse_deg(estimates, truths) == pytest.approx(math.sqrt(2.0))
    assert translation_rmse([], []) == 0.0


def test_perturbed_seed_is_recovered(yard_map, yard_run, small_config):
    """Half a meter and five degrees off, the frame still snaps to its pose."""
    atlas = load_atlas(yard_map)
    truth = read_poses(yard_run["poses"])[1]
    frame = read_frame_bin(str(list_frame_files(yard_run["frames"])[1]), frame_id=1)
    seed = Pose.from_xyz_yaw(
        truth.translation[0] + 0.4,
        truth.translation[1] + 0.3,
        truth.translation[2],
        truth.yaw + math.radians(5.0),
    )
    assert seed.translation_error(truth) == pytest.approx(0.5)

    localizer = MapLocalizer(
        atlas, small_config.localization(), small_config.detection()
    )
    result = localizer.localize(frame, seed)
    assert result.converged
    assert result.pose.translation_error(truth) <= 0.05
    assert result.pose.rotation_error_deg(truth) <= 0.5


def test_map_is_cropped_around_prior(yard_map, yard_run):
    atlas = load_atlas(yard_map)
    prior = read_poses(yard_run["poses"])[1]
    localizer = MapLocalizer(atlas, LocalizationConfig(radius=9.0))
    near = localizer.map_points_near(prior)
    assert 0 < len(near) < len(localizer.map_cloud)
    assert np.all(np.linalg.norm(near - prior.translation, axis=1) <= 9.0)

    # small moves reuse the crop, a long one cuts a new one
    nudged = Pose.from_xyz_yaw(*(prior.translation + [1.0, 0.0, 0.0]), prior.yaw)
    assert localizer.map_points_near(nudged) is near
    far = Pose.from_xyz_yaw(*(prior.translation + [6.0, 0.0, 0.0]), prior.yaw)
    assert localizer.map_points_near(far) is not near


def test_localize_far_from_map_content(yard_map, yard_run):
    atlas = load_atlas(yard_map)
    frame = read_frame_bin(str(list_frame_files(yard_run["frames"])[0]))
    far = Pose.from_xyz_yaw(500.0, 0.0, 1.8, 0.0)
    with pytest.raises(LocalizationError, match="fewer than"):
        MapLocalizer(atlas, LocalizationConfig(radius=10.0)).localize(frame, far)


@pytest.mark.timing
def test_revisit_tracking(yard_map, yard_scene, small_config):
    """Two hundred frames on a parallel lane are tracked from the first pose."""
    atlas = load_atlas(yard_map)
    localizer = MapLocalizer(
        atlas, small_config.localization(), small_config.detection()
    )
    truths = [
        Pose.from_xyz_yaw(x, 0.1, 1.8, 0.0) for x in np.linspace(0.0, 1.0, 200)
    ]

    estimates = []
    elapsed = []
    prev = truths[0]
    for i, truth in enumerate(truths):
        frame, _ = simulate_scan(yard_scene, truth, frame_index=i)
        started = time.perf_counter()
        result = localizer.localize(frame, prev)
        elapsed.append(time.perf_counter() - started)
        estimates.append(result.pose)
        prev = result.pose

    assert translation_rmse(estimates, truths) <= 0.2
    assert float(np.mean(elapsed)) <= 0.15


@pytest.mark.parametrize(
    "field, value",
    [
        ("radius", 0.0),
        ("coarse_correspondence_distance", -1.0),
        ("max_correspondence_distance", 0.0),
        ("max_iterations", 0),
        ("reencode_rounds", 0),
        ("min_inlier_fraction", 1.5),
    ],
)
def test_localization_config_rejects(field, value):
    with pytest.raises(ValueError):
        LocalizationConfig(**{field: value})
