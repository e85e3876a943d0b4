"""Tests for plane fitting and the sector-wise traversability detector."""

import math

import numpy as np
import pytest

from road_atlas.core import PointCloudFrame, Pose
from road_atlas.models import DetectionConfig, RunConfig
from road_atlas.synth import (
    CURB,
    ROAD,
    SceneSpec,
    eval_detection,
    load_scene,
    simulate_scan,
)
from road_atlas.traversability import (
    LabeledFrame,
    PlaneModel,
    TraversabilityDetector,
    check_normal,
    detect_traversable,
    _step_run,
    fit_plane_ransac,
)

WALL = 1


def test_ransac_recovers_plane_among_outliers():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-5.0, 5.0, size=(100, 2))
    z = 0.1 * xy[:, 0] + 0.5 + rng.normal(0.0, 0.005, size=100)
    plane_pts = np.column_stack([xy, z])
    outliers = rng.uniform(-5.0, 5.0, size=(30, 3))
    points = np.vstack([plane_pts, outliers])

    plane = fit_plane_ransac(points, 0.05, 200, np.random.default_rng(0))
    assert plane is not None
    expected = np.array([-0.1, 0.0, 1.0]) / math.sqrt(1.01)
    angle = math.degrees(math.acos(min(1.0, float(plane.normal @ expected))))
    assert angle < 2.0
    assert plane.normal[2] >= 0
    assert np.count_nonzero(plane.inlier_indices < 100) >= 95


def test_ransac_small_input_is_exhaustive():
    """Five points: every triple is tried, the floor plane wins."""
    points = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.5, 1.0]], dtype=float
    )
    plane = fit_plane_ransac(points, 0.01, 200)
    assert plane.inlier_indices.tolist() == [0, 1, 2, 3]
    np.testing.assert_allclose(plane.normal, [0.0, 0.0, 1.0], atol=1e-12)
    assert plane.offset == pytest.approx(0.0)


def test_ransac_degenerate_inputs():
    assert fit_plane_ransac(np.zeros((2, 3)), 0.05, 10) is None
    line = np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)])
    assert fit_plane_ransac(line, 0.05, 10) is None


def test_check_normal():
    flat = PlaneModel(np.array([0.0, 0.0, 1.0]), 0.0, np.arange(3))
    steep = PlaneModel(
        np.array([math.sin(math.radians(30)), 0.0, math.cos(math.radians(30))]),
        0.0,
        np.arange(3),
    )
    assert check_normal(flat, 0.4)
    assert not check_normal(steep, 0.4)
    assert steep.tilt == pytest.approx(math.radians(30))


def test_labeled_frame_size_mismatch():
    frame = PointCloudFrame(np.ones((2, 3)), [0, 0], [0.0, 0.1])
    with pytest.raises(ValueError):
        LabeledFrame(frame, np.array([True]))


def test_window_count():
    detector = TraversabilityDetector(RunConfig(width=360).detection())
    # 15 coarse windows, each followed by 14 three-row fine windows
    assert len(detector.windows()) == 225


def test_empty_frame():
    labeled = detect_traversable(PointCloudFrame.empty())
    assert len(labeled) == 0


def test_flat_ground_and_wall(yard_scene, sensor_pose, small_config):
    """Road returns are ground, wall returns clear of the floor are obstacles."""
    frame, truth = simulate_scan(yard_scene, sensor_pose)
    labeled = detect_traversable(frame, small_config.detection())

    road = truth.labels == ROAD
    assert np.count_nonzero(road) > 1000
    assert np.mean(labeled.ground[road]) >= 0.98

    world_z = frame.points[:, 2] + sensor_pose.translation[2]
    wall = (truth.primitive == WALL) & (world_z > 0.5)
    assert np.count_nonzero(wall) > 50
    assert np.all(labeled.obstacle[wall])


def test_thread_count_does_not_change_labels(yard_scene, sensor_pose, small_config):
    frame, _ = simulate_scan(yard_scene, sensor_pose)
    config = small_config.detection()
    serial = TraversabilityDetector(config).detect(frame)
    threaded = TraversabilityDetector(config.model_copy(update={"threads": 4})).detect(
        frame
    )
    np.testing.assert_array_equal(serial.ground, threaded.ground)


@pytest.fixture(scope="module")
def curb_scan():
    """One full-resolution frame of the curb-road scene from the lane center."""
    return simulate_scan(load_scene("curb-road"), Pose.from_xyz_yaw(0.0, 0.0, 1.8, 0.0))


def test_curb_cells_are_obstacles(curb_scan):
    """Curbs are found at the default threshold without flagging the road."""
    frame, truth = curb_scan
    labeled = detect_traversable(frame, DetectionConfig(ransac_threshold=0.05))
    rate_missed, rate_false = eval_detection(labeled, truth)
    assert rate_missed <= 0.10
    assert rate_false <= 0.05

    curb_top = (truth.labels == CURB) & (frame.points[:, 2] > -1.8 + 0.1)
    assert np.count_nonzero(curb_top) > 100
    assert not labeled.ground[curb_top].any()


def test_missed_curbs_grow_with_threshold(curb_scan):
    frame, truth = curb_scan
    missed = [
        eval_detection(
            detect_traversable(frame, DetectionConfig(ransac_threshold=t)), truth
        )[0]
        for t in (0.02, 0.05, 0.10)
    ]
    assert missed[0] <= missed[1] <= missed[2]


def test_overlapping_windows_recover_more_road():
    """A raised quadrant swallows the road at window edges unless windows overlap."""
    scene = SceneSpec.model_validate(
        {
            "name": "plaza",
            "lidar": {"width": 1800, "max_range": 80.0},
            "primitives": [
                {"kind": "ground", "z": 0.0},
                {"kind": "box", "min": [0.5, 0.5, 0.0], "max": [80.0, 80.0, 0.5]},
            ],
        }
    )
    frame, truth = simulate_scan(scene, Pose.from_xyz_yaw(0.0, 0.0, 1.8, 0.0))
    road = truth.labels == ROAD

    # an empty step band leaves the window layout as the only difference
    base = DetectionConfig(max_step_height=0.05)
    tiled = detect_traversable(frame, base.model_copy(update={"sector_col_step": 50}))
    overlapping = detect_traversable(frame, base)

    tiled_misses = np.count_nonzero(tiled.obstacle[road])
    overlap_misses = np.count_nonzero(overlapping.obstacle[road])
    assert overlap_misses < tiled_misses
    assert not np.any(overlapping.obstacle[road] & tiled.ground[road])


def test_ground_stays_on_accepted_planes(curb_scan):
    """Every Ground point is an inlier of a near-horizontal plane."""
    frame, _ = curb_scan
    labeled = detect_traversable(frame)
    world_z = frame.points[labeled.ground, 2] + 1.8
    assert np.all(np.abs(world_z) <= 0.05 + 1e-9)


def test_step_run_follows_descending_face():
    heights = np.array([[0.0, 0.0, 0.01, 0.03, 0.06, 0.15, 0.15, 0.0]])
    seeds = heights > 0.05
    open_ = ~seeds
    reached = _step_run(heights, seeds, open_, 0.005)
    assert reached.tolist() == [[False, False, True, True, False, False, False, False]]


def test_step_run_wraps_columns():
    heights = np.array([[0.02, 0.0, 0.0, 0.10]])
    seeds = np.array([[False, False, False, True]])
    reached = _step_run(heights, seeds, ~seeds, 0.005)
    assert reached.tolist() == [[True, False, False, False]]


def test_thread_count_keeps_step_labels(curb_scan):
    frame, _ = curb_scan
    config = DetectionConfig()
    serial = TraversabilityDetector(config).detect(frame)
    threaded = TraversabilityDetector(config.model_copy(update={"threads": 3})).detect(
        frame
    )
    np.testing.assert_array_equal(serial.ground, threaded.ground)


def test_step_height_must_be_positive():
    with pytest.raises(ValueError):
        DetectionConfig(max_step_height=0.0)
