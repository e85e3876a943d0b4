"""Tests for frame and pose file ingestion."""

import math

import numpy as np
import pytest

from road_atlas.core import Pose
from road_atlas.errors import MalformedInputError
from road_atlas.ingest import (
    format_pose,
    list_frame_files,
    parse_pose_line,
    read_frame_bin,
    read_poses,
    write_frame_bin,
    write_poses,
)


def test_frame_round_trip(tmp_path):
    points = np.array([[5.0, 0.0, -1.8], [0.0, 7.0, 0.5], [-3.0, -3.0, 1.0]])
    path = tmp_path / "000000.bin"
    assert write_frame_bin(str(path), points) == 48

    frame = read_frame_bin(str(path), frame_id=4, timestamp=0.4)
    np.testing.assert_allclose(frame.points, points.astype(np.float32), rtol=0)
    assert frame.frame_id == 4
    # -1.8 m at 5 m sits at about -19.8 degrees: nearest channel is ring 0
    assert frame.ring[0] == 0


def test_frame_drops_non_finite_records(tmp_path):
    path = tmp_path / "nan.bin"
    write_frame_bin(str(path), np.array([[1.0, 0.0, 0.0], [np.nan, 0.0, 0.0]]))
    assert len(read_frame_bin(str(path))) == 1


def test_frame_bad_length(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(bytes(20))
    with pytest.raises(MalformedInputError, match="multiple of 16"):
        read_frame_bin(str(path))
    with pytest.raises(OSError, match="Cannot read frame file"):
        read_frame_bin(str(tmp_path / "missing.bin"))


def test_list_frame_files(tmp_path):
    for name in ("000002.bin", "000000.bin", "notes.txt", "000001.bin"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in list_frame_files(str(tmp_path))] == [
        "000000.bin",
        "000001.bin",
        "000002.bin",
    ]
    with pytest.raises(OSError, match="Frame directory not found"):
        list_frame_files(str(tmp_path / "nowhere"))


def test_pose_round_trip(tmp_path):
    poses = [
        Pose.from_xyz_yaw(1.0, -2.0, 1.8, math.radians(37.0)),
        Pose.from_xyz_yaw(0.0, 0.0, 0.0, 0.0),
    ]
    path = tmp_path / "poses.txt"
    write_poses(str(path), poses)
    loaded = read_poses(str(path))
    assert len(loaded) == 2
    for a, b in zip(poses, loaded):
        assert a.same_as(b)
    assert len(format_pose(poses[0]).split()) == 12


def test_pose_line_errors(tmp_path):
    with pytest.raises(MalformedInputError, match="expected 12 numbers") as exc:
        parse_pose_line("1 0 0 0 0 1 0 0 0 0 1", 3)
    assert exc.value.line == 3
    with pytest.raises(MalformedInputError, match="non-numeric"):
        parse_pose_line("1 0 0 x 0 1 0 0 0 0 1 0", 1)
    with pytest.raises(MalformedInputError, match="non-finite"):
        parse_pose_line("1 0 0 inf 0 1 0 0 0 0 1 0", 1)
    with pytest.raises(MalformedInputError, match="not orthonormal"):
        parse_pose_line("2 0 0 0 0 1 0 0 0 0 1 0", 1)

    path = tmp_path / "poses.txt"
    path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(MalformedInputError) as exc:
        read_poses(str(path))
    assert exc.value.line == 3


def test_pose_line_repairs_small_drift():
    pose = parse_pose_line("1.0000005 0 0 0 0 1 0 0 0 0 1 0", 1)
    r = pose.rotation_matrix
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
