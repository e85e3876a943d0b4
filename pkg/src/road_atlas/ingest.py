"""Readers and writers for recorded logs.

Frames are KITTI-style ``.bin`` files of little-endian float32 records
``(x, y, z, intensity)``; poses are text lines of 12 numbers holding the
row-major 3 x 4 sensor-to-world transform.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .core import PointCloudFrame, Pose
from .errors import MalformedInputError
from .models import VLP16_ELEVATIONS_DEG

logger = logging.getLogger(__name__)

RECORD = np.dtype("<f4")
RECORD_BYTES = 16
ORTHO_REPAIR = 1e-6
ORTHO_REJECT = 1e-3


def read_frame_bin(
    path: str,
    elevations_deg: Optional[Sequence[float]] = None,
    frame_id: int = 0,
    timestamp: float = 0.0,
) -> PointCloudFrame:
    """Parse a binary frame; rings come from the nearest channel elevation."""
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise OSError(f"Cannot read frame file: {path}") from err
    if len(data) % RECORD_BYTES:
        raise MalformedInputError(
            f"{path}: length {len(data)} is not a multiple of {RECORD_BYTES}"
        )
    records = np.frombuffer(data, dtype=RECORD).reshape(-1, 4)
    points = records[:, :3].astype(np.float64)
    finite = np.all(np.isfinite(points), axis=1)
    dropped = int(np.count_nonzero(~finite))
    if dropped:
        logger.warning("dropped non-finite points path=%s count=%d", path, dropped)
        points = points[finite]
    table = VLP16_ELEVATIONS_DEG if elevations_deg is None else elevations_deg
    return PointCloudFrame.from_points(points, table, timestamp, frame_id)


def write_frame_bin(path: str, points: np.ndarray) -> int:
    """Write points as float32 records with zero intensity; returns bytes."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    records = np.zeros((len(pts), 4), dtype=RECORD)
    records[:, :3] = pts
    data = records.tobytes()
    try:
        Path(path).write_bytes(data)
    except OSError as err:
        raise OSError(f"Cannot write frame file: {path}") from err
    return len(data)


def list_frame_files(directory: str) -> List[Path]:
    """``.bin`` files of a directory in name order."""
    root = Path(directory)
    if not root.is_dir():
        raise OSError(f"Frame directory not found: {directory}")
    return sorted(p for p in root.iterdir() if p.suffix == ".bin")


def parse_pose_line(text: str, line: int) -> Pose:
    fields = text.split()
    if len(fields) != 12:
        raise MalformedInputError(f"expected 12 numbers, got {len(fields)}", line)
    try:
        values = np.array([float(f) for f in fields])
    except ValueError as err:
        raise MalformedInputError(f"non-numeric value: {err}", line) from err
    if not np.all(np.isfinite(values)):
        raise MalformedInputError("non-finite value", line)
    m = values.reshape(3, 4)
    r = m[:, :3]
    drift = float(np.abs(r.T @ r - np.eye(3)).max())
    if drift > ORTHO_REJECT or np.linalg.det(r) <= 0:
        raise MalformedInputError(
            f"rotation is not orthonormal (drift {drift:.3g})", line
        )
    if drift > ORTHO_REPAIR:
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
    return Pose.from_rotation(m[:, 3], Rotation.from_matrix(r))


def read_poses(path: str) -> List[Pose]:
    """One pose per non-empty line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise OSError(f"Cannot read pose file: {path}") from err
    poses = []
    for number, text in enumerate(lines, start=1):
        if text.strip():
            poses.append(parse_pose_line(text, number))
    return poses


def format_pose(pose: Pose) -> str:
    m = pose.matrix()[:3, :]
    return " ".join(f"{v:.17g}" for v in m.reshape(-1))


def write_poses(path: str, poses: Sequence[Pose]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for pose in poses:
                f.write(format_pose(pose) + "\n")
    except OSError as err:
        raise OSError(f"Cannot write pose file: {path}") from err
