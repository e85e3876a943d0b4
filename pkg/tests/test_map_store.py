"""Tests for the binary atlas format and storage accounting."""

from pathlib import Path

import numpy as np
import pytest

from road_atlas.core import pack_keys
from road_atlas.errors import AtlasFormatError
from road_atlas.fusion import Atlas
from road_atlas.map_store import (
    CELL,
    HEADER,
    LAYER,
    MAGIC,
    VERSION,
    dump_atlas,
    load_atlas,
    parse_atlas,
    save_atlas,
    serialized_size,
    stats,
)
from road_atlas.models import RunConfig
from road_atlas.service import build_atlas
from road_atlas.synth import load_scene, simulate_scan, straight_trajectory


def test_record_sizes():
    assert HEADER.size == 56
    assert CELL.size == 11
    assert LAYER.size == 14


def _with_descriptors(atlas: Atlas) -> Atlas:
    keys = pack_keys(np.array([0, 0, 40]), np.array([0, 1, 40]))
    codes = np.zeros((3, atlas.segments.n_segments), dtype=np.uint8)
    codes[0, 2] = 12
    codes[1, :] = 7
    codes[2, 0] = 15
    atlas.descriptors.set_codes(keys[:2], codes[:2])
    # deck-level cell anchored at a world segment of its own
    atlas.descriptors.set_codes(keys[2:], codes[2:], base=4)
    return atlas


def test_round_trip_is_bit_identical(tmp_path, overpass_atlas):
    atlas = _with_descriptors(overpass_atlas)
    path = tmp_path / "atlas.lra"
    written = save_atlas(atlas, str(path))
    data = path.read_bytes()
    assert written == len(data) == serialized_size(atlas)

    loaded = load_atlas(str(path))
    assert dump_atlas(loaded) == data
    assert loaded.descriptor_snapshot() == atlas.descriptor_snapshot()
    assert loaded.layers_at(0, 0)[1].mu == pytest.approx(5.0)
    assert loaded.layers_at(0, 0)[1].is_free
    # descriptor-only cell survives without layers
    assert loaded.layers_at(40, 40) == ()
    assert loaded.descriptors.get(40, 40).codes[0] == 15
    assert loaded.descriptors.get(40, 40).base == 4
    assert loaded.descriptors.get(0, 0).base == -1


def test_built_map_reloads(yard_map):
    data = Path(yard_map).read_bytes()
    assert data[:4] == MAGIC
    assert dump_atlas(parse_atlas(data)) == data


def test_empty_atlas(empty_map):
    data = Path(empty_map).read_bytes()
    assert len(data) == HEADER.size
    atlas = parse_atlas(data)
    assert atlas.columns == {}
    report = stats(atlas)
    assert report.cells == 0
    assert report.serialized_bytes == 0
    assert report.compaction_ratio == 0.0


def _header(**overrides):
    values = dict(
        magic=MAGIC,
        version=VERSION,
        resolution=0.1,
        ox=0.0,
        oy=0.0,
        n_segments=8,
        bits=4,
        z_low=-1.0,
        z_high=7.0,
        cells=0,
        keyframes=0,
    )
    values.update(overrides)
    return HEADER.pack(*values.values())


@pytest.mark.parametrize(
    "data, offset",
    [
        (_header(magic=b"XXXX"), 0),
        (_header(version=7), 4),
        (_header(resolution=-1.0), 6),
        (_header(bits=3), 31),
        (_header(z_low=7.0, z_high=-1.0), 30),
        (_header()[:20], 0),
        (_header() + b"\x00", HEADER.size),
        (_header(cells=1) + CELL.pack(0, 0, 1, 0), HEADER.size + CELL.size),
    ],
)
def test_parse_errors_report_offsets(data, offset):
    with pytest.raises(AtlasFormatError) as exc:
        parse_atlas(data)
    assert exc.value.offset == offset
    assert f"at byte offset {offset}" in str(exc.value)


def test_cells_out_of_order():
    cell = CELL.pack(1, 0, 0, 0) + bytes(4)
    earlier = CELL.pack(0, 5, 0, 0) + bytes(4)
    with pytest.raises(AtlasFormatError, match="out of order") as exc:
        parse_atlas(_header(cells=2) + cell + earlier)
    assert exc.value.offset == HEADER.size + len(cell)


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError, match="Cannot read atlas file"):
        load_atlas(str(tmp_path / "missing.lra"))


def test_stats(overpass_atlas):
    atlas = _with_descriptors(overpass_atlas)
    report = stats(atlas)
    deck_cells = 5 * 21
    assert report.cells == 21 * 46 + 1
    assert report.surface_cells == 21 * 46
    assert report.multi_layer_cells == deck_cells
    assert report.layers == 21 * 46 + deck_cells
    assert report.descriptor_cells == 3
    assert report.compaction_ratio == pytest.approx(1.0 / 8.0)
    assert report.serialized_bytes == len(dump_atlas(atlas))


def test_stats_of_built_map(yard_map):
    report = stats(load_atlas(yard_map))
    assert report.cells > 0
    assert report.descriptor_cells > 0
    assert report.compaction_ratio == pytest.approx(1.0 / 8.0)
    assert report.file_ratio <= 0.25


def test_scanned_overpass_beats_dense_voxels():
    """A map built from scans of both levels stays under a quarter of the voxel grid."""
    scene = load_scene("overpass")
    lidar = scene.lidar.model_copy(update={"width": 720})
    scene = scene.model_copy(update={"lidar": lidar})
    poses = straight_trajectory([0.0, -8.0, 6.8], [0.0, 8.0, 6.8], 5)
    poses += straight_trajectory([-8.0, 0.0, 1.8], [8.0, 0.0, 1.8], 5)
    frames = [simulate_scan(scene, pose, i)[0] for i, pose in enumerate(poses)]
    atlas, _ = build_atlas(frames, poses, RunConfig(width=720, radius=10.0))

    report = stats(atlas)
    assert report.multi_layer_cells > 0
    assert report.descriptor_cells > 0
    assert report.serialized_bytes == len(dump_atlas(atlas))
    assert report.file_ratio <= 0.25
