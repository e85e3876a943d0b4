"""Binary ``.lra`` atlas files and storage accounting.

Layout, all little-endian::

    header   magic "LRA1", version u16, resolution f64, origin 2 x f64,
             n_segments u8, bits_per_segment u8, z_low f32, z_high f32,
             cell_count u64, keyframe_count u64
    cell     ix i32, iy i32, layer_count u8, descriptor base i16,
             layer_count x (mu f32, sigma f32, n_obs u32, label u8, occupancy i8),
             ceil(n_segments / 2) descriptor bytes

Cells are sorted by (ix, iy). Occupancy is log-odds scaled to [-127, 127]
of the clamp bound. The descriptor base is the world segment index of the
lowest code; z_low and z_high are sensor-relative. A cell without descriptor
stores base 0 and zero bytes.
"""

import logging
import math
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .core import pack_keys, unpack_keys
from .errors import AtlasFormatError
from .fusion import Atlas, CellColumn, SurfaceLayer
from .models import MapStats, SegmentConfig

logger = logging.getLogger(__name__)

MAGIC = b"LRA1"
VERSION = 2
HEADER = struct.Struct("<4sHd2dBBffQQ")
CELL = struct.Struct("<iiBh")
LAYER = struct.Struct("<ffIBb")


def _all_cells(atlas: Atlas) -> List[Tuple[int, int]]:
    keys = {key for key, col in atlas.columns.items() if col.layers}
    ix, iy = unpack_keys(atlas.descriptors.keys())
    keys.update(zip(ix.tolist(), iy.tolist()))
    return sorted(keys)


def _quantize_occupancy(logodds: float, l_max: float) -> int:
    return int(max(-127, min(127, round(logodds / l_max * 127.0))))


def serialized_size(atlas: Atlas) -> int:
    """Exact byte count ``save_atlas`` writes for this atlas."""
    n_bytes = atlas.segments.descriptor_bytes
    cells = _all_cells(atlas)
    layers = sum(len(atlas.layers_at(*key)) for key in cells)
    return HEADER.size + len(cells) * (CELL.size + n_bytes) + layers * LAYER.size


def dump_atlas(atlas: Atlas) -> bytes:
    segments = atlas.segments
    cells = _all_cells(atlas)
    out = bytearray(
        HEADER.pack(
            MAGIC,
            VERSION,
            atlas.resolution,
            float(atlas.origin[0]),
            float(atlas.origin[1]),
            segments.n_segments,
            segments.bits_per_segment,
            segments.z_low,
            segments.z_high,
            len(cells),
            atlas.current_seq + 1,
        )
    )
    empty = bytes(segments.descriptor_bytes)
    for ix, iy in cells:
        layers = atlas.layers_at(ix, iy)
        descriptor = atlas.descriptors.get(ix, iy)
        base = descriptor.base if descriptor is not None else 0
        out += CELL.pack(ix, iy, len(layers), base)
        for layer in layers:
            out += LAYER.pack(
                layer.mu,
                layer.sigma,
                layer.n_obs,
                layer.label,
                _quantize_occupancy(layer.occupancy, atlas.l_max),
            )
        out += descriptor.pack() if descriptor is not None else empty
    return bytes(out)


def save_atlas(atlas: Atlas, path: str) -> int:
    """Write the atlas; returns the number of bytes written."""
    data = dump_atlas(atlas)
    try:
        Path(path).write_bytes(data)
    except OSError as err:
        raise OSError(f"Cannot write atlas file: {path}") from err
    logger.info("saved atlas path=%s bytes=%d", path, len(data))
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.offset = 0

    def take(self, fmt: struct.Struct, what: str) -> tuple:
        if self.offset + fmt.size > len(self.data):
            raise AtlasFormatError(f"Truncated {what}", self.offset)
        values = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return values

    def raw(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise AtlasFormatError(f"Truncated {what}", self.offset)
        chunk = bytes(self.data[self.offset : self.offset + size])
        self.offset += size
        return chunk


def parse_atlas(data: bytes) -> Atlas:
    """Rebuild an atlas from file bytes; keyframe records are not stored."""
    reader = _Reader(data)
    (
        magic,
        version,
        resolution,
        ox,
        oy,
        n_segments,
        bits,
        z_low,
        z_high,
        cell_count,
        keyframe_count,
    ) = reader.take(HEADER, "header")
    if magic != MAGIC:
        raise AtlasFormatError(f"Bad magic {magic!r}", 0)
    if version != VERSION:
        raise AtlasFormatError(f"Unsupported version {version}", 4)
    if bits != 4:
        raise AtlasFormatError(f"Unsupported bits per segment {bits}", 31)
    if not (resolution > 0 and math.isfinite(resolution)):
        raise AtlasFormatError(f"Invalid resolution {resolution}", 6)
    try:
        segments = SegmentConfig(z_low=z_low, z_high=z_high, n_segments=n_segments)
    except ValueError as err:
        raise AtlasFormatError(f"Invalid segment layout: {err}", 30) from err

    atlas = Atlas(resolution, segments, origin=(ox, oy))
    # Keyframe records are not stored; later keyframes continue the sequence.
    atlas._next_seq = keyframe_count
    n_bytes = segments.descriptor_bytes
    keys: List[int] = []
    packed: List[bytes] = []
    bases: List[int] = []
    previous = None
    for _ in range(cell_count):
        at = reader.offset
        ix, iy, count, base = reader.take(CELL, "cell record")
        if previous is not None and (ix, iy) <= previous:
            raise AtlasFormatError(f"Cells out of order at ({ix}, {iy})", at)
        previous = (ix, iy)
        layers = []
        for _layer in range(count):
            mu, sigma, n_obs, label, occ = reader.take(LAYER, "layer record")
            occupancy = occ / 127.0 * atlas.l_max
            layers.append(SurfaceLayer(mu, sigma, n_obs, label, occupancy))
        descriptor = reader.raw(n_bytes, "descriptor")
        if layers:
            column = CellColumn(ix, iy)
            column.layers = tuple(layers)
            atlas.columns[(ix, iy)] = column
        if any(descriptor):
            keys.append(int(pack_keys(np.int64(ix), np.int64(iy))))
            packed.append(descriptor)
            bases.append(base)
    if reader.offset != len(data):
        raise AtlasFormatError("Trailing bytes after last cell", reader.offset)
    for key, descriptor, base in zip(keys, packed, bases):
        atlas.descriptors.set_packed(key, descriptor, base)
    return atlas


def load_atlas(path: str) -> Atlas:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise OSError(f"Cannot read atlas file: {path}") from err
    atlas = parse_atlas(data)
    logger.info("loaded atlas path=%s cells=%d", path, len(_all_cells(atlas)))
    return atlas


def stats(atlas: Atlas) -> MapStats:
    """Storage report.

    Probability storage compares the stored 4-bit descriptors against one
    f32 per segment for every stored cell; the voxel baseline is a dense f32
    column at map resolution over [z_low, z_high].
    """
    segments = atlas.segments
    cells = _all_cells(atlas)
    layer_counts = [len(atlas.layers_at(*key)) for key in cells]
    n = len(cells)
    descriptor_bytes = n * segments.descriptor_bytes
    baseline = n * segments.n_segments * 4
    voxels = math.ceil((segments.z_high - segments.z_low) / atlas.resolution - 1e-9)
    dense_voxel = n * voxels * 4
    size = serialized_size(atlas)
    return MapStats(
        cells=n,
        surface_cells=sum(1 for c in layer_counts if c),
        layers=sum(layer_counts),
        multi_layer_cells=sum(1 for c in layer_counts if c > 1),
        descriptor_cells=len(atlas.descriptors),
        descriptor_bytes=descriptor_bytes,
        serialized_bytes=size if n else 0,
        dense_baseline_bytes=baseline,
        dense_voxel_bytes=dense_voxel,
        compaction_ratio=descriptor_bytes / baseline if baseline else 0.0,
        file_ratio=size / dense_voxel if dense_voxel else 0.0,
    )
