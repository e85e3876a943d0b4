"""4-bit probabilistic grid of vertical obstacle structure.

Every 2D cell carries one code per vertical segment: 0 marks a segment never
observed, 1..15 a quantized obstacle probability (8 is unknown). Codes move
through a 16 x 2 lookup table, one step per hit or miss event.

Segments sit on one world grid, segment k spanning [k h, (k + 1) h). A frame
covers the sensor-relative window snapped onto that grid at the sensor
altitude; each cell keeps the world index of its lowest segment (its base)
and moves down to the lowest window that reaches it.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .core import pack_keys, unpack_keys
from .errors import ConfigurationError
from .models import CodecConfig, SegmentConfig
from .raycast import traverse

logger = logging.getLogger(__name__)

NEVER_OBSERVED = 0
UNKNOWN_CODE = 8
MAX_CODE = 15
MISS = 0
HIT = 1

P_CLAMP_LOW = 0.03
P_CLAMP_HIGH = 0.97


def quantize_prob(p):
    """Map a probability onto codes 1..15, rounding half up."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"Probability outside [0, 1]: {p}")
    code = 1 + np.floor(14.0 * arr + 0.5).astype(np.int64)
    return int(code) if code.ndim == 0 else code


def decode_prob(code: int) -> float:
    """Probability of a code; code 0 raises because it was never observed."""
    c = int(code)
    if c == NEVER_OBSERVED:
        raise ValueError("Code 0 marks a segment that was never observed")
    if not 1 <= c <= MAX_CODE:
        raise ValueError(f"Code outside 0..15: {code}")
    return (c - 1) / 14.0


def decode_codes(codes: np.ndarray) -> np.ndarray:
    """Vectorized decode; never-observed segments become nan."""
    c = np.asarray(codes, dtype=np.float64)
    out = (c - 1.0) / 14.0
    out[c == NEVER_OBSERVED] = np.nan
    return out


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def build_update_lut(p_hit: float = 0.7, p_miss: float = 0.4) -> np.ndarray:
    """Code transitions: ``lut[code, HIT]`` and ``lut[code, MISS]``.

    A non-saturated code always moves by at least one step in the event's
    direction; code 0 is updated as if it held 0.5.
    """
    if not (0.5 < p_hit < 1.0) or not (0.0 < p_miss < 0.5):
        raise ConfigurationError(
            f"Sensor model needs 0 < p_miss < 0.5 < p_hit < 1, got {p_miss}, {p_hit}"
        )
    lut = np.zeros((16, 2), dtype=np.uint8)
    for code in range(16):
        prior = 0.5 if code == NEVER_OBSERVED else decode_prob(code)
        prior = min(max(prior, P_CLAMP_LOW), P_CLAMP_HIGH)
        for event, p_event in ((MISS, p_miss), (HIT, p_hit)):
            logodds = _logit(prior) + _logit(p_event)
            new = quantize_prob(1.0 / (1.0 + math.exp(-logodds)))
            if code != NEVER_OBSERVED:
                if event == HIT and code < MAX_CODE:
                    new = max(new, code + 1)
                elif event == MISS and code > 1:
                    new = min(new, code - 1)
            lut[code, event] = new
    return lut


def lut_from_config(config: CodecConfig) -> np.ndarray:
    return build_update_lut(config.p_hit, config.p_miss)


def pack_codes(codes: np.ndarray) -> np.ndarray:
    """Pack (..., n) codes into (..., ceil(n/2)) bytes, low nibble first."""
    c = np.asarray(codes, dtype=np.uint8)
    n = c.shape[-1]
    if n % 2:
        c = np.concatenate([c, np.zeros(c.shape[:-1] + (1,), dtype=np.uint8)], axis=-1)
    return (c[..., 0::2] | (c[..., 1::2] << 4)).astype(np.uint8)


def unpack_codes(packed: np.ndarray, n_segments: int) -> np.ndarray:
    b = np.asarray(packed, dtype=np.uint8)
    out = np.empty(b.shape[:-1] + (2 * b.shape[-1],), dtype=np.uint8)
    out[..., 0::2] = b & 0x0F
    out[..., 1::2] = b >> 4
    return out[..., :n_segments]


@dataclass(frozen=True)
class Descriptor:
    """Codes of one cell, lowest segment first, starting at world segment ``base``."""

    codes: Tuple[int, ...]
    base: int = 0

    def pack(self) -> bytes:
        return pack_codes(np.array(self.codes, dtype=np.uint8)).tobytes()

    @classmethod
    def unpack(cls, data: bytes, n_segments: int) -> "Descriptor":
        codes = unpack_codes(np.frombuffer(data, dtype=np.uint8), n_segments)
        return cls(tuple(int(c) for c in codes))

    def is_empty(self) -> bool:
        return not any(self.codes)


def segment_of(z: np.ndarray, segments: SegmentConfig) -> np.ndarray:
    s = np.floor((np.asarray(z) - segments.z_low) / segments.segment_height)
    return np.clip(s.astype(np.int64), 0, segments.n_segments - 1)


def grid_base(segments: SegmentConfig) -> int:
    """World segment index nearest to the window's lower bound."""
    return int(math.floor(segments.z_low / segments.segment_height + 0.5))


def keyframe_window(segments: SegmentConfig, sensor_z: float) -> SegmentConfig:
    """World window of a frame taken with the sensor at altitude ``sensor_z``.

    ``segments`` is sensor-relative; the moved window is snapped onto the
    world segment grid so every frame shares segment boundaries.
    """
    h = segments.segment_height
    base = grid_base(segments.shifted(float(sensor_z)))
    return SegmentConfig(
        z_low=base * h,
        z_high=(base + segments.n_segments) * h,
        n_segments=segments.n_segments,
    )


def shift_rows(values: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Move row r up by ``shift[r]`` >= 0 columns; vacated columns are 0."""
    v = np.asarray(values)
    if len(v) == 0:
        return v.copy()
    n = v.shape[1]
    src = np.arange(n)[None, :] - np.asarray(shift, dtype=np.int64)[:, None]
    out = v[np.arange(len(v))[:, None], np.clip(src, 0, n - 1)]
    return np.where(src >= 0, out, 0).astype(v.dtype)


@dataclass(frozen=True)
class PGMFrame:
    """Hit and miss event counts of one frame, per (cell, segment).

    ``keys`` are sorted packed cell keys; row r of ``hits`` / ``misses``
    belongs to ``keys[r]``. A voxel hit in the frame carries no misses.
    Column s is world segment ``base + s``.
    """

    resolution: float
    segments: SegmentConfig
    origin: np.ndarray
    keys: np.ndarray
    hits: np.ndarray
    misses: np.ndarray
    base: int = 0

    def __len__(self) -> int:
        return len(self.keys)

    @classmethod
    def empty(
        cls, resolution: float, segments: SegmentConfig, origin=None
    ) -> "PGMFrame":
        n = segments.n_segments
        o = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
        return cls(
            resolution,
            segments,
            o,
            np.zeros(0, dtype=np.int64),
            np.zeros((0, n), dtype=np.uint16),
            np.zeros((0, n), dtype=np.uint16),
            grid_base(segments),
        )

    def cells(self) -> Tuple[np.ndarray, np.ndarray]:
        return unpack_keys(self.keys)

    def restrict(self, keys: np.ndarray) -> "PGMFrame":
        mask = np.isin(self.keys, keys)
        return PGMFrame(
            self.resolution,
            self.segments,
            self.origin,
            self.keys[mask],
            self.hits[mask],
            self.misses[mask],
            self.base,
        )

    def hit_voxels(self) -> List[Tuple[int, int, int]]:
        ix, iy = self.cells()
        rows, segs = np.nonzero(self.hits)
        return [(int(ix[r]), int(iy[r]), int(s)) for r, s in zip(rows, segs)]

    def to_codes(self, lut: np.ndarray) -> np.ndarray:
        """Codes of this frame alone, starting from never-observed."""
        codes = np.zeros(self.hits.shape, dtype=np.uint8)
        return apply_events(codes, self.misses, self.hits, lut)


def _expand_ranges(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Entry index and value for every integer in [lo, hi] of each entry."""
    count = np.maximum(hi - lo + 1, 0)
    entry = np.repeat(np.arange(len(lo)), count)
    offset = np.arange(int(count.sum())) - np.repeat(np.cumsum(count) - count, count)
    return entry, lo[entry] + offset


def _unique_voxels(
    keys: np.ndarray, segs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(keys) == 0:
        return keys, segs, np.zeros(0, dtype=np.int64)
    stacked = np.column_stack([keys, segs])
    uniq, counts = np.unique(stacked, axis=0, return_counts=True)
    return uniq[:, 0], uniq[:, 1], counts


def integrate_frame_obstacles(
    points: np.ndarray,
    origin: np.ndarray,
    segments: SegmentConfig,
    resolution: float,
) -> PGMFrame:
    """Trace every obstacle point from the sensor origin (world frame).

    ``segments`` is the frame's world window (see ``keyframe_window``). The
    segment holding the point gets a hit; every other segment the ray crosses
    gets a miss. Points outside [z_low, z_high) are ignored.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    inside = (pts[:, 2] >= segments.z_low) & (pts[:, 2] < segments.z_high)
    pts = pts[inside]
    if len(pts) == 0:
        return PGMFrame.empty(resolution, segments, o)

    walk = traverse(np.repeat(o[None, :2], len(pts), axis=0), pts[:, :2], resolution)
    dz = pts[walk.ray, 2] - o[2]
    z_a = o[2] + walk.t_enter * dz
    z_b = o[2] + walk.t_exit * dz
    z_lo = np.minimum(z_a, z_b)
    z_hi = np.maximum(z_a, z_b)
    in_range = (z_hi >= segments.z_low) & (z_lo < segments.z_high)
    s_lo = segment_of(np.maximum(z_lo, segments.z_low), segments)
    s_hi = segment_of(np.minimum(z_hi, segments.z_high), segments)
    s_lo = np.where(in_range, s_lo, 1)
    s_hi = np.where(in_range, s_hi, 0)

    cell_keys = pack_keys(walk.ix, walk.iy)
    entry, seg = _expand_ranges(s_lo, s_hi)
    crossed_keys = cell_keys[entry]

    last = np.flatnonzero(walk.last)
    hit_keys = cell_keys[last]
    hit_segs = segment_of(pts[walk.ray[last], 2], segments)

    h_keys, h_segs, h_counts = _unique_voxels(hit_keys, hit_segs)
    m_keys, m_segs, m_counts = _unique_voxels(crossed_keys, seg)

    # A voxel hit in this frame takes no misses from it.
    if len(m_keys):
        stacked = np.vstack(
            [np.column_stack([h_keys, h_segs]), np.column_stack([m_keys, m_segs])]
        )
        _, inverse = np.unique(stacked, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        keep = ~np.isin(inverse[len(h_keys) :], inverse[: len(h_keys)])
        m_keys, m_segs, m_counts = m_keys[keep], m_segs[keep], m_counts[keep]

    keys = np.union1d(h_keys, m_keys)
    n = segments.n_segments
    hits = np.zeros((len(keys), n), dtype=np.uint16)
    misses = np.zeros((len(keys), n), dtype=np.uint16)
    hits[np.searchsorted(keys, h_keys), h_segs] = np.minimum(h_counts, 65535)
    misses[np.searchsorted(keys, m_keys), m_segs] = np.minimum(m_counts, 65535)
    return PGMFrame(resolution, segments, o, keys, hits, misses, grid_base(segments))


def apply_events(
    codes: np.ndarray, misses: np.ndarray, hits: np.ndarray, lut: np.ndarray
) -> np.ndarray:
    """Advance codes by a frame's misses, then its hits."""
    out = np.array(codes, dtype=np.uint8, copy=True)
    for event, counts in ((MISS, misses), (HIT, hits)):
        steps = min(int(counts.max(initial=0)), MAX_CODE)
        for k in range(steps):
            mask = counts > k
            out[mask] = lut[out[mask], event]
    return out


class DescriptorGrid:
    """Sparse cell -> packed descriptor store with a base segment per cell.

    Rows are kept dense in one uint8 array; removal swaps the last row in.
    Cells created without an explicit base start at ``grid_base(segments)``.
    """

    def __init__(self, segments: SegmentConfig, resolution: float):
        self.segments = segments
        self.resolution = resolution
        self.n_segments = segments.n_segments
        self.n_bytes = segments.descriptor_bytes
        self.default_base = grid_base(segments)
        self._index: Dict[int, int] = {}
        self._keys = np.zeros(0, dtype=np.int64)
        self._base = np.zeros(0, dtype=np.int64)
        self._data = np.zeros((0, self.n_bytes), dtype=np.uint8)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __contains__(self, key) -> bool:
        return int(self._key_of(key)) in self._index

    @staticmethod
    def _key_of(key) -> int:
        if isinstance(key, tuple):
            return int(pack_keys(np.int64(key[0]), np.int64(key[1])))
        return int(key)

    def _grow(self, needed: int) -> None:
        capacity = len(self._keys)
        if needed <= capacity:
            return
        new_cap = max(needed, 2 * capacity, 64)
        keys = np.zeros(new_cap, dtype=np.int64)
        base = np.zeros(new_cap, dtype=np.int64)
        data = np.zeros((new_cap, self.n_bytes), dtype=np.uint8)
        keys[: self._size] = self._keys[: self._size]
        base[: self._size] = self._base[: self._size]
        data[: self._size] = self._data[: self._size]
        self._keys, self._base, self._data = keys, base, data

    def rows_for(
        self, keys: Iterable[int], create: bool = True, base: Optional[int] = None
    ) -> np.ndarray:
        """Row of every key; missing cells are created at ``base`` or given -1."""
        start = self.default_base if base is None else int(base)
        rows = []
        for key in keys:
            k = int(key)
            row = self._index.get(k)
            if row is None:
                if not create:
                    rows.append(-1)
                    continue
                self._grow(self._size + 1)
                row = self._size
                self._keys[row] = k
                self._base[row] = start
                self._data[row] = 0
                self._index[k] = row
                self._size += 1
            rows.append(row)
        return np.asarray(rows, dtype=np.int64)

    def keys(self) -> np.ndarray:
        return self._keys[: self._size].copy()

    def bases(self) -> np.ndarray:
        return self._base[: self._size].copy()

    def packed(self) -> np.ndarray:
        return self._data[: self._size].copy()

    def codes(self, keys: Optional[np.ndarray] = None) -> np.ndarray:
        """Unpacked codes for ``keys`` (all cells when None); absent rows are 0."""
        if keys is None:
            return unpack_codes(self._data[: self._size], self.n_segments)
        rows = self.rows_for(keys, create=False)
        out = np.zeros((len(rows), self.n_segments), dtype=np.uint8)
        present = rows >= 0
        out[present] = unpack_codes(self._data[rows[present]], self.n_segments)
        return out

    def get(self, ix: int, iy: int) -> Optional[Descriptor]:
        row = self._index.get(self._key_of((ix, iy)))
        if row is None:
            return None
        codes = Descriptor.unpack(self._data[row].tobytes(), self.n_segments).codes
        return Descriptor(codes, int(self._base[row]))

    def set_codes(
        self, keys: np.ndarray, codes: np.ndarray, base: Optional[int] = None
    ) -> None:
        rows = self.rows_for(keys, base=base)
        if base is not None:
            self._base[rows] = int(base)
        self._data[rows] = pack_codes(codes)

    def set_packed(self, key: int, data: bytes, base: Optional[int] = None) -> None:
        row = self.rows_for([key], base=base)[0]
        if base is not None:
            self._base[row] = int(base)
        self._data[row] = np.frombuffer(data, dtype=np.uint8)

    def reanchor(self, rows: np.ndarray, base: int) -> None:
        """Lower the base of ``rows`` to ``base``; codes pushed past the top drop."""
        rows = np.asarray(rows, dtype=np.int64)
        shift = self._base[rows] - int(base)
        lower = shift > 0
        if not lower.any():
            return
        moved = rows[lower]
        codes = unpack_codes(self._data[moved], self.n_segments)
        self._data[moved] = pack_codes(shift_rows(codes, shift[lower]))
        self._base[moved] = int(base)

    def remove(self, key: int) -> None:
        row = self._index.pop(int(key), None)
        if row is None:
            return
        last = self._size - 1
        if row != last:
            moved = int(self._keys[last])
            self._keys[row] = moved
            self._base[row] = self._base[last]
            self._data[row] = self._data[last]
            self._index[moved] = row
        self._data[last] = 0
        self._size = last

    def prune(self, keys: Optional[Iterable[int]] = None) -> int:
        """Drop all-zero descriptors among ``keys`` (all cells when None)."""
        if keys is None:
            candidates = list(self._index.keys())
        else:
            candidates = [int(k) for k in keys]
        removed = 0
        for k in candidates:
            row = self._index.get(k)
            if row is not None and not self._data[row].any():
                self.remove(k)
                removed += 1
        return removed

    def copy(self) -> "DescriptorGrid":
        other = DescriptorGrid(self.segments, self.resolution)
        other._index = dict(self._index)
        other._keys = self._keys.copy()
        other._base = self._base.copy()
        other._data = self._data.copy()
        other._size = self._size
        return other

    def as_dict(self) -> Dict[Tuple[int, int], Tuple[int, ...]]:
        ix, iy = unpack_keys(self.keys())
        codes = self.codes()
        return {
            (int(a), int(b)): tuple(int(c) for c in row)
            for a, b, row in zip(ix, iy, codes)
        }

    def base_dict(self) -> Dict[Tuple[int, int], int]:
        ix, iy = unpack_keys(self.keys())
        return {(int(a), int(b)): int(c) for a, b, c in zip(ix, iy, self.bases())}

    @property
    def nbytes(self) -> int:
        return self._size * self.n_bytes


def fuse_into_atlas(grid: DescriptorGrid, pgm: PGMFrame, lut: np.ndarray) -> int:
    """Apply a frame's events to the global grid. Returns the cells updated.

    A cell whose base lies above the frame's window moves down to it first;
    frame segments above a cell's window are dropped.
    """
    if pgm.segments.n_segments != grid.n_segments or not math.isclose(
        pgm.resolution, grid.resolution
    ):
        raise ConfigurationError(
            "Frame and atlas disagree on segments or resolution: "
            f"{pgm.segments.n_segments}@{pgm.resolution} vs "
            f"{grid.n_segments}@{grid.resolution}"
        )
    if len(pgm) == 0:
        return 0
    rows = grid.rows_for(pgm.keys, base=pgm.base)
    grid.reanchor(rows, pgm.base)
    offsets = pgm.base - grid._base[rows]
    misses, hits = pgm.misses, pgm.hits
    if offsets.any():
        misses, hits = shift_rows(misses, offsets), shift_rows(hits, offsets)
    current = unpack_codes(grid._data[rows], grid.n_segments)
    grid._data[rows] = pack_codes(apply_events(current, misses, hits, lut))
    return len(rows)


def decode_cloud(
    grid: DescriptorGrid,
    occupied_threshold: int = 9,
    center: Optional[np.ndarray] = None,
    radius: Optional[float] = None,
) -> np.ndarray:
    """One point per occupied segment: cell center in x, y and segment middle in z."""
    if len(grid) == 0:
        return np.zeros((0, 3))
    ix, iy = unpack_keys(grid.keys())
    xy = (np.column_stack([ix, iy]) + 0.5) * grid.resolution
    codes = grid.codes()
    bases = grid.bases()
    if center is not None and radius is not None:
        c = np.asarray(center, dtype=np.float64).reshape(-1)[:2]
        near = np.hypot(xy[:, 0] - c[0], xy[:, 1] - c[1]) <= radius
        xy, codes, bases = xy[near], codes[near], bases[near]
    rows, segs = np.nonzero(codes >= occupied_threshold)
    seg = grid.segments
    # Rows at the default base keep the grid's own z_low.
    offset = bases[rows] - grid.default_base + segs
    z = seg.z_low + (offset + 0.5) * seg.segment_height
    return np.column_stack([xy[rows], z])


def encode_decode(
    points: np.ndarray,
    origin: np.ndarray,
    segments: SegmentConfig,
    resolution: float,
    lut: np.ndarray,
    occupied_threshold: int = 9,
) -> np.ndarray:
    """Round a world-frame obstacle cloud through a single-frame grid."""
    pgm = integrate_frame_obstacles(points, origin, segments, resolution)
    grid = DescriptorGrid(segments, resolution)
    fuse_into_atlas(grid, pgm, lut)
    return decode_cloud(grid, occupied_threshold)
