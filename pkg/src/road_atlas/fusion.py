"""Multi-layer surface fusion of keyframe local maps into the global atlas.

Each cell keeps the log of ground observations it received. Runs of
consecutive keyframes that saw the cell form visibility segments; the
closest observation of each segment is its representative. Representatives
are grouped into layers by their overlap rate, every observation is routed to
a layer by time and altitude, and each layer fuses its observations in time
order.
"""

import logging
import math
import threading
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from .core import Gaussian, Pose, pack_keys, transform_points, unpack_keys
from .errors import ConfigurationError, UnknownKeyframeError
from .local_ogm import LocalOGM, relocate_local_ogm
from .models import (
    CodecConfig,
    FusionConfig,
    IntegrationSummary,
    OGMConfig,
    SegmentConfig,
)
from .vertical_codec import (
    DescriptorGrid,
    PGMFrame,
    fuse_into_atlas,
    integrate_frame_obstacles,
    keyframe_window,
    lut_from_config,
)

logger = logging.getLogger(__name__)

CellKey = Tuple[int, int]

_SCAN_POINTS = 1024


class Observation(NamedTuple):
    """One keyframe's altitude estimate of one cell."""

    seq: int
    time: float
    frame_id: int
    mu: float
    sigma: float
    distance: float
    occupancy: float


@dataclass(frozen=True)
class SurfaceLayer:
    """Fused traversable surface at one cell. ``occupancy`` is log-odds."""

    mu: float
    sigma: float
    n_obs: int = 1
    label: int = 1
    occupancy: float = 0.0

    @property
    def gaussian(self) -> Gaussian:
        return Gaussian(self.mu, self.sigma)

    @property
    def is_free(self) -> bool:
        return self.occupancy < 0.0


@dataclass(frozen=True)
class Representative:
    time: float
    mu: float
    sigma: float
    distance: float


def _check_gaussian(mu: float, sigma: float) -> None:
    if not (math.isfinite(mu) and math.isfinite(sigma)):
        raise ValueError(f"Gaussian parameters must be finite: ({mu}, {sigma})")
    if sigma <= 0.0:
        raise ValueError(f"Gaussian sigma must be positive: {sigma}")


def _mixture(x, mu1: float, s1: float, mu2: float, s2: float):
    return 0.5 * (norm.pdf(x, mu1, s1) + norm.pdf(x, mu2, s2))


def overlap_rate(g1, g2) -> float:
    """Saddle density over the smaller mode density of the equal-weight mixture.

    A unimodal mixture has no saddle and rates 1.
    """
    mu1, s1, mu2, s2 = float(g1.mu), float(g1.sigma), float(g2.mu), float(g2.sigma)
    _check_gaussian(mu1, s1)
    _check_gaussian(mu2, s2)
    if mu1 > mu2:
        mu1, s1, mu2, s2 = mu2, s2, mu1, s1
    d = mu2 - mu1
    # Sufficient condition for a unimodal two-component mixture.
    if d * d < 27.0 * s1 * s1 * s2 * s2 / (4.0 * (s1 * s1 + s2 * s2)):
        return 1.0

    x = np.linspace(mu1, mu2, _SCAN_POINTS)
    f = _mixture(x, mu1, s1, mu2, s2)
    inner = f[1:-1]
    minima = np.flatnonzero((inner < f[:-2]) & (inner <= f[2:])) + 1
    if len(minima) == 0:
        return 1.0
    i = int(minima[np.argmin(f[minima])])

    def density(v: float) -> float:
        return float(_mixture(v, mu1, s1, mu2, s2))

    res = minimize_scalar(
        density, bounds=(x[i - 1], x[i + 1]), method="bounded", options={"xatol": 1e-12}
    )
    saddle = min(float(res.fun), float(f[i]))

    def peak(lo: int, hi: int) -> float:
        j = lo + int(np.argmax(f[lo : hi + 1]))
        a, b = x[max(j - 1, lo)], x[min(j + 1, hi)]
        if b <= a:
            return float(f[j])
        r = minimize_scalar(
            lambda v: -density(v),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-12},
        )
        return max(float(f[j]), -float(r.fun))

    smaller = min(peak(0, i), peak(i, len(x) - 1))
    if smaller <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, saddle / smaller)))


def assign_layer_labels(
    reps: Sequence, epsilon: float = 0.6, gap_prefilter: Optional[float] = None
) -> List[int]:
    """Chain labels over representatives sorted by altitude.

    The lowest gets label 1; each next keeps the previous label when its
    overlap rate with the previous representative exceeds ``epsilon``.
    """
    if not reps:
        return []
    labels = [1]
    for prev, cur in zip(reps[:-1], reps[1:]):
        same = overlap_rate(prev, cur) > epsilon
        if gap_prefilter is not None and abs(cur.mu - prev.mu) > gap_prefilter:
            same = False
        labels.append(labels[-1] if same else labels[-1] + 1)
    return labels


def assign_observation_label(
    t: float,
    mu_t: float,
    rep_times: Sequence[float],
    rep_mus: Sequence[float],
    rep_labels: Sequence[int],
) -> int:
    """Label of an observation from the representatives around it in time.

    Between two representatives the one with the closer altitude wins; an
    exact tie goes to the earlier one.
    """
    if not rep_times:
        raise ValueError("At least one representative is required")
    if t < rep_times[0]:
        return rep_labels[0]
    if t >= rep_times[-1]:
        return rep_labels[-1]
    j = int(np.searchsorted(np.asarray(rep_times), t, side="right")) - 1
    if abs(rep_mus[j + 1] - mu_t) < abs(rep_mus[j] - mu_t):
        return rep_labels[j + 1]
    return rep_labels[j]


def fuse_layer(
    layer: SurfaceLayer,
    obs: Gaussian,
    occupancy: float = 0.0,
    l_max: float = math.inf,
) -> SurfaceLayer:
    """Sequential product-of-Gaussians update of a layer."""
    _check_gaussian(obs.mu, obs.sigma)
    v_old = layer.sigma * layer.sigma
    v_obs = obs.sigma * obs.sigma
    total = v_old + v_obs
    mu = (v_obs * layer.mu + v_old * obs.mu) / total
    sigma = math.sqrt(v_old * v_obs / total)
    occ = min(l_max, max(-l_max, layer.occupancy + occupancy))
    return SurfaceLayer(mu, sigma, layer.n_obs + 1, layer.label, occ)


def fuse_batch(gaussians: Iterable[Gaussian]) -> Gaussian:
    """Closed-form precision-weighted fusion of many observations."""
    g = list(gaussians)
    precision = np.array([1.0 / (o.sigma * o.sigma) for o in g])
    mus = np.array([o.mu for o in g])
    total = precision.sum()
    mu = float((precision * mus).sum() / total)
    return Gaussian(mu, float(math.sqrt(1.0 / total)))


def _merge_layers(a: SurfaceLayer, b: SurfaceLayer, l_max: float) -> SurfaceLayer:
    pa = 1.0 / (a.sigma * a.sigma)
    pb = 1.0 / (b.sigma * b.sigma)
    mu = (pa * a.mu + pb * b.mu) / (pa + pb)
    occ = min(l_max, max(-l_max, a.occupancy + b.occupancy))
    return SurfaceLayer(mu, math.sqrt(1.0 / (pa + pb)), a.n_obs + b.n_obs, a.label, occ)


class CellColumn:
    """Layers and observation log of one 2D cell."""

    __slots__ = ("ix", "iy", "layers", "observations")

    def __init__(self, ix: int, iy: int):
        self.ix = ix
        self.iy = iy
        self.layers: Tuple[SurfaceLayer, ...] = ()
        self.observations: List[Observation] = []

    def segments(self) -> List[List[Observation]]:
        """Maximal runs of consecutive keyframe sequence numbers."""
        runs: List[List[Observation]] = []
        for obs in self.observations:
            if runs and obs.seq == runs[-1][-1].seq + 1:
                runs[-1].append(obs)
            else:
                runs.append([obs])
        return runs

    def representatives(self) -> List[Representative]:
        reps = []
        for run in self.segments():
            best = min(run, key=lambda o: (o.distance, o.seq))
            reps.append(Representative(best.seq, best.mu, best.sigma, best.distance))
        return reps

    def open_segment(self, current_seq: int) -> Optional[Representative]:
        """Representative of the segment still being observed, if any."""
        runs = self.segments()
        if not runs or runs[-1][-1].seq != current_seq:
            return None
        best = min(runs[-1], key=lambda o: (o.distance, o.seq))
        return Representative(best.seq, best.mu, best.sigma, best.distance)

    def closed_representatives(self, current_seq: int) -> List[Representative]:
        reps = self.representatives()
        if self.open_segment(current_seq) is not None:
            reps = reps[:-1]
        return reps

    def is_contiguous(self) -> bool:
        obs = self.observations
        return not obs or obs[-1].seq - obs[0].seq + 1 == len(obs)

    def snapshot(self) -> Tuple[Tuple[float, float, int, int, float], ...]:
        return tuple(
            (s.mu, s.sigma, s.n_obs, s.label, s.occupancy) for s in self.layers
        )


def register_observation(column: CellColumn, obs: Observation, cap: int = 512) -> bool:
    """Append an observation to the cell log.

    Returns True when the log was trimmed (the farthest entry dropped).
    """
    if column.observations and obs.seq <= column.observations[-1].seq:
        seqs = [o.seq for o in column.observations]
        at = int(np.searchsorted(seqs, obs.seq))
        column.observations.insert(at, obs)
    else:
        column.observations.append(obs)
    if len(column.observations) > cap:
        obs = column.observations
        far = max(range(len(obs)), key=lambda k: (obs[k].distance, -obs[k].seq))
        del column.observations[far]
        return True
    return False


def rebuild_column(
    column: CellColumn,
    epsilon: float = 0.6,
    gap_prefilter: Optional[float] = None,
    l_max: float = math.inf,
) -> int:
    """Recompute a column's layers from its observation log.

    Returns the number of layers removed by the final merge pass.
    """
    if not column.observations:
        column.layers = ()
        return 0
    reps = column.representatives()
    by_mu = sorted(range(len(reps)), key=lambda k: (reps[k].mu, reps[k].time))
    labels_sorted = assign_layer_labels(
        [reps[k] for k in by_mu], epsilon, gap_prefilter
    )
    rep_labels = [0] * len(reps)
    for k, label in zip(by_mu, labels_sorted):
        rep_labels[k] = label
    rep_times = [r.time for r in reps]
    rep_mus = [r.mu for r in reps]

    fused: Dict[int, SurfaceLayer] = {}
    for obs in column.observations:
        label = assign_observation_label(
            obs.seq, obs.mu, rep_times, rep_mus, rep_labels
        )
        layer = fused.get(label)
        if layer is None:
            occ = min(l_max, max(-l_max, obs.occupancy))
            fused[label] = SurfaceLayer(obs.mu, obs.sigma, 1, label, occ)
        else:
            fused[label] = fuse_layer(
                layer, Gaussian(obs.mu, obs.sigma), obs.occupancy, l_max
            )

    layers = sorted(fused.values(), key=lambda s: s.mu)
    merged = 0
    k = 0
    while k + 1 < len(layers):
        a, b = layers[k], layers[k + 1]
        close = overlap_rate(a, b) > epsilon
        if gap_prefilter is not None and b.mu - a.mu > gap_prefilter:
            close = False
        if close:
            layers[k : k + 2] = [_merge_layers(a, b, l_max)]
            merged += 1
            k = max(k - 1, 0)
        else:
            k += 1
    column.layers = tuple(
        SurfaceLayer(s.mu, s.sigma, s.n_obs, n + 1, s.occupancy)
        for n, s in enumerate(layers)
    )
    return merged


@dataclass
class KeyframeRecord:
    """What one keyframe contributed, kept for re-fusion."""

    frame_id: int
    seq: int
    time: float
    pose: Pose
    local: LocalOGM
    cells: np.ndarray
    pgm: PGMFrame


@dataclass
class _ColumnUpdate:
    created: int = 0
    merged: int = 0


class Atlas:
    """Sparse global map: surface columns, obstacle descriptors, keyframes.

    ``segments`` are relative to the sensor; each keyframe encodes its obstacles
    in that window moved to its own altitude (``keyframe_window``) and
    descriptors keep per-cell world bases. Cells are ``floor(xy / resolution)``.
    """

    def __init__(
        self,
        resolution: float,
        segments: SegmentConfig,
        fusion: Optional[FusionConfig] = None,
        codec: Optional[CodecConfig] = None,
        l_max: Optional[float] = None,
        origin: Tuple[float, float] = (0.0, 0.0),
    ):
        if not resolution > 0:
            raise ConfigurationError(f"Atlas resolution must be positive: {resolution}")
        self.resolution = float(resolution)
        self.segments = segments
        self.fusion = fusion if fusion is not None else FusionConfig()
        self.codec = codec if codec is not None else CodecConfig()
        self.l_max = l_max if l_max is not None else OGMConfig().l_max
        self.origin = origin
        self.lut = lut_from_config(self.codec)
        self.columns: Dict[CellKey, CellColumn] = {}
        self.descriptors = DescriptorGrid(segments, self.resolution)
        self.keyframes: Dict[int, KeyframeRecord] = {}
        self._next_seq = 0
        self._lock = threading.RLock()

    @property
    def current_seq(self) -> int:
        return self._next_seq - 1

    def column(self, ix: int, iy: int) -> Optional[CellColumn]:
        return self.columns.get((ix, iy))

    def layers_at(self, ix: int, iy: int) -> Tuple[SurfaceLayer, ...]:
        col = self.columns.get((ix, iy))
        return () if col is None else col.layers

    def surface_snapshot(self) -> Dict[CellKey, tuple]:
        return {key: col.snapshot() for key, col in self.columns.items() if col.layers}

    def descriptor_snapshot(self) -> Dict[CellKey, Tuple[int, Tuple[int, ...]]]:
        """(base, codes) per descriptor cell."""
        bases = self.descriptors.base_dict()
        codes = self.descriptors.as_dict()
        return {key: (bases[key], value) for key, value in codes.items()}

    def cell_center(self, ix: int, iy: int) -> Tuple[float, float]:
        return (ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution

    def cell_of(self, x: float, y: float) -> CellKey:
        res = self.resolution
        return int(math.floor(x / res)), int(math.floor(y / res))

    def _observations(
        self, local: LocalOGM, seq: int, time: float
    ) -> List[Tuple[CellKey, Observation]]:
        ix, iy, mu, sigma, distance, occ = local.height_cells()
        return [
            (
                (int(a), int(b)),
                Observation(
                    seq, time, local.frame_id, float(m), float(s), float(d), float(o)
                ),
            )
            for a, b, m, s, d, o in zip(ix, iy, mu, sigma, distance, occ)
        ]

    def _update_column(self, column: CellColumn, obs: Observation) -> _ColumnUpdate:
        cfg = self.fusion
        before = len(column.layers)
        fast = (
            len(column.layers) == 1
            and column.observations
            and obs.seq == column.observations[-1].seq + 1
            and column.is_contiguous()
        )
        trimmed = register_observation(column, obs, cfg.max_observations)
        if before == 0 and len(column.observations) == 1:
            occ = min(self.l_max, max(-self.l_max, obs.occupancy))
            column.layers = (SurfaceLayer(obs.mu, obs.sigma, 1, 1, occ),)
            return _ColumnUpdate(created=1)
        if fast and not trimmed:
            column.layers = (
                fuse_layer(
                    column.layers[0],
                    Gaussian(obs.mu, obs.sigma),
                    obs.occupancy,
                    self.l_max,
                ),
            )
            return _ColumnUpdate()
        merged = rebuild_column(column, cfg.epsilon, cfg.gap_prefilter, self.l_max)
        after = len(column.layers)
        return _ColumnUpdate(max(0, after - before), merged + max(0, before - after))

    def _apply(self, items: List[Tuple[CellKey, Observation]]) -> _ColumnUpdate:
        with self._lock:
            for key, _ in items:
                if key not in self.columns:
                    self.columns[key] = CellColumn(*key)

        def work(part: List[Tuple[CellKey, Observation]]) -> _ColumnUpdate:
            total = _ColumnUpdate()
            for key, obs in part:
                u = self._update_column(self.columns[key], obs)
                total.created += u.created
                total.merged += u.merged
            return total

        threads = self.fusion.threads
        if threads <= 1 or len(items) < 2 * threads:
            return work(items)
        parts: List[List[Tuple[CellKey, Observation]]] = [[] for _ in range(threads)]
        for item in items:
            parts[hash(item[0]) % threads].append(item)
        summary = _ColumnUpdate()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for u in pool.map(work, parts):
                summary.created += u.created
                summary.merged += u.merged
        return summary

    def _encode(self, local: LocalOGM, pose: Pose) -> PGMFrame:
        world = transform_points(local.obstacle_points, pose)
        window = keyframe_window(self.segments, pose.translation[2])
        return integrate_frame_obstacles(
            world, pose.translation, window, self.resolution
        )


def integrate_keyframe(
    atlas: Atlas,
    local: LocalOGM,
    pose: Optional[Pose] = None,
    time: Optional[float] = None,
) -> IntegrationSummary:
    """Fuse one keyframe's local map into the atlas."""
    started = _time.perf_counter()
    if not math.isclose(local.resolution, atlas.resolution):
        raise ConfigurationError(
            f"Local map resolution {local.resolution} "
            f"differs from atlas {atlas.resolution}"
        )
    if pose is not None and not pose.same_as(local.pose):
        local = relocate_local_ogm(local, pose)
    pose = local.pose
    with atlas._lock:
        if local.frame_id in atlas.keyframes:
            raise ValueError(f"Frame {local.frame_id} is already integrated")
        seq = atlas._next_seq
        atlas._next_seq += 1

    t = float(local.timestamp if time is None else time)
    items = atlas._observations(local, seq, t)
    update = atlas._apply(items)

    pgm = atlas._encode(local, pose)
    descriptor_cells = fuse_into_atlas(atlas.descriptors, pgm, atlas.lut)

    cells = pack_keys(
        np.array([k[0] for k, _ in items], dtype=np.int64),
        np.array([k[1] for k, _ in items], dtype=np.int64),
    )
    with atlas._lock:
        atlas.keyframes[local.frame_id] = KeyframeRecord(
            local.frame_id, seq, t, pose, local, cells, pgm
        )

    summary = IntegrationSummary(
        frame_id=local.frame_id,
        cells_touched=len(items),
        layers_created=update.created,
        layers_merged=update.merged,
        descriptor_cells=descriptor_cells,
        elapsed_s=_time.perf_counter() - started,
    )
    logger.info(summary.log_line())
    return summary


def _replace_surface(
    atlas: Atlas, record: KeyframeRecord, local: LocalOGM
) -> np.ndarray:
    """Swap one keyframe's observations; returns the packed keys of touched cells."""
    cfg = atlas.fusion
    old_ix, old_iy = unpack_keys(record.cells)
    affected = set(zip(old_ix.tolist(), old_iy.tolist()))
    for key in affected:
        col = atlas.columns.get(key)
        if col is not None:
            col.observations = [o for o in col.observations if o.seq != record.seq]

    items = atlas._observations(local, record.seq, record.time)
    for key, obs in items:
        col = atlas.columns.get(key)
        if col is None:
            col = atlas.columns[key] = CellColumn(*key)
        register_observation(col, obs, cfg.max_observations)
        affected.add(key)

    for key in affected:
        col = atlas.columns[key]
        if not col.observations:
            del atlas.columns[key]
        else:
            rebuild_column(col, cfg.epsilon, cfg.gap_prefilter, atlas.l_max)

    return pack_keys(
        np.array([k[0] for k, _ in items], dtype=np.int64),
        np.array([k[1] for k, _ in items], dtype=np.int64),
    )


def _replay_descriptors(atlas: Atlas, reset_keys: np.ndarray) -> None:
    """Recompute the descriptors of ``reset_keys`` from every keyframe, in order."""
    if len(reset_keys) == 0:
        return
    for key in reset_keys.tolist():
        atlas.descriptors.remove(key)
    for record in sorted(atlas.keyframes.values(), key=lambda r: r.seq):
        part = record.pgm.restrict(reset_keys)
        if len(part):
            fuse_into_atlas(atlas.descriptors, part, atlas.lut)
    atlas.descriptors.prune(reset_keys.tolist())


def reintegrate_poses(atlas: Atlas, updates: Dict[int, Pose]) -> int:
    """Re-fuse a batch of corrected keyframe poses. Returns frames changed."""
    with atlas._lock:
        for frame_id in updates:
            if frame_id not in atlas.keyframes:
                raise UnknownKeyframeError(f"Unknown keyframe: {frame_id}")
        reset: List[np.ndarray] = []
        changed = 0
        for frame_id, pose in updates.items():
            record = atlas.keyframes[frame_id]
            if record.pose.same_as(pose):
                continue
            local = relocate_local_ogm(record.local, pose)
            record.cells = _replace_surface(atlas, record, local)
            pgm = atlas._encode(local, pose)
            reset.extend([record.pgm.keys, pgm.keys])
            record.pose, record.local, record.pgm = pose, local, pgm
            changed += 1
        if reset:
            _replay_descriptors(atlas, np.unique(np.concatenate(reset)))
    logger.info("reintegrate frames=%d changed=%d", len(updates), changed)
    return changed


def reintegrate_on_pose_update(atlas: Atlas, frame_id: int, new_pose: Pose) -> None:
    """Move one keyframe; cells outside its old and new footprints are untouched."""
    reintegrate_poses(atlas, {frame_id: new_pose})
