"""Vectorized 2D grid traversal of many line segments at once."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CellTraversal:
    """Cells crossed by a batch of segments, ordered by ray then by distance.

    For entry k, ``ray[k]`` is the segment, ``(ix[k], iy[k])`` the cell and
    ``[t_enter[k], t_exit[k]]`` the parametric interval spent inside it.
    ``last[k]`` marks the cell that holds the segment's end point.
    """

    ray: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    t_enter: np.ndarray
    t_exit: np.ndarray
    last: np.ndarray

    def __len__(self) -> int:
        return len(self.ray)


def _axis_events(a: np.ndarray, b: np.ndarray):
    d = b - a
    pos = d > 0
    neg = d < 0
    first = np.where(neg, np.ceil(a) - 1, np.floor(a)).astype(np.int64)
    last = np.where(pos, np.ceil(b) - 1, np.where(neg, np.floor(b), first))
    last = last.astype(np.int64)
    count = np.abs(last - first)
    count[~(pos | neg)] = 0
    step = np.where(neg, -1, 1)
    return first, count, step, d


def traverse(
    starts: np.ndarray, ends: np.ndarray, resolution: float
) -> CellTraversal:
    """Every cell each segment [start, end) crosses with positive length.

    Cells are ``floor(p / resolution)``. A segment leaving a cell corner is
    attributed to the cell it moves into, so a ray cast from the origin along
    +x over 2 m at 0.1 m visits exactly 20 cells.
    """
    p0 = np.asarray(starts, dtype=np.float64).reshape(-1, 2) / resolution
    p1 = np.asarray(ends, dtype=np.float64).reshape(-1, 2) / resolution
    n = len(p0)
    if n == 0:
        empty_i = np.zeros(0, dtype=np.int64)
        empty_f = np.zeros(0)
        return CellTraversal(
            empty_i, empty_i, empty_i, empty_f, empty_f, np.zeros(0, bool)
        )

    rays = [np.arange(n)]
    ts = [np.zeros(n)]
    axes = [np.full(n, -1)]
    dx_steps = []
    dy_steps = []
    first_x, count_x, step_x, d_x = _axis_events(p0[:, 0], p1[:, 0])
    first_y, count_y, step_y, d_y = _axis_events(p0[:, 1], p1[:, 1])
    dx_steps.append(first_x)
    dy_steps.append(first_y)

    for axis, first, count, step, d, a in (
        (0, first_x, count_x, step_x, d_x, p0[:, 0]),
        (1, first_y, count_y, step_y, d_y, p0[:, 1]),
    ):
        total = int(count.sum())
        if total == 0:
            continue
        ray = np.repeat(np.arange(n), count)
        offsets = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
        m = offsets + 1
        s = step[ray]
        boundary = np.where(s > 0, first[ray] + m, first[ray] - m + 1)
        t = np.clip((boundary - a[ray]) / d[ray], 0.0, 1.0)
        rays.append(ray)
        ts.append(t)
        axes.append(np.full(total, axis))
        dx_steps.append(s if axis == 0 else np.zeros(total, dtype=np.int64))
        dy_steps.append(s if axis == 1 else np.zeros(total, dtype=np.int64))

    ray = np.concatenate(rays)
    t = np.concatenate(ts)
    axis = np.concatenate(axes)
    dxs = np.concatenate(dx_steps)
    dys = np.concatenate(dy_steps)
    order = np.lexsort((axis, t, ray))
    ray, t, dxs, dys = ray[order], t[order], dxs[order], dys[order]

    starts_idx = np.flatnonzero(np.r_[True, ray[1:] != ray[:-1]])
    cx = np.cumsum(dxs)
    cy = np.cumsum(dys)
    base_x = cx[starts_idx] - dxs[starts_idx]
    base_y = cy[starts_idx] - dys[starts_idx]
    ix = cx - base_x[ray]
    iy = cy - base_y[ray]

    last = np.r_[ray[1:] != ray[:-1], True]
    t_exit = np.empty_like(t)
    t_exit[:-1] = t[1:]
    t_exit[last] = 1.0
    return CellTraversal(ray, ix, iy, t, t_exit, last)
