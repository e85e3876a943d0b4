"""Tests for batched grid traversal."""

import numpy as np

from road_atlas.raycast import traverse


def _cells(result, ray=0):
    mask = result.ray == ray
    return list(zip(result.ix[mask].tolist(), result.iy[mask].tolist()))


def test_axis_aligned_ray_visits_twenty_cells():
    result = traverse(np.array([[0.0, 0.0]]), np.array([[2.0, 0.0]]), 0.1)
    cells = _cells(result)
    assert cells == [(i, 0) for i in range(20)]
    assert result.last.tolist() == [False] * 19 + [True]
    assert result.t_enter[0] == 0.0
    assert result.t_exit[-1] == 1.0


def test_negative_direction():
    result = traverse(np.array([[0.0, 0.0]]), np.array([[-2.0, 0.0]]), 0.1)
    assert _cells(result) == [(-i, 0) for i in range(1, 21)]


def test_diagonal_ray():
    result = traverse(np.array([[0.05, 0.05]]), np.array([[0.25, 0.15]]), 0.1)
    assert _cells(result) == [(0, 0), (1, 0), (1, 1), (2, 1)]
    np.testing.assert_allclose(result.t_enter, [0.0, 0.25, 0.5, 0.75], atol=1e-9)


def test_degenerate_and_empty_batches():
    result = traverse(np.array([[0.35, -0.15]]), np.array([[0.35, -0.15]]), 0.1)
    assert _cells(result) == [(3, -2)]
    assert result.last.tolist() == [True]
    assert len(traverse(np.zeros((0, 2)), np.zeros((0, 2)), 0.1)) == 0


def test_random_segments_match_dense_sampling():
    """Traversal is 4-connected and contains every densely sampled cell."""
    rng = np.random.default_rng(7)
    starts = rng.uniform(-3.0, 3.0, size=(50, 2))
    ends = rng.uniform(-3.0, 3.0, size=(50, 2))
    res = 0.25
    result = traverse(starts, ends, res)

    for k in range(len(starts)):
        cells = _cells(result, k)
        first = tuple(np.floor(starts[k] / res).astype(int).tolist())
        final = tuple(np.floor(ends[k] / res).astype(int).tolist())
        assert cells[0] == first
        assert cells[-1] == final
        assert len(cells) == 1 + abs(final[0] - first[0]) + abs(final[1] - first[1])
        steps = np.abs(np.diff(np.array(cells), axis=0)).sum(axis=1)
        assert np.all(steps == 1)

        t = np.linspace(0.0, 1.0, 5000, endpoint=False)
        samples = starts[k] + t[:, None] * (ends[k] - starts[k])
        sampled = {tuple(c) for c in np.floor(samples / res).astype(int).tolist()}
        assert sampled <= set(cells)
