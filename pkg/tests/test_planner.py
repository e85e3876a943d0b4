"""Tests for multi-layer planning."""

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from road_atlas.errors import PlanningError
from road_atlas.fusion import Atlas, CellColumn, SurfaceLayer
from road_atlas.models import SegmentConfig
from road_atlas.planner import (
    NavNode,
    astar,
    build_nav_graph,
    snap_to_layer,
    waypoint_lines,
    write_waypoints,
)


def test_route_climbs_the_ramp(overpass_atlas):
    """Ground under the deck reaches the deck only by the ramp."""
    start = snap_to_layer(overpass_atlas, (0.5, 0.5, 0.0))
    goal = snap_to_layer(overpass_atlas, (0.5, -4.5, 5.0))
    assert start == NavNode(0, 0, 0)
    assert goal == NavNode(0, -5, 1)

    graph = build_nav_graph(overpass_atlas, 0.3)
    path = astar(graph, start, goal)
    assert path is not None
    assert path.nodes[0] == start and path.nodes[-1] == goal
    assert path.cost > 40.0

    altitudes = [graph.altitude(n) for n in path.nodes]
    assert any(0.0 < z < 5.0 for z in altitudes)
    for a, b in zip(path.nodes, path.nodes[1:]):
        assert max(abs(a.ix - b.ix), abs(a.iy - b.iy)) == 1
        assert abs(graph.altitude(a) - graph.altitude(b)) <= 0.3
    assert path.cost == pytest.approx(
        sum(graph.distance(a, b) for a, b in zip(path.nodes, path.nodes[1:]))
    )


def test_steep_ramp_disconnects_deck(overpass_atlas):
    graph = build_nav_graph(overpass_atlas, 0.2)
    assert astar(graph, NavNode(0, 0, 0), NavNode(0, -5, 1)) is None
    assert astar(graph, NavNode(0, 0, 0), NavNode(8, 30, 0)) is not None


def test_snap_needs_nearby_free_layer(overpass_atlas):
    with pytest.raises(PlanningError, match="No free layer"):
        snap_to_layer(overpass_atlas, (0.5, 0.5, 2.5))
    assert snap_to_layer(overpass_atlas, (0.5, 0.5, 4.2)).layer == 1


def test_invalid_endpoints(overpass_atlas):
    graph = build_nav_graph(overpass_atlas)
    with pytest.raises(PlanningError, match="Invalid start"):
        astar(graph, NavNode(50, 50, 0), NavNode(0, 0, 0))
    with pytest.raises(PlanningError, match="Invalid goal"):
        astar(graph, NavNode(0, 0, 0), NavNode(0, 20, 1))


def _random_atlas(rng, size, occupied=0.1):
    atlas = Atlas(1.0, SegmentConfig())
    for ix in range(size):
        for iy in range(size):
            if rng.random() < 0.1:
                continue
            base = float(rng.choice([0.0, 0.1, 0.2, 0.4]))
            mus = [base] if rng.random() < 0.8 else [base, base + 3.0]
            column = CellColumn(ix, iy)
            column.layers = tuple(
                SurfaceLayer(m, 0.1, 2, k + 1, 1.0 if rng.random() < occupied else -1.0)
                for k, m in enumerate(mus)
            )
            atlas.columns[(ix, iy)] = column
    return atlas


def _dijkstra_cost(graph, start, goal):
    nodes = list(graph.nodes())
    index = {n: i for i, n in enumerate(nodes)}
    rows, cols, weights = [], [], []
    for node in nodes:
        for other, cost in graph.neighbors(node):
            rows.append(index[node])
            cols.append(index[other])
            weights.append(cost)
    matrix = csr_matrix((weights, (rows, cols)), shape=(len(nodes), len(nodes)))
    dist = dijkstra(matrix, indices=index[start])
    return float(dist[index[goal]])


def test_astar_matches_dijkstra():
    """A* with the straight-line heuristic returns the shortest path cost
    on 100 random graphs of up to 10^4 nodes."""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        size = 90 if seed == 0 else int(rng.integers(4, 60))
        _check_against_dijkstra(rng, size)


def _check_against_dijkstra(rng, size):
    graph = build_nav_graph(_random_atlas(rng, size), 0.3)
    nodes = list(graph.nodes())
    assert len(nodes) <= 10_000
    for _ in range(3):
        start, goal = (nodes[i] for i in rng.choice(len(nodes), 2, replace=False))
        expected = _dijkstra_cost(graph, start, goal)
        path = astar(graph, start, goal)
        if np.isinf(expected):
            assert path is None
        else:
            assert path is not None
            assert path.cost == pytest.approx(expected, rel=1e-9)


def test_write_waypoints(tmp_path, overpass_atlas):
    graph = build_nav_graph(overpass_atlas)
    path = astar(graph, NavNode(0, 0, 0), NavNode(2, 1, 0))
    out = tmp_path / "route.txt"
    write_waypoints(str(out), graph, path)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines == waypoint_lines(graph, path)
    assert lines[0] == "0 0 0 0.500000 0.500000 0.000000"
    assert len(lines) == len(path) == 3
