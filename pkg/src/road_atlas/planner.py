"""A* over the traversable layers of an atlas."""

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

from .errors import PlanningError
from .fusion import Atlas

logger = logging.getLogger(__name__)


class NavNode(NamedTuple):
    """A layer of a cell; ``layer`` indexes the column's layers by altitude."""

    ix: int
    iy: int
    layer: int


@dataclass(frozen=True)
class NavPath:
    nodes: List[NavNode]
    cost: float

    def __len__(self) -> int:
        return len(self.nodes)


_NEIGHBORS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy]


class NavGraph:
    """Implicit graph over free layers.

    Two layers of 8-adjacent cells are connected when their altitudes differ
    by at most ``max_step``; the edge cost is the 3D distance between layer
    centers. Unknown and occupied layers are not nodes.
    """

    def __init__(self, atlas: Atlas, max_step: float = 0.3):
        self.atlas = atlas
        self.max_step = max_step

    def is_valid(self, node: NavNode) -> bool:
        layers = self.atlas.layers_at(node.ix, node.iy)
        return 0 <= node.layer < len(layers) and layers[node.layer].is_free

    def altitude(self, node: NavNode) -> float:
        return self.atlas.layers_at(node.ix, node.iy)[node.layer].mu

    def position(self, node: NavNode) -> Tuple[float, float, float]:
        x, y = self.atlas.cell_center(node.ix, node.iy)
        return x, y, self.altitude(node)

    def distance(self, a: NavNode, b: NavNode) -> float:
        return math.dist(self.position(a), self.position(b))

    def nodes(self) -> Iterator[NavNode]:
        for (ix, iy), column in self.atlas.columns.items():
            for k, layer in enumerate(column.layers):
                if layer.is_free:
                    yield NavNode(ix, iy, k)

    def neighbors(self, node: NavNode) -> List[Tuple[NavNode, float]]:
        z = self.altitude(node)
        out = []
        for dx, dy in _NEIGHBORS:
            nx, ny = node.ix + dx, node.iy + dy
            for k, layer in enumerate(self.atlas.layers_at(nx, ny)):
                if layer.is_free and abs(layer.mu - z) <= self.max_step:
                    other = NavNode(nx, ny, k)
                    out.append((other, self.distance(node, other)))
        return out


def build_nav_graph(atlas: Atlas, max_step: float = 0.3) -> NavGraph:
    return NavGraph(atlas, max_step)


def astar(graph: NavGraph, start: NavNode, goal: NavNode) -> Optional[NavPath]:
    """Cost-minimal path under the straight-line 3D heuristic, or None."""
    for name, node in (("start", start), ("goal", goal)):
        if not graph.is_valid(node):
            raise PlanningError(
                f"Invalid {name} node {tuple(node)}: no free layer there"
            )

    counter = itertools.count()
    open_heap = [(graph.distance(start, goal), next(counter), start)]
    g: Dict[NavNode, float] = {start: 0.0}
    parent: Dict[NavNode, NavNode] = {}
    closed = set()
    while open_heap:
        _, _, node = heapq.heappop(open_heap)
        if node in closed:
            continue
        if node == goal:
            path = [node]
            while path[-1] in parent:
                path.append(parent[path[-1]])
            path.reverse()
            return NavPath(path, g[node])
        closed.add(node)
        for other, step in graph.neighbors(node):
            if other in closed:
                continue
            cost = g[node] + step
            if cost < g.get(other, math.inf):
                g[other] = cost
                parent[other] = node
                estimate = cost + graph.distance(other, goal)
                heapq.heappush(open_heap, (estimate, next(counter), other))
    return None


def snap_to_layer(
    atlas: Atlas, point: Sequence[float], tolerance: float = 1.0
) -> NavNode:
    """Free layer of the cell under ``point`` closest to its altitude."""
    x, y, z = (float(v) for v in point)
    ix, iy = atlas.cell_of(x, y)
    best = None
    for k, layer in enumerate(atlas.layers_at(ix, iy)):
        gap = abs(layer.mu - z)
        if layer.is_free and gap <= tolerance and (best is None or gap < best[0]):
            best = (gap, k)
    if best is None:
        raise PlanningError(
            f"No free layer within {tolerance} m of ({x:.3f}, {y:.3f}, {z:.3f})"
        )
    return NavNode(ix, iy, best[1])


def waypoint_lines(graph: NavGraph, path: NavPath) -> List[str]:
    lines = []
    for node in path.nodes:
        x, y, z = graph.position(node)
        lines.append(f"{node.ix} {node.iy} {node.layer} {x:.6f} {y:.6f} {z:.6f}")
    return lines


def write_waypoints(path_file: str, graph: NavGraph, path: NavPath) -> None:
    """Text waypoint list, one ``ix iy layer x y z`` line per node."""
    try:
        with open(path_file, "w", encoding="utf-8") as f:
            f.write("\n".join(waypoint_lines(graph, path)) + "\n")
    except OSError as err:
        raise OSError(f"Cannot write waypoints: {path_file}") from err
