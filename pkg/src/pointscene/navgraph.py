"""Voronoi navigation graph over a robot-height free-space map.

Pipeline: project points within the robot's height band to obstacle cells,
erode the free space by the robot radius, take boundary = free minus eroded,
label every eroded cell with its nearest boundary cell (exact feature
transform), and keep the ridge cells where neighboring labels point at
boundary cells at least d_sep apart (a discrete generalized Voronoi diagram).
The ridge is thinned to single width, branches that descend into corners are
eaten back, degree-2 chains collapse into polyline edges, and short leaf
spurs are trimmed.
"""

from __future__ import annotations

import heapq
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geom import GridSpec, OccupancyGrid, PointCloud


class PathNotFoundError(RuntimeError):
    """Start and goal are not connected through the navigation graph."""


@dataclass(frozen=True)
class NavParams:
    h_robot: float = 1.2  # height band above the floor that can collide
    robot_radius: float = 0.3
    trim_len: float = 0.5
    d_sep: float = 0.2  # boundary separation that makes a cell a ridge cell

    def __post_init__(self):
        for name in ("h_robot", "robot_radius", "trim_len", "d_sep"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class NavEdge:
    a: int
    b: int
    polyline: np.ndarray  # (m, 2) metric waypoints, a-end first
    length: float

    def __post_init__(self):
        self.polyline = np.asarray(self.polyline, dtype=np.float64).reshape(-1, 2)
        arc = float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())
        if abs(arc - self.length) > 1e-6:
            raise ValueError(f"edge length {self.length} != polyline arc {arc}")


@dataclass
class NavGraph:
    """Undirected skeleton graph: metric node positions plus polyline edges."""

    nodes: np.ndarray  # (k, 2)
    edges: list[NavEdge]

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        for e in self.edges:
            if not (0 <= e.a < len(self.nodes) and 0 <= e.b < len(self.nodes)):
                raise ValueError("edge references a missing node")

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """node -> list of (edge index, other node)."""
        adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(self.nodes))}
        for idx, e in enumerate(self.edges):
            adj[e.a].append((idx, e.b))
            adj[e.b].append((idx, e.a))
        return adj

    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": self.nodes.tolist(),
                "edges": [
                    {
                        "a": e.a,
                        "b": e.b,
                        "length": e.length,
                        "polyline": e.polyline.tolist(),
                    }
                    for e in self.edges
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "NavGraph":
        doc = json.loads(text)
        edges = [
            NavEdge(int(e["a"]), int(e["b"]), np.asarray(e["polyline"]), float(e["length"]))
            for e in doc["edges"]
        ]
        return cls(np.asarray(doc["nodes"]), edges)

    def to_dot(self) -> str:
        lines = ["graph navgraph {"]
        for i, (x, y) in enumerate(self.nodes):
            lines.append(f'  n{i} [pos="{x:.3f},{y:.3f}!" label="n{i}"];')
        for e in self.edges:
            lines.append(f'  n{e.a} -- n{e.b} [label="{e.length:.2f}"];')
        lines.append("}")
        return "\n".join(lines)


@dataclass
class NavBuildResult:
    graph: NavGraph
    free: OccupancyGrid
    eroded: OccupancyGrid
    boundary: OccupancyGrid


def build_free_space_map(
    cloud: PointCloud, params: NavParams, spec: GridSpec
) -> OccupancyGrid:
    """Binary free-space map at robot height.

    Obstacle cells contain at least one point with z inside
    [z_min, z_min + h_robot]. Free cells are the largest obstacle-enclosed
    connected component (components touching the footprint edge are outside
    the mapped area); if nothing is enclosed, the largest component is used
    with a warning.
    """
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    z = cloud.points[:, 2]
    z_min = float(z.min())
    band = (z >= z_min) & (z <= z_min + params.h_robot)
    obstacles = np.zeros((spec.width, spec.height), dtype=bool)
    ij = spec.cell_indices(cloud.points[band, :2])
    if not spec.contains_cells(ij).all():
        raise ValueError("cloud footprint exceeds the grid")
    obstacles[ij[:, 0], ij[:, 1]] = True

    open_cells = ~obstacles
    comp, n_comp = ndimage.label(open_cells, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    if n_comp == 0:
        return OccupancyGrid(spec, np.zeros_like(obstacles, dtype=np.int64))
    edge_labels = set(comp[0, :]) | set(comp[-1, :]) | set(comp[:, 0]) | set(comp[:, -1])
    sizes = ndimage.sum_labels(np.ones_like(comp), comp, index=np.arange(1, n_comp + 1))
    enclosed = [k for k in range(1, n_comp + 1) if k not in edge_labels]
    if enclosed:
        best = max(enclosed, key=lambda k: sizes[k - 1])
    else:
        warnings.warn("no obstacle-enclosed free component; using the largest", stacklevel=2)
        best = int(np.argmax(sizes)) + 1
    return OccupancyGrid(spec, (comp == best).astype(np.int64))


_NEIGH8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _disk(radius_cells: int) -> np.ndarray:
    r = int(radius_cells)
    xs = np.arange(-r, r + 1)
    return (xs[:, None] ** 2 + xs[None, :] ** 2) <= r * r


def _nearest_boundary_labels(free: np.ndarray, eroded: np.ndarray) -> np.ndarray:
    """(w, h, 2) array: per cell, the boundary cell nearest to it (exact
    Euclidean feature transform). Cells outside free space get (-1, -1)."""
    boundary = free & ~eroded
    if not boundary.any():
        return np.full((*free.shape, 2), -1, dtype=np.int64)
    ind = ndimage.distance_transform_edt(
        ~boundary, return_indices=True, return_distances=False
    )
    labels = np.stack([ind[0], ind[1]], axis=-1).astype(np.int64)
    labels[~free] = -1
    return labels


def build_navgraph(free_grid: OccupancyGrid, params: NavParams) -> NavBuildResult:
    """Extract the sparsified Voronoi skeleton of a binary free-space map."""
    spec = free_grid.spec
    free = free_grid.cells > 0
    radius_cells = max(1, int(round(params.robot_radius / spec.cell_size)))
    eroded = ndimage.binary_erosion(free, structure=_disk(radius_cells), border_value=0)
    if not eroded.any():
        raise ValueError("no free space survives erosion by the robot radius")
    boundary = free & ~eroded

    labels = _nearest_boundary_labels(free, eroded)
    ii, jj = np.meshgrid(np.arange(free.shape[0]), np.arange(free.shape[1]), indexing="ij")
    clearance = np.hypot(ii - labels[:, :, 0], jj - labels[:, :, 1])
    ridge = _ridge_cells(eroded, labels, params.d_sep / spec.cell_size)
    ridge = _thin(ridge)
    ridge = _erode_descending_leaves(ridge, clearance)
    nodes, edges = _trace_graph(ridge, spec)
    # iterate the graph cleanup: removing one micro-artifact (a duplicate
    # parallel edge, a short leaf, a degree-2 joint) can expose the next
    while True:
        before = (len(nodes), len(edges))
        nodes, edges = _dedupe_micro_edges(nodes, edges, params.trim_len)
        nodes, edges = _trim_leaves(nodes, edges, params.trim_len)
        nodes, edges = _collapse_degree_two(nodes, edges)
        if (len(nodes), len(edges)) == before:
            break

    graph = NavGraph(nodes, edges)
    return NavBuildResult(
        graph,
        free_grid.binarize(),
        OccupancyGrid(spec, eroded.astype(np.int64)),
        OccupancyGrid(spec, boundary.astype(np.int64)),
    )


def _ridge_cells(eroded: np.ndarray, labels: np.ndarray, d_sep_cells: float) -> np.ndarray:
    """Boolean ridge mask: eroded cells with a neighbor whose nearest boundary
    cell lies at least d_sep away from this cell's."""
    w, h = eroded.shape
    ridge = np.zeros_like(eroded)
    sep2 = d_sep_cells * d_sep_cells
    cells = np.argwhere(eroded)
    for i, j in cells:
        li, lj = labels[i, j]
        for di, dj in _NEIGH8:
            ni, nj = i + di, j + dj
            if not (0 <= ni < w and 0 <= nj < h) or labels[ni, nj, 0] == -1:
                continue
            mi, mj = labels[ni, nj]
            if (li - mi) ** 2 + (lj - mj) ** 2 >= sep2:
                ridge[i, j] = True
                break
    return ridge


def _erode_descending_leaves(ridge: np.ndarray, clearance: np.ndarray) -> np.ndarray:
    """Eat skeleton tips whose wall clearance strictly descends.

    Branches that run into corners lose clearance cell by cell, so they are
    consumed back to the junction; dead-end corridor stubs keep constant
    clearance and survive. Works on the thinned (single-width) skeleton.
    """
    ridge = ridge.copy()
    w, h = ridge.shape
    eps = 0.25  # cells; ignores float jitter along flat chains
    changed = True
    while changed:
        changed = False
        for i, j in np.argwhere(ridge):
            nbrs = [
                (i + di, j + dj)
                for di, dj in _NEIGH8
                if 0 <= i + di < w and 0 <= j + dj < h and ridge[i + di, j + dj]
            ]
            if len(nbrs) == 1:
                ni, nj = nbrs[0]
                if clearance[i, j] < clearance[ni, nj] - eps:
                    ridge[i, j] = False
                    changed = True
    return ridge


def _thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning: shrink the ridge band to single-cell width while
    preserving its connectivity."""
    img = mask.astype(np.uint8).copy()

    def shells(arr):
        p = np.pad(arr, 1)
        return (
            p[0:-2, 1:-1],  # n
            p[0:-2, 2:],    # ne
            p[1:-1, 2:],    # e
            p[2:, 2:],      # se
            p[2:, 1:-1],    # s
            p[2:, 0:-2],    # sw
            p[1:-1, 0:-2],  # w
            p[0:-2, 0:-2],  # nw
        )

    while True:
        changed = False
        for phase in (0, 1):
            n, ne, e, se, s, sw, w, nw = shells(img)
            ring = [n, ne, e, se, s, sw, w, nw, n]
            total = n + ne + e + se + s + sw + w + nw
            transitions = sum(
                ((ring[k] == 0) & (ring[k + 1] == 1)).astype(np.uint8) for k in range(8)
            )
            base = (img == 1) & (total >= 2) & (total <= 6) & (transitions == 1)
            if phase == 0:
                cond = base & ((n * e * s) == 0) & ((e * s * w) == 0)
            else:
                cond = base & ((n * e * w) == 0) & ((n * s * w) == 0)
            if cond.any():
                img[cond] = 0
                changed = True
        if not changed:
            return img.astype(bool)


def _trace_graph(ridge: np.ndarray, spec: GridSpec):
    """Collapse the raster ridge into nodes (degree != 2 cells) and polyline
    edges (degree-2 chains)."""
    cells = [tuple(c) for c in np.argwhere(ridge)]
    cell_set = set(cells)

    def neighbors(c):
        return [
            (c[0] + di, c[1] + dj) for di, dj in _NEIGH8 if (c[0] + di, c[1] + dj) in cell_set
        ]

    degree = {c: len(neighbors(c)) for c in cells}
    node_cells = sorted(c for c in cells if degree[c] != 2)

    # pure cycles contain no degree!=2 cell; give each one an anchor node
    visited = set(node_cells)
    for c in sorted(cells):
        if c in visited or degree[c] != 2:
            continue
        comp = [c]
        visited.add(c)
        stack = [c]
        has_node = False
        while stack:
            p = stack.pop()
            for q in neighbors(p):
                if q in visited:
                    has_node = has_node or q in node_cells
                    continue
                visited.add(q)
                comp.append(q)
                stack.append(q)
        comp_nodes = [p for p in comp if degree[p] != 2]
        if not comp_nodes:
            node_cells.append(min(comp))
    node_cells = sorted(set(node_cells))

    node_index = {c: k for k, c in enumerate(node_cells)}
    positions = np.array([spec.cell_center(i, j) for i, j in node_cells]).reshape(-1, 2)

    edges: list[NavEdge] = []
    used_steps: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for start in node_cells:
        for first in sorted(neighbors(start)):
            if (start, first) in used_steps:
                continue
            used_steps.add((start, first))
            chain = [start, first]
            prev, cur = start, first
            while cur not in node_index:
                nexts = [q for q in neighbors(cur) if q != prev]
                if not nexts:
                    break  # dead-end chain cell (shouldn't happen: degree 1 is a node)
                nxt = nexts[0]
                chain.append(nxt)
                prev, cur = cur, nxt
            if cur in node_index:
                used_steps.add((cur, prev))
                poly = np.array([spec.cell_center(i, j) for i, j in chain])
                length = float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())
                edges.append(NavEdge(node_index[start], node_index[cur], poly, length))
    return positions, edges


def _dedupe_micro_edges(nodes: np.ndarray, edges: list[NavEdge], trim_len: float):
    """Drop raster-scale artifacts: sub-threshold self-loops, and all but the
    shortest of parallel edges when the extras are shorter than trim_len.
    Genuine alternative routes (long parallels, large loops) are kept."""
    kept: list[NavEdge] = []
    shortest: dict[tuple[int, int], float] = {}
    for e in sorted(edges, key=lambda e: e.length):
        if e.a == e.b and e.length < trim_len:
            continue
        key = (min(e.a, e.b), max(e.a, e.b))
        if key in shortest and e.length < trim_len:
            continue
        shortest.setdefault(key, e.length)
        kept.append(e)
    return nodes, kept


def _degrees(num_nodes: int, edges: list[NavEdge]) -> list[int]:
    deg = [0] * num_nodes
    for e in edges:
        deg[e.a] += 1
        deg[e.b] += 1
    return deg


def _trim_leaves(nodes: np.ndarray, edges: list[NavEdge], trim_len: float):
    """Iteratively delete leaf edges shorter than trim_len (fixed node set,
    so the fixpoint is order-independent), then drop orphaned nodes."""
    edges = list(edges)
    had_degree = [d > 0 for d in _degrees(len(nodes), edges)]
    while True:
        deg = _degrees(len(nodes), edges)
        removable = [
            e
            for e in edges
            if e.length < trim_len
            and e.a != e.b
            and (deg[e.a] == 1 or deg[e.b] == 1)
        ]
        if not removable:
            break
        edges = [e for e in edges if e not in removable]
    deg = _degrees(len(nodes), edges)
    keep = [k for k in range(len(nodes)) if deg[k] > 0 or not had_degree[k]]
    remap = {old: new for new, old in enumerate(keep)}
    edges = [
        NavEdge(remap[e.a], remap[e.b], e.polyline, e.length)
        for e in edges
        if e.a in remap and e.b in remap
    ]
    return nodes[keep], edges


def _collapse_degree_two(nodes: np.ndarray, edges: list[NavEdge]):
    """Merge chains left behind by trimming: a node with exactly two distinct
    incident edges (and no self-loop) joins them into one polyline edge."""
    edges = list(edges)
    while True:
        deg = _degrees(len(nodes), edges)
        target = None
        for k in range(len(nodes)):
            if deg[k] != 2:
                continue
            incident = [e for e in edges if k in (e.a, e.b)]
            if len(incident) != 2 or any(e.a == e.b for e in incident):
                continue
            target = (k, incident)
            break
        if target is None:
            break
        k, (e1, e2) = target
        p1 = e1.polyline if e1.b == k else e1.polyline[::-1]
        a = e1.a if e1.b == k else e1.b
        p2 = e2.polyline if e2.a == k else e2.polyline[::-1]
        b = e2.b if e2.a == k else e2.a
        poly = np.vstack([p1, p2[1:]])
        merged = NavEdge(a, b, poly, float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum()))
        edges = [e for e in edges if e is not e1 and e is not e2]
        edges.append(merged)
        keep = [i for i in range(len(nodes)) if i != k]
        remap = {old: new for new, old in enumerate(keep)}
        edges = [NavEdge(remap[e.a], remap[e.b], e.polyline, e.length) for e in edges]
        nodes = nodes[keep]
    return nodes, edges


@dataclass
class PathResult:
    points: np.ndarray  # (m, 2) waypoints including start and goal
    length: float


def _cell_of(spec: GridSpec, xy) -> tuple[int, int]:
    ij = spec.cell_indices(np.asarray(xy, dtype=float).reshape(1, 2))[0]
    return int(ij[0]), int(ij[1])


def _line_of_sight(free: np.ndarray, spec: GridSpec, a, b) -> bool:
    """Dense-sampled straight-segment collision test over free cells."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dist = float(np.linalg.norm(b - a))
    steps = max(2, int(dist / (0.25 * spec.cell_size)) + 1)
    for t in np.linspace(0.0, 1.0, steps):
        i, j = _cell_of(spec, a + t * (b - a))
        if not (0 <= i < spec.width and 0 <= j < spec.height) or not free[i, j]:
            return False
    return True


def plan_path(
    graph: NavGraph, start, goal, eroded: OccupancyGrid
) -> PathResult:
    """Shortest path along the navigation graph between two free positions.

    Start and goal attach to the nearest graph point (node or edge waypoint)
    visible over a straight collision-free segment; Dijkstra runs over edge
    lengths in between.
    """
    spec = eroded.spec
    free = eroded.cells > 0
    start = np.asarray(start, dtype=float).reshape(2)
    goal = np.asarray(goal, dtype=float).reshape(2)
    for name, p in (("start", start), ("goal", goal)):
        i, j = _cell_of(spec, p)
        if not (0 <= i < spec.width and 0 <= j < spec.height) or not free[i, j]:
            raise ValueError(f"{name} position {tuple(p)} is not in eroded free space")
    if np.allclose(start, goal):
        return PathResult(np.vstack([start, goal]), 0.0)

    start_links = _attach(graph, start, free, spec)
    goal_links = _attach(graph, goal, free, spec)
    if not start_links or not goal_links:
        raise PathNotFoundError("no graph point is visible from the given position")

    # Dijkstra over base nodes plus the two virtual endpoints
    S, G = -1, -2
    adj: dict[int, list[tuple[int, float, tuple]]] = {S: [], G: []}
    for k in range(len(graph.nodes)):
        adj[k] = []
    for idx, e in enumerate(graph.edges):
        adj[e.a].append((e.b, e.length, ("edge", idx, False)))
        adj[e.b].append((e.a, e.length, ("edge", idx, True)))
    for node, weight, points in start_links:
        adj[S].append((node, weight, ("virt", points)))
    for node, weight, points in goal_links:
        adj[node].append((G, weight, ("virt", points[::-1])))
    for direct_w, direct_pts in _same_edge_shortcuts(graph, start_links, goal_links):
        adj[S].append((G, direct_w, ("virt", direct_pts)))

    dist = {S: 0.0}
    back: dict[int, tuple[int, tuple]] = {}
    heap = [(0.0, S)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == G:
            break
        for v, w, how in adj[u]:
            nd = d + w
            if nd < dist.get(v, math.inf) - 1e-12:
                dist[v] = nd
                back[v] = (u, how)
                heapq.heappush(heap, (nd, v))
    if G not in dist:
        raise PathNotFoundError("goal is not reachable through the navigation graph")

    points = [goal]
    node = G
    while node != S:
        prev, how = back[node]
        if how[0] == "edge":
            idx, reverse = how[1], how[2]
            poly = graph.edges[idx].polyline
            seg = poly[::-1] if reverse else poly
            points.extend(seg[::-1][1:])
        else:
            seg = np.asarray(how[1])
            points.extend(seg[::-1][1:])
        node = prev
    points = np.asarray(points[::-1])
    length = float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())
    return PathResult(points, length)


def _attach(graph: NavGraph, origin: np.ndarray, free: np.ndarray, spec: GridSpec):
    """Connections from a free position onto the graph: list of
    (node_id, path length, waypoints origin->node). The nearest visible graph
    point is used; attaching mid-edge yields links to both edge endpoints."""
    candidates: list[tuple[float, int, tuple]] = []
    for k, pos in enumerate(graph.nodes):
        candidates.append((float(np.linalg.norm(pos - origin)), 0, ("node", k)))
    for idx, e in enumerate(graph.edges):
        for v in range(1, len(e.polyline) - 1):
            d = float(np.linalg.norm(e.polyline[v] - origin))
            candidates.append((d, 1, ("vertex", idx, v)))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    for d, _, what in candidates:
        target = (
            graph.nodes[what[1]]
            if what[0] == "node"
            else graph.edges[what[1]].polyline[what[2]]
        )
        if not _line_of_sight(free, spec, origin, target):
            continue
        if what[0] == "node":
            return [(what[1], d, np.vstack([origin, target]))]
        idx, v = what[1], what[2]
        e = graph.edges[idx]
        to_a = e.polyline[: v + 1][::-1]
        to_b = e.polyline[v:]
        links = []
        for node, seg in ((e.a, to_a), (e.b, to_b)):
            pts = np.vstack([origin, seg])
            links.append(
                (node, float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()), pts)
            )
        return links
    return []


def _same_edge_shortcuts(graph: NavGraph, start_links, goal_links):
    """Direct start->goal hop when both attach inside the same edge."""
    # start/goal links carry full waypoint arrays; a shared interior waypoint
    # sequence indicates the same edge. Reconstruct the along-edge segment.
    out = []
    if len(start_links) == 2 and len(goal_links) == 2:
        s_pts = start_links[0][2]
        g_pts = goal_links[0][2]
        s_anchor = tuple(np.round(s_pts[1], 9))
        # identify the edges by matching the anchor waypoint
        for idx, e in enumerate(graph.edges):
            poly_r = np.round(e.polyline, 9)
            s_hits = np.where((poly_r == s_anchor).all(axis=1))[0]
            if len(s_hits) == 0:
                continue
            g_anchor = tuple(np.round(g_pts[1], 9))
            g_hits = np.where((poly_r == g_anchor).all(axis=1))[0]
            if len(g_hits) == 0:
                continue
            va, vb = int(s_hits[0]), int(g_hits[0])
            lo, hi = min(va, vb), max(va, vb)
            seg = e.polyline[lo : hi + 1]
            if va > vb:
                seg = seg[::-1]
            pts = np.vstack([s_pts[0], seg, g_pts[0]])
            out.append((float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()), pts))
    return out
