"""Room segmentation over the fused density map, plus per-room cloud
extraction.

The built-in reference detector is a geometry-based segmenter: threshold
walls, distance-transform the free space, seed one marker per well-separated
interior, grow markers by a simultaneous BFS wavefront, then absorb slivers.
Any detector with the same OccupancyGrid -> RoomSegmentation signature can
replace it (a learned region detector plugs in at this seam).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .geom import GridSpec, OccupancyGrid, PointCloud
from .util import rle_decode, rle_encode


@dataclass(frozen=True)
class RoomSegParams:
    wall_threshold: float = 0.15  # fused-map value at or above which a cell is wall
    seed_distance: float = 0.6  # meters of wall clearance required to seed a room
    min_region_area: float = 1.5  # square meters below which a region is absorbed


@dataclass(frozen=True)
class RegionMask:
    """One room's cells (k, 2) int array of (i, j), with a ranking confidence."""

    room_id: int
    cells: np.ndarray = field(repr=False)
    confidence: float = 1.0

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        if len(cells) == 0:
            raise ValueError("region mask is empty")
        order = np.lexsort((cells[:, 1], cells[:, 0]))
        cells = cells[order].copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def area_cells(self) -> int:
        return len(self.cells)

    def cell_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.cells}


@dataclass(frozen=True)
class RoomSegmentation:
    spec: GridSpec
    masks: tuple[RegionMask, ...]
    wall_cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        walls = np.asarray(self.wall_cells, dtype=np.int64).reshape(-1, 2).copy()
        walls.setflags(write=False)
        object.__setattr__(self, "wall_cells", walls)
        object.__setattr__(self, "masks", tuple(self.masks))
        seen: set[tuple[int, int]] = set()
        wall_set = {(int(i), int(j)) for i, j in walls}
        for mask in self.masks:
            cells = mask.cell_set()
            if cells & seen:
                raise ValueError("room masks overlap")
            if cells & wall_set:
                raise ValueError(f"room {mask.room_id} includes wall cells")
            seen |= cells

    def label_grid(self) -> np.ndarray:
        """(width, height) int grid: room_id per cell, -1 elsewhere."""
        grid = np.full((self.spec.width, self.spec.height), -1, dtype=np.int64)
        for mask in self.masks:
            grid[mask.cells[:, 0], mask.cells[:, 1]] = mask.room_id
        return grid


RegionDetector = Callable[[OccupancyGrid], RoomSegmentation]


def detect_regions(
    combined: OccupancyGrid, params: RoomSegParams | None = None
) -> RoomSegmentation:
    """Reference geometry-based room detector over the fused map.

    Walls are cells at or above wall_threshold. Free space is the remainder
    restricted to the bounding region of its largest connected component
    (this drops the padding ring outside the building). Seeds are the
    connected components of {wall distance >= seed_distance}: each collapses
    a plateau of distance maxima and everything within seed range of it into
    one marker, so two interiors stay separate exactly while the gap between
    them is narrower than twice the seed distance. Markers grow by a
    simultaneous 4-connected BFS (ties to the lower room id), and regions
    under min_region_area merge into the neighbor sharing the longest open
    boundary. Confidence is area relative to the largest region.
    """
    params = params or RoomSegParams()
    if combined.is_counts:
        raise ValueError("detector expects a value grid in [0, 1]")
    spec = combined.spec
    wall = combined.cells >= params.wall_threshold
    wall_cells = np.argwhere(wall)

    free = ~wall
    if not free.any():
        return RoomSegmentation(spec, (), wall_cells)
    comp, n_comp = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    sizes = ndimage.sum_labels(np.ones_like(comp), comp, index=np.arange(1, n_comp + 1))
    largest = int(np.argmax(sizes)) + 1
    ii, jj = np.where(comp == largest)
    bbox = (ii.min(), ii.max(), jj.min(), jj.max())
    inside = np.zeros_like(free)
    inside[bbox[0] : bbox[1] + 1, bbox[2] : bbox[3] + 1] = True
    free &= inside

    dist = ndimage.distance_transform_edt(free) * spec.cell_size
    seeds = dist >= params.seed_distance
    markers, n_rooms = ndimage.label(seeds, structure=np.ones((3, 3), dtype=int))
    if n_rooms == 0:
        return RoomSegmentation(spec, (), wall_cells)

    labels = _wavefront(free, markers, n_rooms)
    labels = _merge_small_regions(labels, n_rooms, params.min_region_area, spec.cell_size)

    ids = sorted(int(v) for v in np.unique(labels) if v > 0)
    areas = {rid: int((labels == rid).sum()) for rid in ids}
    peak = max(areas.values())
    masks = []
    for new_id, rid in enumerate(ids):
        cells = np.argwhere(labels == rid)
        masks.append(RegionMask(new_id, cells, confidence=areas[rid] / peak))
    return RoomSegmentation(spec, tuple(masks), wall_cells)


def _wavefront(free: np.ndarray, markers: np.ndarray, n_rooms: int) -> np.ndarray:
    """Simultaneous BFS growth of marker regions over free cells.

    Sources enter the queue in ascending marker id, so equal-distance ties
    resolve to the lower id deterministically.
    """
    labels = np.where(free, markers, 0).astype(np.int64)
    queue = deque()
    for rid in range(1, n_rooms + 1):
        for i, j in np.argwhere(markers == rid):
            queue.append((int(i), int(j)))
    w, h = free.shape
    while queue:
        i, j = queue.popleft()
        rid = labels[i, j]
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < w and 0 <= nj < h and free[ni, nj] and labels[ni, nj] == 0:
                labels[ni, nj] = rid
                queue.append((ni, nj))
    return labels


def _merge_small_regions(
    labels: np.ndarray, n_rooms: int, min_area_m2: float, cell_size: float
) -> np.ndarray:
    min_cells = min_area_m2 / (cell_size * cell_size)
    labels = labels.copy()
    while True:
        ids = [int(v) for v in np.unique(labels) if v > 0]
        if len(ids) <= 1:
            return labels
        areas = {rid: int((labels == rid).sum()) for rid in ids}
        small = sorted((a, rid) for rid, a in areas.items() if a < min_cells)
        merged_any = False
        for _, rid in small:
            shared: dict[int, int] = {}
            cells = np.argwhere(labels == rid)
            w, h = labels.shape
            for i, j in cells:
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < w and 0 <= nj < h:
                        other = labels[ni, nj]
                        if other > 0 and other != rid:
                            shared[int(other)] = shared.get(int(other), 0) + 1
            if not shared:
                continue  # isolated pocket stays a room of its own
            target = min(shared, key=lambda r: (-shared[r], r))
            labels[labels == rid] = target
            merged_any = True
            break  # recompute areas and adjacency after each merge
        if not merged_any:
            return labels


def extract_rooms(cloud: PointCloud, seg: RoomSegmentation) -> list[tuple[int, PointCloud]]:
    """Split a cloud by room: a point belongs to room r iff its xy cell is in
    r's mask. Points on wall or unassigned cells belong to no room."""
    ij = seg.spec.cell_indices(cloud.points[:, :2])
    if not seg.spec.contains_cells(ij).all():
        raise ValueError("cloud footprint exceeds the segmentation grid")
    grid = seg.label_grid()
    point_room = grid[ij[:, 0], ij[:, 1]]
    return [
        (mask.room_id, cloud.subset(point_room == mask.room_id)) for mask in seg.masks
    ]


# ------------------------------------------------------------- serialization


def seg_to_json(seg: RoomSegmentation) -> str:
    def flatten(cells):
        return rle_encode(sorted(int(i) * seg.spec.height + int(j) for i, j in cells))

    doc = {
        "grid": {
            "origin": list(seg.spec.origin),
            "cell_size": seg.spec.cell_size,
            "width": seg.spec.width,
            "height": seg.spec.height,
        },
        "walls_rle": flatten(seg.wall_cells),
        "rooms": [
            {
                "id": m.room_id,
                "confidence": m.confidence,
                "rle": flatten(m.cells),
            }
            for m in seg.masks
        ],
    }
    return json.dumps(doc, sort_keys=True)


def seg_from_json(text: str) -> RoomSegmentation:
    doc = json.loads(text)
    g = doc["grid"]
    spec = GridSpec(tuple(g["origin"]), g["cell_size"], g["width"], g["height"])

    def unflatten(runs):
        flat = rle_decode(runs)
        return np.array([(k // spec.height, k % spec.height) for k in flat], dtype=np.int64).reshape(-1, 2)

    masks = tuple(
        RegionMask(r["id"], unflatten(r["rle"]), r["confidence"]) for r in doc["rooms"]
    )
    return RoomSegmentation(spec, masks, unflatten(doc["walls_rle"]))


def seg_to_png(seg: RoomSegmentation, path) -> None:
    """Colorized segmentation: one color block per room, walls dark gray."""
    from PIL import Image

    rng = np.random.default_rng(7)
    img = np.full((seg.spec.width, seg.spec.height, 3), 255, dtype=np.uint8)
    for mask in seg.masks:
        color = rng.integers(40, 230, size=3)
        img[mask.cells[:, 0], mask.cells[:, 1]] = color
    if len(seg.wall_cells):
        img[seg.wall_cells[:, 0], seg.wall_cells[:, 1]] = (40, 40, 40)
    Image.fromarray(np.flipud(img.transpose(1, 0, 2)), mode="RGB").save(path)
