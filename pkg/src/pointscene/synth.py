"""Parametric synthetic indoor scenes with full ground truth.

Scenes are built so every stage of the pipeline has clean signal: walls are
stratified-sampled dense columns (border votes), floors and ceilings are
sparse white sheets (kept out of the wall mask), each room carries a banded
marker cone at eye height encoding its type (classification signal that the
border vote cannot mistake for a wall), and planted objects are white
archetype shapes with known boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .archetypes import PLAN_DENSITY_CAP, cap_plan_density, marker_points, object_shape_points
from .geom import GridSpec, PointCloud
from .objects import Box3
from .util import derive_seed

CELL = 0.05
WALL_THICKNESS = 0.15
WALL_HEIGHT = 2.5
EYE_HEIGHT = 1.5

WALL_PTS_PER_CELL = 160
FLOOR_PTS_PER_CELL = 0.3
MARKER_POINTS = 2800
OBJECT_POINTS = 1600

DEFAULT_ROOM_LABELS = ("kitchen", "hallway", "bedroom", "office")
DEFAULT_ROOM_OBJECTS = {
    "kitchen": (("table", (1.3, -0.85)),),
    "hallway": (("water station", (-1.3, 0.9)),),
    "bedroom": (("chair", (1.3, 1.0)),),
    "office": (("box", (1.2, -0.9)),),
    "classroom": (("chair", (1.3, 1.0)),),
    "bathroom": (("slab", (1.25, -0.85)),),
}
OBJECT_CATEGORIES = ("pole", "slab", "box", "water station", "table", "chair", "cone")
ROOM_CATEGORIES = ("kitchen", "bathroom", "bedroom", "office", "hallway", "classroom")


@dataclass(frozen=True)
class GroundTruthObject:
    room_index: int
    category: str
    box: Box3


@dataclass(frozen=True)
class SceneGroundTruth:
    """What the generator planted: room rectangles with labels, object boxes,
    and the scene constants needed to rasterize masks."""

    rooms: tuple[tuple[str, tuple[float, float, float, float]], ...]
    objects: tuple[GroundTruthObject, ...] = ()
    wall_height: float = WALL_HEIGHT
    cell_size: float = CELL

    def room_masks(self, spec: GridSpec) -> list[np.ndarray]:
        """Per-room (k, 2) cell arrays: cells whose center lies inside the
        room rectangle."""
        masks = []
        ii, jj = np.meshgrid(np.arange(spec.width), np.arange(spec.height), indexing="ij")
        cx = spec.origin[0] + (ii + 0.5) * spec.cell_size
        cy = spec.origin[1] + (jj + 0.5) * spec.cell_size
        for _, (x0, y0, x1, y1) in self.rooms:
            inside = (cx > x0) & (cx < x1) & (cy > y0) & (cy < y1)
            masks.append(np.argwhere(inside))
        return masks

    def to_json(self) -> str:
        return json.dumps(
            {
                "cell_size": self.cell_size,
                "wall_height": self.wall_height,
                "rooms": [
                    {"label": label, "rect": list(rect)} for label, rect in self.rooms
                ],
                "objects": [
                    {
                        "room": o.room_index,
                        "category": o.category,
                        "box": o.box.to_dict(),
                    }
                    for o in self.objects
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SceneGroundTruth":
        doc = json.loads(text)
        return cls(
            rooms=tuple(
                (r["label"], tuple(r["rect"])) for r in doc["rooms"]
            ),
            objects=tuple(
                GroundTruthObject(int(o["room"]), o["category"], Box3.from_dict(o["box"]))
                for o in doc["objects"]
            ),
            wall_height=float(doc["wall_height"]),
            cell_size=float(doc["cell_size"]),
        )


@dataclass(frozen=True)
class ApartmentSpec:
    """2 x 2 room apartment with doors between adjacent rooms."""

    labels: tuple[str, str, str, str] = DEFAULT_ROOM_LABELS
    outer: tuple[float, float] = (9.6, 7.6)
    door_width: float = 0.9
    seed: int = 0
    objects: dict | None = None  # label -> ((category, (dx, dy)), ...)

    def room_objects(self, label: str):
        table = self.objects if self.objects is not None else DEFAULT_ROOM_OBJECTS
        return table.get(label, ())


def _stratified_wall(rng, x0, y0, x1, y1, height, pts_per_cell=WALL_PTS_PER_CELL):
    """Sample a wall slab with a fixed point count per plan cell, so the wall
    has no density holes at grid resolution."""
    nx = max(1, int(round((x1 - x0) / CELL)))
    ny = max(1, int(round((y1 - y0) / CELL)))
    total = nx * ny * pts_per_cell
    gx = rng.integers(0, nx, total)
    gy = rng.integers(0, ny, total)
    xs = x0 + (gx + rng.uniform(0, 1, total)) * (x1 - x0) / nx
    ys = y0 + (gy + rng.uniform(0, 1, total)) * (y1 - y0) / ny
    # one guaranteed point per cell keeps occupancy airtight
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    xs_core = x0 + (ci.ravel() + 0.5) * (x1 - x0) / nx
    ys_core = y0 + (cj.ravel() + 0.5) * (y1 - y0) / ny
    xs = np.concatenate([xs, xs_core])
    ys = np.concatenate([ys, ys_core])
    zs = rng.uniform(0, height, len(xs))
    return np.column_stack([xs, ys, zs])


def _sheet(rng, x0, y0, x1, y1, z, density=FLOOR_PTS_PER_CELL):
    area_cells = (x1 - x0) * (y1 - y0) / (CELL * CELL)
    n = max(1, int(round(area_cells * density)))
    return np.column_stack(
        [rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), np.full(n, z)]
    )


def _white(n):
    return np.full((n, 3), 255, dtype=np.uint8)





def generate_apartment(spec: ApartmentSpec | None = None) -> tuple[PointCloud, SceneGroundTruth]:
    """Build the apartment cloud and its ground truth."""
    spec = spec or ApartmentSpec()
    rng = np.random.default_rng(derive_seed("apartment", spec.seed))
    ox, oy = spec.outer
    t = WALL_THICKNESS
    mx, my = ox / 2.0, oy / 2.0  # interior wall center lines
    door = spec.door_width

    rooms = [
        (t, t, mx - t / 2, my - t / 2),
        (mx + t / 2, t, ox - t, my - t / 2),
        (t, my + t / 2, mx - t / 2, oy - t),
        (mx + t / 2, my + t / 2, ox - t, oy - t),
    ]

    # wall plan: outer ring plus interior partitions with door gaps
    def door_span(lo, hi, at):
        return (at - door / 2, at + door / 2)

    v_door_low = door_span(0, 0, (t + my - t / 2) / 2)  # between rooms 0 and 1
    v_door_high = door_span(0, 0, (my + t / 2 + oy - t) / 2)  # rooms 2 and 3
    h_door_left = door_span(0, 0, (t + mx - t / 2) / 2)  # rooms 0 and 2
    h_door_right = door_span(0, 0, (mx + t / 2 + ox - t) / 2)  # rooms 1 and 3

    wall_rects = [
        (0, 0, ox, t),
        (0, oy - t, ox, oy),
        (0, t, t, oy - t),
        (ox - t, t, ox, oy - t),
        # vertical interior wall (two pieces per door gap)
        (mx - t / 2, t, mx + t / 2, v_door_low[0]),
        (mx - t / 2, v_door_low[1], mx + t / 2, my - t / 2),
        (mx - t / 2, my + t / 2, mx + t / 2, v_door_high[0]),
        (mx - t / 2, v_door_high[1], mx + t / 2, oy - t),
        # horizontal interior wall
        (t, my - t / 2, h_door_left[0], my + t / 2),
        (h_door_left[1], my - t / 2, mx - t / 2, my + t / 2),
        (mx + t / 2, my - t / 2, h_door_right[0], my + t / 2),
        (h_door_right[1], my - t / 2, ox - t, my + t / 2),
    ]

    parts = []
    colors = []
    for x0, y0, x1, y1 in wall_rects:
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            continue
        pts = _stratified_wall(rng, x0, y0, x1, y1, WALL_HEIGHT)
        parts.append(pts)
        colors.append(_white(len(pts)))

    gt_objects = []
    for idx, ((x0, y0, x1, y1), label) in enumerate(zip(rooms, spec.labels)):
        floor = _sheet(rng, x0, y0, x1, y1, 0.0)
        ceiling = _sheet(rng, x0, y0, x1, y1, WALL_HEIGHT)
        parts += [floor, ceiling]
        colors += [_white(len(floor)), _white(len(ceiling))]

        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        m_pts, m_col = marker_points(
            label, MARKER_POINTS, np.random.default_rng(derive_seed("marker", spec.seed, idx))
        )
        parts.append(m_pts + np.array([cx, cy, EYE_HEIGHT]))
        colors.append(m_col)

        for k, (category, (dx, dy)) in enumerate(spec.room_objects(label)):
            obj_rng = np.random.default_rng(derive_seed("object", spec.seed, idx, k))
            shape = object_shape_points(category, OBJECT_POINTS, obj_rng)
            yaw = float(obj_rng.uniform(-0.25, 0.25))  # bounded so footprints stay placeable
            rot = np.array(
                [
                    [np.cos(yaw), -np.sin(yaw), 0.0],
                    [np.sin(yaw), np.cos(yaw), 0.0],
                    [0.0, 0.0, 1.0],
                ]
            )
            placed = shape @ rot.T + np.array([cx + dx, cy + dy, 0.0])
            # rotation can stack two capped cells into one world cell
            placed = cap_plan_density(placed, obj_rng, cap=int(PLAN_DENSITY_CAP * 1.3))
            _check_clearances(placed, (cx, cy), (x0, y0, x1, y1), category)
            parts.append(placed)
            colors.append(_white(len(placed)))
            lo, hi = placed.min(axis=0), placed.max(axis=0)
            gt_objects.append(
                GroundTruthObject(
                    idx,
                    category,
                    Box3(tuple((lo + hi) / 2.0), tuple(np.maximum(hi - lo, 0.02))),
                )
            )

    cloud = PointCloud(np.vstack(parts), np.vstack(colors))
    gt = SceneGroundTruth(
        rooms=tuple((label, rect) for rect, label in zip(rooms, spec.labels)),
        objects=tuple(gt_objects),
    )
    return cloud, gt


def _check_clearances(points, room_center, room_rect, category):
    lo, hi = points.min(axis=0), points.max(axis=0)
    x0, y0, x1, y1 = room_rect
    if lo[0] < x0 + 0.2 or lo[1] < y0 + 0.2 or hi[0] > x1 - 0.2 or hi[1] > y1 - 0.2:
        raise ValueError(f"{category} does not fit its room with wall clearance")
    # nearest approach of the object's footprint to the marker cone footprint
    nearest = np.hypot(
        np.clip(room_center[0] - hi[0], 0, None) + np.clip(lo[0] - room_center[0], 0, None),
        np.clip(room_center[1] - hi[1], 0, None) + np.clip(lo[1] - room_center[1], 0, None),
    )
    if nearest < 0.4 + 0.25:
        raise ValueError(f"{category} sits too close to the room marker")


def duplicate_label_spec(seed: int = 0) -> ApartmentSpec:
    """Two rooms share the 'classroom' label: the fixture for ambiguous
    room queries."""
    return ApartmentSpec(labels=("classroom", "hallway", "classroom", "office"), seed=seed)


def synth_room(
    label: str,
    size: tuple[float, float] = (3.6, 3.2),
    seed: int = 0,
    num_marker_points: int = MARKER_POINTS,
) -> PointCloud:
    """Single labeled room (floor, ceiling, marker cone) for classification
    tests; no walls are needed since snapshots render the room cloud only."""
    rng = np.random.default_rng(derive_seed("room", label, seed))
    lx, ly = size
    floor = _sheet(rng, 0, 0, lx, ly, 0.0, density=1.0)
    ceiling = _sheet(rng, 0, 0, lx, ly, WALL_HEIGHT, density=1.0)
    m_pts, m_col = marker_points(label, num_marker_points, rng)
    marker = m_pts + np.array([lx / 2.0, ly / 2.0, EYE_HEIGHT])
    pts = np.vstack([floor, ceiling, marker])
    colors = np.vstack([_white(len(floor)), _white(len(ceiling)), m_col])
    return PointCloud(pts, colors)
