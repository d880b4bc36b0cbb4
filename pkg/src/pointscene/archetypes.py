"""Canonical geometric signatures for the built-in test vocabulary.

Room types are signaled by a banded marker cone the synthetic scenes place
at the room center; each type owns a 4-band light/dark code. Object types
own canonical surface point sets. The stub embedding backend embeds these
canonical forms for the matching text, so planted geometry and its label
land on the same side of a cosine comparison by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .snap import SnapshotImage
from .util import derive_seed

# Top-to-bottom band codes. All codewords have weight 2 and pairwise Hamming
# distance >= 2, so no pattern is a near-miss of another.
ROOM_BAND_CODES: dict[str, tuple[int, int, int, int]] = {
    "kitchen": (0, 0, 1, 1),
    "bathroom": (0, 1, 0, 1),
    "bedroom": (0, 1, 1, 0),
    "office": (1, 0, 0, 1),
    "hallway": (1, 0, 1, 0),
    "classroom": (1, 1, 0, 0),
}

BAND_LEVELS = {0: 40, 1: 170}  # gray levels against a white background

# Marker cone: banded, point-up, centered vertically on the camera eye line.
# A cone's footprint ring moves with height, so no grid cell sees it across
# many z-slices and the border vote never mistakes it for a wall.
MARKER_R_BOTTOM = 0.4
MARKER_R_TOP = 0.2
MARKER_HALF_HEIGHT = 0.7
_CANONICAL_DISTANCE = 1.9  # assumed camera-to-marker distance for the canonical view
_CANONICAL_VFOV = 1.047


def _marker_radius_at(z_rel: np.ndarray) -> np.ndarray:
    """Cone radius as a function of height relative to the marker center."""
    t = (MARKER_HALF_HEIGHT - z_rel) / (2 * MARKER_HALF_HEIGHT)  # 0 top, 1 bottom
    return MARKER_R_TOP + (MARKER_R_BOTTOM - MARKER_R_TOP) * t


def _marker_band(z_rel: np.ndarray) -> np.ndarray:
    """Band index 0 (top) .. 3 (bottom) for heights relative to the center."""
    band = ((MARKER_HALF_HEIGHT - np.asarray(z_rel)) / (MARKER_HALF_HEIGHT / 2.0)).astype(np.int64)
    return np.clip(band, 0, 3)


def canonical_room_image(label: str, width: int = 336, height: int = 336) -> SnapshotImage:
    """Idealized snapshot of a room of the given type: white background with
    the type's banded marker cone at the image center, drawn at the size a
    mid-ring camera would see it."""
    code = ROOM_BAND_CODES[label]
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    cx, cy = width / 2.0, height / 2.0
    focal = (height / 2.0) / math.tan(_CANONICAL_VFOV / 2.0)
    scale = focal / _CANONICAL_DISTANCE
    yy, xx = np.mgrid[0:height, 0:width]
    z_rel = (cy - yy) / scale  # meters above the marker center
    inside = np.abs(z_rel) <= MARKER_HALF_HEIGHT
    half_w = _marker_radius_at(np.clip(z_rel, -MARKER_HALF_HEIGHT, MARKER_HALF_HEIGHT)) * scale
    silhouette = inside & (np.abs(xx - cx) <= half_w)
    band = _marker_band(z_rel)
    levels = np.array([BAND_LEVELS[bit] for bit in code], dtype=np.uint8)
    img[silhouette] = levels[band[silhouette]][:, None]
    return SnapshotImage(width, height, img)


def marker_points(label: str, num_points: int, rng: np.random.Generator):
    """Banded marker cone centered at the origin: (points, colors).

    Points are uniform over the lateral surface (height sampled with density
    proportional to radius), so the rendered silhouette has even coverage.
    Band order runs top (+z) to bottom, matching canonical_room_image.
    """
    code = ROOM_BAND_CODES[label]
    theta = rng.uniform(0, 2 * np.pi, num_points)
    # inverse-CDF sampling of height with density proportional to radius
    u = rng.uniform(0.0, 1.0, num_points)
    r_b, r_t, h = MARKER_R_BOTTOM, MARKER_R_TOP, 2 * MARKER_HALF_HEIGHT
    t = (r_b - np.sqrt(r_b**2 - (r_b**2 - r_t**2) * u)) / (r_b - r_t)  # 0 bottom, 1 top
    z = t * h - MARKER_HALF_HEIGHT
    r = _marker_radius_at(z)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    band = _marker_band(z)
    levels = np.array([BAND_LEVELS[b] for b in code], dtype=np.uint8)
    colors = np.repeat(levels[band][:, None], 3, axis=1)
    return pts, colors


# --------------------------------------------------------------- object shapes


def _sample_box_surface(rng, sx, sy, sz, n):
    """Uniform points on the surface of an axis-aligned box resting on z=0."""
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, n)
    v = rng.uniform(-0.5, 0.5, n)
    pts = np.zeros((n, 3))
    for f in range(6):
        m = face == f
        axis = f // 2
        sign = 0.5 if f % 2 == 0 else -0.5
        rest = [a for a in range(3) if a != axis]
        pts[m, axis] = sign
        pts[m, rest[0]] = u[m]
        pts[m, rest[1]] = v[m]
    pts *= np.array([sx, sy, sz])
    pts[:, 2] += sz / 2.0
    return pts


def _sample_cylinder(rng, radius, height, n):
    """Uniform points on the lateral surface of a z-axis cylinder on z=0."""
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(0, height, n)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])


def _shape_pole(rng, n):
    return _sample_cylinder(rng, 0.03, 1.6, n)


def _shape_slab(rng, n):
    return _sample_box_surface(rng, 1.0, 0.8, 0.06, n)


def _shape_box(rng, n):
    return _sample_box_surface(rng, 0.55, 0.55, 0.28, n)


def _shape_water_station(rng, n):
    # a resting tank sphere: no thin columns for the plan cap to gut and a
    # negligible floor-shave loss, so crops keep the canonical silhouette
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return 0.42 * u + np.array([0.0, 0.0, 0.42])


def _shape_table(rng, n):
    # low table with chunky legs: thin tall legs do not survive the plan
    # density cap at clustering-grade density
    n_top = int(n * 0.7)
    top = _sample_box_surface(rng, 1.2, 0.7, 0.05, n_top)
    top[:, 2] += 0.40
    legs = _sample_box_surface(rng, 0.1, 0.1, 0.40, n - n_top)
    corner = rng.integers(0, 4, n - n_top)
    legs[:, 0] += np.where(corner % 2 == 0, -0.52, 0.52)
    legs[:, 1] += np.where(corner < 2, -0.27, 0.27)
    return np.vstack([top, legs])


def _shape_chair(rng, n):
    n_seat = int(n * 0.6)
    seat = _sample_box_surface(rng, 0.45, 0.45, 0.05, n_seat)
    seat[:, 2] += 0.42
    back = _sample_box_surface(rng, 0.45, 0.05, 0.48, n - n_seat)
    back[:, 2] += 0.47
    back[:, 1] -= 0.20
    return np.vstack([seat, back])


def _shape_cone(rng, n):
    # same geometry as the room marker, so detected markers label as "cone"
    pts, _ = marker_points(next(iter(ROOM_BAND_CODES)), n, rng)
    pts = pts.copy()
    pts[:, 2] += MARKER_HALF_HEIGHT
    return pts


OBJECT_SHAPES = {
    "pole": _shape_pole,
    "slab": _shape_slab,
    "box": _shape_box,
    "water station": _shape_water_station,
    "table": _shape_table,
    "chair": _shape_chair,
    "cone": _shape_cone,
}


PLAN_DENSITY_CAP = 18  # max points per 0.05 m xy cell
_PLAN_CELL = 0.05


def cap_plan_density(points: np.ndarray, rng: np.random.Generator, cap: int = PLAN_DENSITY_CAP) -> np.ndarray:
    """Limit points per xy cell. Vertical sheets otherwise pile up wall-level
    column densities; sampling shapes with the cap applied keeps planted
    instances and canonical embeddings drawn from one distribution."""
    cells = np.floor(points[:, :2] / _PLAN_CELL).astype(np.int64)
    order = np.lexsort((cells[:, 1], cells[:, 0]))
    keep = np.zeros(len(points), dtype=bool)
    start = 0
    while start < len(order):
        end = start
        while end < len(order) and np.array_equal(cells[order[end]], cells[order[start]]):
            end += 1
        bucket = order[start:end]
        if len(bucket) > cap:
            bucket = rng.choice(bucket, size=cap, replace=False)
        keep[bucket] = True
        start = end
    return points[keep]


CAP_EXEMPT_SHAPES = {"pole"}  # a thin rod has no bulk to thin


def object_shape_points(label: str, num_points: int, rng: np.random.Generator) -> np.ndarray:
    """Sample the named object shape, resting on z=0 at the origin, with the
    plan-density cap applied."""
    pts = OBJECT_SHAPES[label](rng, num_points)
    if label in CAP_EXEMPT_SHAPES:
        return pts
    return cap_plan_density(pts, rng)


def canonical_object_points(label: str, num_points: int = 512) -> np.ndarray:
    """Fixed-seed reference sample of a shape; the stub backend embeds this
    for the matching category text."""
    rng = np.random.default_rng(derive_seed("archetype", label))
    return object_shape_points(label, num_points, rng)
